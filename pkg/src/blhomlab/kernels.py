"""Half-plane Green and Poisson kernels of the Laplacian and their checks.

For the boundary ``{y . n = a}`` write ``h(y) = y . n - a`` for the height.
The kernels are

* Poisson: ``P(y, yb) = h(y) / (pi |y - yb|^2)``,
* Green (method of images):
  ``G(y, yt) = (1/4pi) log(1 + 4 h(y) h(yt) / |y - yt|^2)``.

Nothing below assumes these formulas are right: the checks measure boundary
mass, harmonicity and the Green identity numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .geometry import NormalFrame

BOUNDARY_TOL = 1e-10
GAUSS_NODES = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GAUSS_NODES)


class KernelInputError(ValueError):
    pass


@dataclass(frozen=True)
class HalfPlaneKernel:
    frame: NormalFrame
    kind: str = "poisson"
    coefficient: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self):
        if self.kind not in ("poisson", "green"):
            raise KernelInputError(f"kind must be 'poisson' or 'green', got {self.kind!r}")
        if not np.allclose(self.coefficient, np.eye(2), rtol=0, atol=0):
            raise KernelInputError("only the identity coefficient is supported")
        if self.frame.d != 2:
            raise KernelInputError("kernels are two-dimensional")


def height(frame: NormalFrame, y) -> np.ndarray:
    return np.asarray(y, dtype=float) @ frame.n - frame.a


def boundary_point(frame: NormalFrame, s) -> np.ndarray:
    """Boundary points ``N s + a n`` for tangential coordinates ``s``."""
    s = np.asarray(s, dtype=float)
    return s[..., None] * frame.N[:, 0] + frame.a * frame.n


def _poisson(frame: NormalFrame, y: np.ndarray, yb: np.ndarray) -> np.ndarray:
    d = y - yb
    return height(frame, y) / (math.pi * np.sum(d * d, axis=-1))


def poisson_kernel(kernel: HalfPlaneKernel, y, yb) -> float | np.ndarray:
    """Poisson kernel at interior ``y`` and boundary ``yb`` (broadcasts over leading axes).

    Raises
    ------
    KernelInputError
        If ``y`` is not strictly inside or ``yb`` is off the boundary.
    """
    fr = kernel.frame
    y = np.asarray(y, dtype=float)
    yb = np.asarray(yb, dtype=float)
    if np.any(height(fr, y) <= 0):
        raise KernelInputError("y must lie strictly inside the half-plane")
    if np.any(np.abs(height(fr, yb)) > BOUNDARY_TOL):
        raise KernelInputError("yb must lie on the boundary")
    out = _poisson(fr, y, yb)
    return float(out) if np.ndim(out) == 0 else out


def poisson_gradient(frame: NormalFrame, y, yb) -> np.ndarray:
    """``grad_y P(y, yb)``."""
    y = np.asarray(y, dtype=float)
    d = y - np.asarray(yb, dtype=float)
    r2 = np.sum(d * d, axis=-1)[..., None]
    h = height(frame, y)[..., None]
    return (frame.n / r2 - 2.0 * h * d / r2**2) / math.pi


def green_kernel(frame: NormalFrame, y, yt) -> np.ndarray:
    """Image-method Green function of ``-Laplacian`` in the half-plane."""
    y = np.asarray(y, dtype=float)
    yt = np.asarray(yt, dtype=float)
    d = y - yt
    r2 = np.sum(d * d, axis=-1)
    return np.log1p(4.0 * height(frame, y) * height(frame, yt) / r2) / (4.0 * math.pi)


def scaled_poisson(frame: NormalFrame, eps: float, x, xb) -> np.ndarray:
    """Poisson kernel of the dilated half-plane ``{x . n = eps a}`` computed directly."""
    return _poisson(frame.with_offset(eps * frame.a), np.asarray(x, float), np.asarray(xb, float))


# ---------------------------------------------------------------------------
# representation


def _window(x: np.ndarray, W: float) -> np.ndarray:
    """Smooth window: 1 on ``|x| <= W/2``, 0 beyond ``W``, C-infinity in between."""
    u = np.clip((np.abs(x) - W / 2) / (W / 2), 0.0, 1.0)
    out = np.ones_like(u)
    mid = (u > 0) & (u < 1)
    a = np.exp(-1.0 / u[mid])
    b = np.exp(-1.0 / (1.0 - u[mid]))
    out[mid] = b / (a + b)
    out[u >= 1] = 0.0
    return out


def _panel_nodes(lo: float, hi: float, panels: int) -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return x, w


@dataclass
class PoissonSolveResult:
    values: np.ndarray
    plain: np.ndarray  # hard-truncated quadrature without the window correction
    omitted_mass: np.ndarray  # exact kernel mass outside the quadrature interval
    width_ok: bool
    nodes: int


def poisson_solve(v0: Callable[[np.ndarray], np.ndarray], frame: NormalFrame, points: Sequence,
                  quadrature: tuple[float, int] | None = None) -> PoissonSolveResult:
    """``w(y) = int_boundary P(y, yb) v0(yb) dyb`` at interior points.

    ``quadrature = (W, nodes)``: the boundary is integrated over tangential
    coordinates ``[s0 - W, s0 + W]`` around each point with composite
    16-point Gauss-Legendre panels of width at most ``min(1, h)/4``, using
    at least ``nodes`` nodes. The integrand is multiplied by a smooth window
    and the missing kernel mass is filled with the windowed boundary mean, so
    the error decays faster than any power of ``W`` for quasiperiodic data.
    ``width_ok`` is False when ``W < 50 max h``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    hs = height(frame, pts)
    if np.any(hs <= 0):
        raise KernelInputError("all points must lie strictly inside the half-plane")
    W, nodes = quadrature if quadrature is not None else (50.0 * float(hs.max()), 0)
    W = float(W)
    width_ok = W >= 50.0 * float(hs.max()) * (1 - 1e-12)
    N = frame.N[:, 0]
    vals, plain, omitted = [], [], []
    used = 0
    for y, h in zip(pts, hs):
        s0 = float(y @ N)
        panels = max(math.ceil(2 * W / (min(1.0, h) / 4)), math.ceil(nodes / GAUSS_NODES))
        x, w = _panel_nodes(-W, W, panels)
        used = max(used, x.size)
        yb = boundary_point(frame, s0 + x)
        P = _poisson(frame, y, yb)
        v = np.asarray(v0(yb), dtype=float)
        psi = _window(x, W)
        mass_w = float(np.sum(w * P * psi))
        mean_w = float(np.sum(w * psi * v) / np.sum(w * psi))
        vals.append(float(np.sum(w * P * psi * v)) + mean_w * (1.0 - mass_w))
        plain.append(float(np.sum(w * P * v)))
        omitted.append(2.0 / math.pi * math.atan(h / W))
    return PoissonSolveResult(np.array(vals), np.array(plain), np.array(omitted), bool(width_ok), used)


# ---------------------------------------------------------------------------
# bound checks


@dataclass
class KernelBoundReport:
    bound_constant: float  # sup P |y - yb|^2 / h
    gradient_constant: float  # sup |grad P| min(r^2, r^3 / h)
    green_constant: float  # sup G r^2 / (h ht)
    min_value: float
    samples: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def default_samples(frame: NormalFrame, heights=None, offsets=None) -> tuple[np.ndarray, np.ndarray]:
    """Pairs (interior point, boundary point) on a height x offset grid."""
    hs = np.geomspace(1e-3, 1e3, 25) if heights is None else np.asarray(heights, float)
    ds = np.concatenate([-np.geomspace(1e-3, 1e3, 25), [0.0], np.geomspace(1e-3, 1e3, 25)]) if offsets is None else np.asarray(offsets, float)
    H, D = np.meshgrid(hs, ds, indexing="ij")
    N = frame.N[:, 0]
    yb = boundary_point(frame, np.zeros(H.size) + 0.37)
    y = yb + D.reshape(-1, 1) * N + H.reshape(-1, 1) * frame.n
    return y, yb


def kernel_bound_check(frame: NormalFrame, samples: tuple[np.ndarray, np.ndarray] | None = None) -> KernelBoundReport:
    """Empirical constants of the Poisson and Green kernel bounds."""
    y, yb = default_samples(frame) if samples is None else (np.asarray(samples[0], float), np.asarray(samples[1], float))
    h = height(frame, y)
    d = y - yb
    r2 = np.sum(d * d, axis=1)
    r = np.sqrt(r2)
    P = _poisson(frame, y, yb)
    ratio = P * r2 / h
    g = np.linalg.norm(poisson_gradient(frame, y, yb), axis=1)
    gc = g * np.minimum(r2, r2 * r / h)
    # Green bound with the interior second point y_t = y reflected to height h/2 + offset
    yt = yb + 0.5 * h[:, None] * frame.n + 0.3 * frame.N[:, 0]
    ht = height(frame, yt)
    dd = y - yt
    rr2 = np.sum(dd * dd, axis=1)
    G = green_kernel(frame, y, yt)
    gcst = G * rr2 / (h * ht)
    return KernelBoundReport(float(ratio.max()), float(gc.max()), float(gcst.max()), float(P.min()), int(len(h)))


def boundary_mass(frame: NormalFrame, y) -> float:
    """``int P(y, .)`` over the whole boundary by adaptive quadrature."""
    y = np.asarray(y, dtype=float)
    N = frame.N[:, 0]
    s0 = float(y @ N)
    h = float(height(frame, y))

    def integrand(s):
        return float(_poisson(frame, y, boundary_point(frame, s0 + s)))

    parts = [(-math.inf, -h), (-h, 0.0), (0.0, h), (h, math.inf)]
    return float(sum(quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)[0] for lo, hi in parts))


def harmonicity_residual(frame: NormalFrame, y, yb, step: float = 1e-3) -> float:
    """Five-point Laplacian of ``y -> P(y, yb)``."""
    y = np.asarray(y, dtype=float)
    e1 = np.array([step, 0.0])
    e2 = np.array([0.0, step])
    stencil = np.array([y + e1, y - e1, y + e2, y - e2, y])
    v = _poisson(frame, stencil, np.asarray(yb, float))
    return float((v[0] + v[1] + v[2] + v[3] - 4 * v[4]) / step**2)


def scaling_defect(frame: NormalFrame, eps_list=(0.5, 0.125, 1 / 3, 1e-3), samples=None) -> float:
    """Largest relative gap between ``P^eps(x, xb)`` and ``P(x/eps, xb/eps)/eps``."""
    y, yb = default_samples(frame, np.geomspace(1e-2, 1e2, 7), np.linspace(-5, 5, 11)) if samples is None else samples
    worst = 0.0
    for eps in eps_list:
        x = eps * y
        xb = eps * yb
        direct = scaled_poisson(frame, eps, x, xb)
        via = _poisson(frame, x / eps, xb / eps) / eps
        worst = max(worst, float(np.max(np.abs(direct - via) / np.abs(via))))
    return worst


# ---------------------------------------------------------------------------
# Green identity


def radial_bump(radius: float = 0.5) -> Callable[[np.ndarray], np.ndarray]:
    """``f(rho) = exp(-1 / (1 - (rho/radius)^2))`` inside the disc."""

    def f(rho):
        rho = np.asarray(rho, dtype=float)
        q = (rho / radius) ** 2
        out = np.zeros_like(q)
        m = q < 1
        out[m] = np.exp(-1.0 / (1.0 - q[m]))
        return out

    return f


def _free_potential(f, radius: float, r: float) -> float:
    """``-(1/2pi) int log|y-x| f(|x|) dx`` for ``|y| = r`` via the shell theorem."""
    g = lambda rho: float(f(rho)) * rho  # noqa: E731
    if r >= radius:
        inner = quad(g, 0.0, radius, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
        return -math.log(r) * inner
    inner = quad(g, 0.0, r, epsabs=1e-15, epsrel=1e-13, limit=200)[0] if r > 0 else 0.0
    outer = quad(lambda rho: g(rho) * math.log(rho), r, radius, epsabs=1e-15, epsrel=1e-13, limit=200)[0]
    return -(math.log(r) * inner if r > 0 else 0.0) - outer


@dataclass
class GreenIdentityReport:
    boundary_max: float  # max |u| at boundary samples
    laplacian_residual: float  # |-Laplacian u - f| at the bump centre
    cross_route_gap: float  # max gap between the radial and polar quadratures
    green_bound_constant: float
    values: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def green_potential(frame: NormalFrame, centre, radius: float, f, y) -> float:
    """``u(y) = int G(y, yt) f(|yt - c|) dyt`` by the shell theorem and images."""
    y = np.asarray(y, dtype=float)
    c = np.asarray(centre, dtype=float)
    c_img = c - 2.0 * height(frame, c) * frame.n
    return _free_potential(f, radius, float(np.linalg.norm(y - c))) - _free_potential(
        f, radius, float(np.linalg.norm(y - c_img))
    )


def green_potential_polar(frame: NormalFrame, centre, radius: float, f, y, n_rad: int = 400,
                          n_ang: int = 256) -> float:
    """Same potential by polar quadrature centred at ``y`` (``rho = u^2``)."""
    y = np.asarray(y, dtype=float)
    c = np.asarray(centre, dtype=float)
    dist = float(np.linalg.norm(y - c))
    lo = max(0.0, dist - radius)
    hi = dist + radius
    total = 0.0
    ang = np.arange(n_ang) * (2 * math.pi / n_ang)
    dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # u = sqrt(rho); the integrand rho G f has a rho log rho singularity at y
    ux, uw = _panel_nodes(math.sqrt(lo), math.sqrt(hi), max(1, n_rad // GAUSS_NODES))
    for u, w in zip(ux, uw):
        rho = u * u
        pts = y + rho * dirs
        fv = f(np.linalg.norm(pts - c, axis=1))
        if not np.any(fv):
            continue
        G = green_kernel(frame, y, pts)
        total += w * 2 * u * rho * float(np.sum(G * fv)) * (2 * math.pi / n_ang)
    return total


def greens_identity_check(frame: NormalFrame, radius: float = 0.5, centre_height: float = 2.0,
                          samples: Sequence | None = None, step: float = 2e-3) -> GreenIdentityReport:
    """Check ``u = int G f`` vanishes on the boundary and ``-Laplacian u = f`` at the bump centre."""
    f = radial_bump(radius)
    N = frame.N[:, 0]
    c = 0.25 * N + (frame.a + centre_height) * frame.n
    bvals = [green_potential(frame, c, radius, f, boundary_point(frame, s)) for s in (-3.0, -0.5, 0.0, 0.25, 1.7, 10.0)]
    e1 = np.array([step, 0.0])
    e2 = np.array([0.0, step])
    u = [green_potential(frame, c, radius, f, p) for p in (c + e1, c - e1, c + e2, c - e2, c)]
    lap = (u[0] + u[1] + u[2] + u[3] - 4 * u[4]) / step**2
    resid = abs(-lap - float(f(0.0)))
    if samples is None:
        samples = [c + 0.3 * N, c + 1.0 * frame.n, c + 2.0 * N - 1.0 * frame.n]
    gaps, vals = [], []
    for p in samples:
        a = green_potential(frame, c, radius, f, p)
        b = green_potential_polar(frame, c, radius, f, p)
        vals.append(a)
        gaps.append(abs(a - b))
    rep = kernel_bound_check(frame)
    return GreenIdentityReport(float(max(abs(v) for v in bvals)), float(resid), float(max(gaps)),
                               rep.green_constant, vals)
