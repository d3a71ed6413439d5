"""Periodic cell problems on the unit torus and the homogenized tensor.

All fields live on the uniform grid ``y_i = i/n`` of ``[0,1)^2`` and are
differentiated spectrally. Arrays of tensor fields put the tensor indices
first: ``A[alpha, beta, i1, i2]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

TWO_PI = 2.0 * math.pi
DEFAULT_TOL = 1e-10
MAX_ITER = 10_000

CoefficientFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class CellSolverError(RuntimeError):
    """Iterative cell solve did not reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True, eq=False)
class PeriodicCoefficients:
    """Grid samples of a 1-periodic 2x2 coefficient field.

    Attributes
    ----------
    samples : ndarray, shape (2, 2, n, n)
        ``A^{alpha beta}`` at the grid nodes.
    lam : float
        Ellipticity constant, checked on the test vectors e1, e2, e1+e2.
    func : callable or None
        ``func(y1, y2) -> (2, 2, ...)`` for evaluation off the grid.
    name : str
    """

    samples: np.ndarray
    lam: float
    func: CoefficientFunction | None = None
    name: str = ""

    @property
    def grid(self) -> int:
        return int(self.samples.shape[-1])

    @property
    def d(self) -> int:
        return 2

    @property
    def is_symmetric(self) -> bool:
        return bool(np.allclose(self.samples[0, 1], self.samples[1, 0], rtol=0, atol=1e-14))

    @property
    def is_constant(self) -> bool:
        flat = self.samples.reshape(2, 2, -1)
        return bool(np.all(np.ptp(flat, axis=2) <= 1e-14))

    def evaluate(self, y1, y2) -> np.ndarray:
        """Coefficient matrix at arbitrary points, shape ``(2, 2) + y1.shape``."""
        if self.func is None:
            raise ValueError("coefficients were given as samples only")
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        out = np.asarray(self.func(y1, y2), dtype=float)
        return np.broadcast_to(out, (2, 2) + np.broadcast(y1, y2).shape)

    def transposed(self) -> "PeriodicCoefficients":
        f = self.func
        tf = None if f is None else (lambda y1, y2: np.swapaxes(np.asarray(f(y1, y2)), 0, 1))
        return PeriodicCoefficients(np.ascontiguousarray(np.swapaxes(self.samples, 0, 1)), self.lam, tf, self.name + "^T")

    def resampled(self, grid: int) -> "PeriodicCoefficients":
        if self.func is None:
            raise ValueError("coefficients were given as samples only")
        return from_function(self.func, grid, self.name, self.lam)


def _ellipticity(samples: np.ndarray) -> tuple[float, float]:
    """Min and max of ``z.A z/|z|^2`` over nodes and z in {e1, e2, e1+e2}."""
    q1 = samples[0, 0]
    q2 = samples[1, 1]
    q3 = (samples[0, 0] + samples[0, 1] + samples[1, 0] + samples[1, 1]) / 2.0
    qs = np.stack([q1, q2, q3])
    return float(qs.min()), float(qs.max())


def from_samples(samples: np.ndarray, name: str = "", lam: float | None = None,
                 func: CoefficientFunction | None = None) -> PeriodicCoefficients:
    """Validate grid samples of shape ``(2, 2, n, n)``."""
    s = np.array(samples, dtype=float)
    if s.ndim != 4 or s.shape[:2] != (2, 2) or s.shape[2] != s.shape[3]:
        raise ValueError(f"samples must have shape (2, 2, n, n), got {s.shape}")
    n = s.shape[-1]
    if n < 2 or n & (n - 1):
        raise ValueError(f"grid must be a power of two, got {n}")
    if not np.all(np.isfinite(s)):
        raise ValueError("coefficient samples are not finite")
    qmin, qmax = _ellipticity(s)
    if qmin <= 0:
        raise ValueError("coefficients are not elliptic at the sampled nodes")
    emp = min(qmin, 1.0 / qmax)
    if lam is None:
        lam = emp
    elif not (0 < lam <= emp * (1 + 1e-12)):
        raise ValueError(f"ellipticity constant {lam} is not satisfied (sampled bound {emp:.6g})")
    s.setflags(write=False)
    return PeriodicCoefficients(s, float(lam), func, name)


def grid_points(n: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.arange(n) / n
    return np.meshgrid(y, y, indexing="ij")


def from_function(func: CoefficientFunction, grid: int, name: str = "",
                  lam: float | None = None) -> PeriodicCoefficients:
    """Sample ``func(y1, y2) -> (2, 2, ...)`` on the ``grid x grid`` nodes."""
    y1, y2 = grid_points(grid)
    s = np.broadcast_to(np.asarray(func(y1, y2), dtype=float), (2, 2, grid, grid))
    return from_samples(s, name, lam, func)


def isotropic(a: Callable[[np.ndarray, np.ndarray], np.ndarray], grid: int, name: str = "",
              lam: float | None = None) -> PeriodicCoefficients:
    """``A(y) = a(y) I`` for a scalar field ``a``."""

    def func(y1, y2):
        v = np.asarray(a(y1, y2), dtype=float) * np.ones(np.broadcast(y1, y2).shape)
        z = np.zeros_like(v)
        return np.array([[v, z], [z, v]])

    return from_function(func, grid, name, lam)


def constant(A, grid: int, name: str = "constant") -> PeriodicCoefficients:
    A = np.array(A, dtype=float).reshape(2, 2)

    def func(y1, y2):
        shape = np.broadcast(y1, y2).shape
        return np.broadcast_to(A.reshape(2, 2, *([1] * len(shape))), (2, 2) + shape).copy()

    return from_function(func, grid, name)


def _layered(y1, y2):
    return 2.0 + np.cos(TWO_PI * y1)


def _checker(y1, y2):
    return 2.0 + np.sin(TWO_PI * y1) * np.sin(TWO_PI * y2)


def _aniso(y1, y2):
    y1, y2 = np.broadcast_arrays(np.asarray(y1, float), np.asarray(y2, float))
    a11 = 2.0 + 0.5 * np.cos(TWO_PI * y1) + 0.3 * np.sin(TWO_PI * y2)
    a22 = 1.5 + 0.4 * np.sin(TWO_PI * (y1 + y2))
    a12 = 0.3 * np.cos(TWO_PI * (y1 - 2.0 * y2))
    return np.array([[a11, a12], [a12, a22]])


def _nonsym(y1, y2):
    A = _aniso(y1, y2)
    skew = 0.4 * np.sin(TWO_PI * y2) + 0.2
    A[0, 1] = A[0, 1] + skew
    A[1, 0] = A[1, 0] - skew
    return A


NAMED_COEFFICIENTS = ("identity", "layered", "checker", "aniso", "nonsym")


def named_coefficients(name: str, grid: int = 64) -> PeriodicCoefficients:
    """Built-in coefficient fields.

    ``identity``; ``layered``: ``(2 + cos 2 pi y1) I``; ``checker``:
    ``(2 + sin 2 pi y1 sin 2 pi y2) I``; ``aniso``: a full symmetric
    trigonometric polynomial; ``nonsym``: ``aniso`` plus a skew part.
    """
    if name == "identity":
        return constant(np.eye(2), grid, "identity")
    if name == "layered":
        return isotropic(_layered, grid, "layered")
    if name == "checker":
        return isotropic(_checker, grid, "checker")
    if name == "aniso":
        return from_function(_aniso, grid, "aniso")
    if name == "nonsym":
        return from_function(_nonsym, grid, "nonsym")
    raise ValueError(f"unknown coefficient name {name!r}; expected one of {NAMED_COEFFICIENTS}")


# ---------------------------------------------------------------------------
# spectral helpers


def wavenumbers(n: int) -> np.ndarray:
    """Integer wavenumbers with the Nyquist entry zeroed (for derivatives)."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


class _Spectral:
    def __init__(self, n: int):
        self.n = n
        k = wavenumbers(n)
        self.k1, self.k2 = np.meshgrid(k, k, indexing="ij")
        kf = np.fft.fftfreq(n, d=1.0 / n)
        f1, f2 = np.meshgrid(kf, kf, indexing="ij")
        self.ksq_full = f1**2 + f2**2

    def grad(self, u: np.ndarray) -> np.ndarray:
        uh = np.fft.fft2(u)
        return np.stack([
            np.fft.ifft2(1j * TWO_PI * self.k1 * uh).real,
            np.fft.ifft2(1j * TWO_PI * self.k2 * uh).real,
        ])

    def div(self, F: np.ndarray) -> np.ndarray:
        """``sum_alpha d_alpha F[alpha]`` over the leading index."""
        h = 1j * TWO_PI * (self.k1 * np.fft.fft2(F[0]) + self.k2 * np.fft.fft2(F[1]))
        return np.fft.ifft2(h).real

    def d(self, u: np.ndarray, axis: int) -> np.ndarray:
        k = self.k1 if axis == 0 else self.k2
        return np.fft.ifft2(1j * TWO_PI * k * np.fft.fft2(u)).real

    def hminus1(self, r: np.ndarray) -> float:
        rh = np.fft.fft2(r) / r.size
        w = np.where(self.ksq_full > 0, 1.0 / (4 * math.pi**2 * np.maximum(self.ksq_full, 1)), 1.0)
        return float(math.sqrt(np.sum(np.abs(rh) ** 2 * w)))

    def inverse_laplacian(self, f: np.ndarray) -> np.ndarray:
        """Zero-mean ``u`` with ``Laplacian u = f - mean(f)`` (Nyquist removed)."""
        ksq = self.k1**2 + self.k2**2
        fh = np.fft.fft2(f)
        uh = np.where(ksq > 0, -fh / (4 * math.pi**2 * np.where(ksq > 0, ksq, 1.0)), 0.0)
        return np.fft.ifft2(uh).real


def coefficient_norm(coeffs: PeriodicCoefficients) -> float:
    """``max_y |A(y)|_F``, the scale of the residual tolerance."""
    return float(np.sqrt(np.sum(coeffs.samples**2, axis=(0, 1))).max())


# ---------------------------------------------------------------------------
# solvers


@dataclass
class PeriodicSolve:
    solutions: list[np.ndarray]
    residuals: list[float]
    iterations: list[int]


def _apply(sp: _Spectral, A: np.ndarray, u: np.ndarray) -> np.ndarray:
    g = sp.grad(u)
    flux = np.einsum("abij,bij->aij", A, g)
    return -sp.div(flux)


def solve_periodic(coeffs: PeriodicCoefficients, rhs: list[np.ndarray], tol: float = DEFAULT_TOL,
                   maxiter: int = MAX_ITER) -> PeriodicSolve:
    """Zero-mean solutions of ``-div(A grad u) = f`` for each ``f`` in ``rhs``.

    Uses preconditioned conjugate gradients (symmetric ``A``) or GMRES
    (otherwise), both preconditioned by the inverse of the constant-coefficient
    operator with the mean of ``A``. Convergence is declared when the
    Fourier ``H^{-1}`` norm of the residual is at most ``tol * max|A|_F``.
    """
    n = coeffs.grid
    sp = _Spectral(n)
    A = coeffs.samples
    Abar = A.mean(axis=(2, 3))
    sym = 4 * math.pi**2 * (
        Abar[0, 0] * sp.k1**2 + (Abar[0, 1] + Abar[1, 0]) * sp.k1 * sp.k2 + Abar[1, 1] * sp.k2**2
    )
    inv_sym = np.where(sym > 0, 1.0 / np.where(sym > 0, sym, 1.0), 0.0)

    def prec(r: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(np.fft.fft2(r) * inv_sym).real

    scale = coefficient_norm(coeffs)
    target = tol * scale
    out = PeriodicSolve([], [], [])
    for f in rhs:
        f = np.asarray(f, dtype=float)
        f = f - f.mean()
        fh = np.fft.fft2(f)
        if n % 2 == 0:
            # modes the discrete operator cannot reach
            fh[n // 2, :] = 0.0
            fh[:, n // 2] = 0.0
            f = np.fft.ifft2(fh).real
        if sp.hminus1(f) <= target:
            out.solutions.append(np.zeros_like(f))
            out.residuals.append(sp.hminus1(f))
            out.iterations.append(0)
            continue
        if coeffs.is_symmetric:
            u, res, it = _pcg(lambda v: _apply(sp, A, v), prec, f, sp.hminus1, target, maxiter)
        else:
            u, res, it = _gmres(sp, A, prec, f, target, maxiter)
        u = u - u.mean()
        out.solutions.append(u)
        out.residuals.append(res / scale)
        out.iterations.append(it)
    return out


def _pcg(op, prec, b, norm, target, maxiter):
    x = np.zeros_like(b)
    r = b.copy()
    z = prec(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    res = norm(r)
    for it in range(1, maxiter + 1):
        Ap = op(p)
        alpha = rz / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        res = norm(r)
        if res <= target:
            return x, res, it
        z = prec(r)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CellSolverError(f"conjugate gradient did not converge in {maxiter} iterations", res)


def _gmres(sp, A, prec, f, target, maxiter):
    n = sp.n
    shape = (n * n, n * n)
    op = LinearOperator(shape, matvec=lambda v: _apply(sp, A, v.reshape(n, n)).ravel(), dtype=float)
    M = LinearOperator(shape, matvec=lambda v: prec(v.reshape(n, n)).ravel(), dtype=float)
    x = np.zeros(n * n)
    total = 0
    res = sp.hminus1(f)
    # restart in rounds, checking the H^{-1} residual between rounds
    while total < maxiter:
        x, info = gmres(op, f.ravel(), x0=x, M=M, rtol=1e-14, atol=0.0, restart=50, maxiter=1)
        total += 50
        r = f - _apply(sp, A, x.reshape(n, n))
        res = sp.hminus1(r)
        if res <= target:
            return x.reshape(n, n), res, total
    raise CellSolverError(f"GMRES did not converge in {maxiter} iterations", res)


@dataclass
class CorrectorSolve:
    chi: np.ndarray  # (2, n, n)
    residuals: list[float]
    iterations: list[int]


def corrector_rhs(coeffs: PeriodicCoefficients) -> list[np.ndarray]:
    """``d_alpha A^{alpha beta}`` for beta = 1, 2."""
    sp = _Spectral(coeffs.grid)
    A = coeffs.samples
    return [sp.div(A[:, b]) for b in range(2)]


def solve_corrector(coeffs: PeriodicCoefficients, tol: float = DEFAULT_TOL,
                    maxiter: int = MAX_ITER) -> CorrectorSolve:
    """Zero-mean ``chi^beta`` with ``-div(A grad chi^beta) = d_alpha A^{alpha beta}``."""
    if coeffs.grid < 16:
        raise ValueError("cell problems need at least 16 nodes per axis")
    sol = solve_periodic(coeffs, corrector_rhs(coeffs), tol, maxiter)
    return CorrectorSolve(np.stack(sol.solutions), sol.residuals, sol.iterations)


def homogenized_tensor(coeffs: PeriodicCoefficients, chi: np.ndarray) -> np.ndarray:
    """``A0^{ab} = mean(A^{ab}) + mean(A^{ag} d_g chi^b)``."""
    sp = _Spectral(coeffs.grid)
    A = coeffs.samples
    A0 = np.empty((2, 2))
    for b in range(2):
        g = sp.grad(chi[b])
        for a in range(2):
            A0[a, b] = np.mean(A[a, b] + A[a, 0] * g[0] + A[a, 1] * g[1])
    return A0


def b_tensor(coeffs: PeriodicCoefficients, chi: np.ndarray) -> np.ndarray:
    """``B^{ab} = A^{ab} + A^{ag} d_g chi^b + d_g(A^{ga} chi^b)``."""
    sp = _Spectral(coeffs.grid)
    A = coeffs.samples
    B = np.empty_like(A)
    for b in range(2):
        g = sp.grad(chi[b])
        for a in range(2):
            B[a, b] = A[a, b] + A[a, 0] * g[0] + A[a, 1] * g[1] + sp.div(A[:, a] * chi[b])
    return B


@dataclass
class GammaSolve:
    gamma: np.ndarray  # (2, 2, n, n)
    B: np.ndarray
    residuals: list[float]


def solve_gamma(coeffs: PeriodicCoefficients, chi: np.ndarray, A0: np.ndarray | None = None,
                tol: float = DEFAULT_TOL, maxiter: int = MAX_ITER) -> GammaSolve:
    """Second-order correctors: ``-div(A grad Gamma^{ab}) = B^{ab} - mean(B^{ab})``.

    ``A0`` is accepted for interface symmetry; the source already has zero
    mean, and ``mean(B) = A0`` is checked.
    """
    B = b_tensor(coeffs, chi)
    if A0 is not None:
        gap = np.max(np.abs(B.mean(axis=(2, 3)) - A0))
        if gap > 1e-6 * max(1.0, float(np.max(np.abs(A0)))):
            raise CellSolverError("mean of B differs from A0; corrector not converged", gap)
    rhs = [B[a, b] for a in range(2) for b in range(2)]
    sol = solve_periodic(coeffs, rhs, tol, maxiter)
    gamma = np.stack(sol.solutions).reshape((2, 2) + chi.shape[1:])
    return GammaSolve(gamma, B, sol.residuals)


@dataclass
class FluxPotential:
    phi: np.ndarray  # (2, 2, n, n)
    psi: np.ndarray  # (2, 2, 2, n, n), psi[g, a, b]
    residual: float


def flux_potential(coeffs: PeriodicCoefficients, chi: np.ndarray, A0: np.ndarray | None = None,
                   div_tol: float = 1e-6) -> FluxPotential:
    """Zero-mean flux ``Phi = A(I + grad chi) - A0`` and a skew potential ``Psi``.

    ``Psi^{gab} = d_g f^{ab} - d_a f^{gb}`` with ``Laplacian f^{ab} = Phi^{ab}``,
    so ``Psi`` is antisymmetric in ``(g, a)`` and ``d_g Psi^{gab} = Phi^{ab}``
    whenever ``d_a Phi^{ab} = 0``.

    Raises
    ------
    CellSolverError
        If ``div Phi`` is not small, which means ``chi`` is not converged.
    """
    sp = _Spectral(coeffs.grid)
    A = coeffs.samples
    flux = np.empty_like(A)
    for b in range(2):
        g = sp.grad(chi[b])
        for a in range(2):
            flux[a, b] = A[a, b] + A[a, 0] * g[0] + A[a, 1] * g[1]
    mean = flux.mean(axis=(2, 3)) if A0 is None else np.asarray(A0, dtype=float)
    phi = flux - mean[:, :, None, None]
    scale = coefficient_norm(coeffs)
    div_err = max(sp.hminus1(sp.div(phi[:, b])) for b in range(2)) / scale
    if div_err > div_tol:
        raise CellSolverError("flux has nonzero divergence", div_err)
    f = np.stack([[sp.inverse_laplacian(phi[a, b]) for b in range(2)] for a in range(2)])
    psi = np.empty((2, 2, 2) + chi.shape[1:])
    for g in range(2):
        for a in range(2):
            for b in range(2):
                psi[g, a, b] = sp.d(f[a, b], g) - sp.d(f[g, b], a)
    recon = np.stack([[sp.div(psi[:, a, b]) for b in range(2)] for a in range(2)])
    pn = float(np.linalg.norm(phi))
    residual = float(np.linalg.norm(recon - phi)) / pn if pn > 0 else float(np.linalg.norm(recon))
    return FluxPotential(phi, psi, residual)


@dataclass
class CorrectorSet:
    """All cell-problem outputs on one grid."""

    chi: np.ndarray
    A0: np.ndarray
    gamma: np.ndarray
    B: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    residuals: dict[str, float] = field(default_factory=dict)
    iterations: dict[str, int] = field(default_factory=dict)

    @property
    def grid(self) -> int:
        return int(self.chi.shape[-1])

    def fields(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for b in range(2):
            out[f"chi_{b + 1}"] = self.chi[b]
        for a in range(2):
            for b in range(2):
                out[f"gamma_{a + 1}{b + 1}"] = self.gamma[a, b]
                out[f"B_{a + 1}{b + 1}"] = self.B[a, b]
                out[f"phi_{a + 1}{b + 1}"] = self.phi[a, b]
                for g in range(2):
                    out[f"psi_{g + 1}{a + 1}{b + 1}"] = self.psi[g, a, b]
        return out

    def summary(self) -> dict:
        return {
            "grid": self.grid,
            "A0": self.A0.tolist(),
            "residuals": self.residuals,
            "iterations": self.iterations,
            "fields": sorted(self.fields()),
        }

    def save(self, directory: str | Path) -> list[Path]:
        """Write one CSV per field plus ``summary.json``; returns written paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, arr in sorted(self.fields().items()):
            p = directory / f"{name}.csv"
            write_grid_csv(p, arr, name)
            written.append(p)
        p = directory / "summary.json"
        p.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        written.append(p)
        return written


def write_grid_csv(path: Path, arr: np.ndarray, name: str) -> None:
    lines = [f"# grid={arr.shape[-1]} field={name}"]
    lines += [",".join(repr(float(v)) for v in row) for row in arr]
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid_csv(path: str | Path) -> tuple[str, np.ndarray]:
    text = Path(path).read_text().splitlines()
    header = text[0]
    if not header.startswith("# grid="):
        raise ValueError(f"{path}: missing grid header")
    name = header.split("field=", 1)[1].strip()
    arr = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line])
    return name, arr


def solve_cell_problems(coeffs: PeriodicCoefficients, tol: float = DEFAULT_TOL) -> CorrectorSet:
    """Correctors, homogenized tensor, second correctors and flux potential."""
    cs = solve_corrector(coeffs, tol)
    A0 = homogenized_tensor(coeffs, cs.chi)
    gs = solve_gamma(coeffs, cs.chi, A0, tol)
    fp = flux_potential(coeffs, cs.chi, A0)
    residuals = {f"chi_{b + 1}": r for b, r in enumerate(cs.residuals)}
    residuals.update({f"gamma_{a + 1}{b + 1}": gs.residuals[2 * a + b] for a in range(2) for b in range(2)})
    residuals["psi_identity"] = fp.residual
    iterations = {f"chi_{b + 1}": it for b, it in enumerate(cs.iterations)}
    return CorrectorSet(cs.chi, A0, gs.gamma, gs.B, fp.phi, fp.psi, residuals, iterations)
