"""Grid solvers for the boundary-layer system in rotated coordinates.

Both solvers share one discretization: Fourier differentiation in the
tangential variables and a second-order energy (finite-element-like)
discretization in the normal variable ``t``. The discrete operator is
symmetric positive definite; it is solved with conjugate gradients
preconditioned by the same operator with averaged coefficients, which is
diagonal in Fourier space and tridiagonal in ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..cell import PeriodicCoefficients, wavenumbers
from ..geometry import NormalFrame, _tangential_generator, rationality_test
from .data import FieldRangeError, FourierBoundaryData, GridField, SeriesField

TWO_PI = 2.0 * math.pi
SOLVER_TOL = 1e-7
MAX_ITER = 5000


class LayerSolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class _Problem:
    """Discrete layer operator on ``(tangential grid) x {t_0, ..., t_nt}``."""

    dsym: np.ndarray  # i * tangential derivative symbol, shape S
    lapsym: np.ndarray  # tangential Laplacian symbol (<= 0), shape S
    b11: np.ndarray  # (nt+1, *S) at nodes
    b22: np.ndarray  # (nt, *S) at midpoints
    b12: np.ndarray  # (nt, *S) at midpoints
    h: float
    iota: float

    def __post_init__(self):
        self.axes = tuple(range(1, self.dsym.ndim + 1))
        nt = self.b22.shape[0]
        w = np.full(nt + 1, self.h)
        w[0] = w[-1] = self.h / 2
        self.w = w.reshape((-1,) + (1,) * self.dsym.ndim)
        self.has_cross = bool(np.any(self.b12 != 0))
        self.const_b11 = float(np.ptp(self.b11)) == 0.0
        # constant-coefficient preconditioner
        self.c = float(self.b22.mean()) + self.iota
        self.s = float(self.b11.mean()) * np.abs(self.dsym) ** 2 - self.iota * self.lapsym

    def D(self, F: np.ndarray) -> np.ndarray:
        Fh = np.fft.fftn(F, axes=self.axes)
        return np.fft.ifftn(self.dsym * Fh, axes=self.axes).real

    def lap(self, F: np.ndarray) -> np.ndarray:
        Fh = np.fft.fftn(F, axes=self.axes)
        return np.fft.ifftn(self.lapsym * Fh, axes=self.axes).real

    def gradient(self, V: np.ndarray) -> np.ndarray:
        """Gradient of the discrete energy with respect to all nodal values."""
        h = self.h
        dV = (V[1:] - V[:-1]) / h
        g = np.zeros_like(V)
        flux = (self.b22 + self.iota) * dV
        g[1:] += flux
        g[:-1] -= flux
        if self.const_b11:
            Fh = np.fft.fftn(V, axes=self.axes)
            t = np.fft.ifftn((float(self.b11.flat[0]) * np.abs(self.dsym) ** 2 - self.iota * self.lapsym) * Fh,
                             axes=self.axes).real
            g += self.w * t
        else:
            g -= self.w * self.D(self.b11 * self.D(V))
            if self.iota:
                g -= self.w * self.iota * self.lap(V)
        if self.has_cross:
            Vbar = 0.5 * (V[1:] + V[:-1])
            c1 = self.b12 * self.D(Vbar)
            c2 = -0.5 * h * self.D(self.b12 * dV)
            g[1:] += c1 + c2
            g[:-1] += -c1 + c2
        return g

    def precondition(self, R: np.ndarray) -> np.ndarray:
        """Exact inverse of the averaged operator on unknowns ``j = 1..nt``."""
        Rh = np.fft.fftn(R, axes=self.axes)
        m = Rh.shape[0]
        h, c, s = self.h, self.c, self.s
        off = -c / h
        diag = np.empty((m,) + s.shape)
        diag[:] = 2 * c / h + h * s
        diag[-1] = c / h + 0.5 * h * s
        # Thomas algorithm, vectorized over Fourier modes
        cp = np.empty((m,) + s.shape)
        dp = np.empty_like(Rh)
        cp[0] = off / diag[0]
        dp[0] = Rh[0] / diag[0]
        for j in range(1, m):
            den = diag[j] - off * cp[j - 1]
            cp[j] = off / den
            dp[j] = (Rh[j] - off * dp[j - 1]) / den
        X = np.empty_like(Rh)
        X[-1] = dp[-1]
        for j in range(m - 2, -1, -1):
            X[j] = dp[j] - cp[j] * X[j + 1]
        return np.fft.ifftn(X, axes=self.axes).real

    def solve(self, V0: np.ndarray, tol: float, maxiter: int) -> tuple[np.ndarray, float, int]:
        nt = self.b22.shape[0]
        V = np.zeros((nt + 1,) + V0.shape)
        V[0] = V0
        b = -self.gradient(V)[1:]
        bn = float(np.linalg.norm(b))
        U = np.zeros_like(b)
        if bn == 0.0:
            return V, 0.0, 0

        def op(X):
            W = np.zeros_like(V)
            W[1:] = X
            return self.gradient(W)[1:]

        r = b.copy()
        z = self.precondition(r)
        p = z.copy()
        rz = float(np.vdot(r, z))
        res = 1.0
        for it in range(1, maxiter + 1):
            Ap = op(p)
            alpha = rz / float(np.vdot(p, Ap))
            U += alpha * p
            r -= alpha * Ap
            res = float(np.linalg.norm(r)) / bn
            if res <= tol:
                V[1:] = U
                return V, res, it
            z = self.precondition(r)
            rz_new = float(np.vdot(r, z))
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise LayerSolverError(f"conjugate gradient did not converge in {maxiter} iterations", res)


def _rotated_coefficients(coeffs: PeriodicCoefficients | None, frame: NormalFrame,
                          Y: Callable[[np.ndarray], np.ndarray], t_nodes: np.ndarray, t_mid: np.ndarray,
                          shape: tuple[int, ...]):
    """``b11 = N.AN`` at nodes, ``b22 = n.An`` and ``b12 = N.An`` at midpoints."""
    if coeffs is None or (coeffs.is_constant and np.allclose(coeffs.samples[:, :, 0, 0], np.eye(2), atol=0)):
        return (np.ones((len(t_nodes),) + shape), np.ones((len(t_mid),) + shape), np.zeros((len(t_mid),) + shape))
    if not coeffs.is_symmetric:
        raise ValueError("layer solvers require symmetric coefficients")
    N = frame.N[:, 0]
    n = frame.n

    def quad(t, u, v):
        y = Y(t)
        A = coeffs.evaluate(y[..., 0], y[..., 1])
        return np.einsum("a,ab...,b->...", u, A, v)

    return quad(t_nodes, N, N), quad(t_mid, n, n), quad(t_mid, N, n)


def _check_grid(T: float, grid: tuple[int, int]) -> tuple[int, int]:
    n_theta, nt = (int(g) for g in grid)
    if T <= 0:
        raise ValueError("T must be positive")
    if n_theta < 4 or nt < 2:
        raise ValueError("grid too small")
    return n_theta, nt


def solve_rational_strip(coeffs: PeriodicCoefficients | None, v0: Callable[[np.ndarray], np.ndarray],
                         frame: NormalFrame, T: float, grid: tuple[int, int], tol: float = SOLVER_TOL,
                         qmax: int = 1000, maxiter: int = MAX_ITER) -> GridField:
    """Layer for a rational direction on one tangential period times ``[0, T]``.

    ``v0`` maps points of shape ``(..., 2)`` to values. Dirichlet data
    ``v0(N z1 + a n)`` at ``t = 0``, zero normal derivative at ``t = T``.
    The period is ``|g|`` for the primitive integer vector ``g`` orthogonal to
    the normal.

    Raises
    ------
    ValueError
        If the direction is not rational within ``qmax``, or ``T`` is shorter
        than five tangential periods.
    """
    if frame.d != 2:
        raise ValueError("solvers are two-dimensional")
    p = rationality_test(frame, qmax)
    if p is None:
        raise ValueError("direction is not rational within qmax; use the quasiperiodic solver")
    n_theta, nt = _check_grid(T, grid)
    g = _tangential_generator(p, frame)
    L = float(np.hypot(*g))
    if T < 5 * L - 1e-12:
        raise ValueError(f"T={T} is shorter than five tangential periods (period {L:.6g})")
    z = np.arange(n_theta) * (L / n_theta)
    t = np.linspace(0.0, T, nt + 1)
    tm = 0.5 * (t[1:] + t[:-1])
    N = frame.N[:, 0]
    n = frame.n

    def Y(tt):
        return z[None, :, None] * N + (frame.a + tt)[:, None, None] * n

    b11, b22, b12 = _rotated_coefficients(coeffs, frame, Y, t, tm, (n_theta,))
    m = wavenumbers(n_theta)
    dsym = 1j * TWO_PI * m / L
    lapsym = -(TWO_PI * m / L) ** 2
    prob = _Problem(dsym, lapsym, b11, b22, b12, T / nt, 0.0)
    V0 = np.asarray(v0(z[:, None] * N + frame.a * n), dtype=float)
    V, res, it = prob.solve(V0, tol, maxiter)
    return GridField(frame, "strip", float(T), t, V, 0.0, res, it, tol, L, tuple(int(c) for c in g),
                     {"coefficients": "identity" if coeffs is None else coeffs.name})


def solve_quasiperiodic_regularized(coeffs: PeriodicCoefficients | None, V0: FourierBoundaryData,
                                    frame: NormalFrame, iota: float | None, T: float,
                                    grid: tuple[int, int], tol: float = SOLVER_TOL,
                                    maxiter: int = MAX_ITER) -> GridField:
    """Regularized lifted layer on ``T^2 x [0, T]``.

    Discretizes ``(N.grad_theta, d_t) . B (N.grad_theta, d_t) + iota Laplacian``
    with ``B(theta, t) = M^T A(theta + (a+t) n) M``; data ``V0(theta + a n)``.
    ``iota=None`` selects ``h^2`` with ``h = T/nt``.
    """
    if frame.d != 2:
        raise ValueError("solvers are two-dimensional")
    n_theta, nt = _check_grid(T, grid)
    h = T / nt
    if iota is None:
        iota = h * h
    if not iota > 0:
        raise ValueError("iota must be positive; the unregularized lifted operator is not elliptic")
    g = np.arange(n_theta) / n_theta
    th = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    t = np.linspace(0.0, T, nt + 1)
    tm = 0.5 * (t[1:] + t[:-1])
    n = frame.n
    N = frame.N[:, 0]

    def Y(tt):
        return th[None] + (frame.a + tt)[:, None, None, None] * n

    b11, b22, b12 = _rotated_coefficients(coeffs, frame, Y, t, tm, (n_theta, n_theta))
    k = wavenumbers(n_theta)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    dsym = 1j * TWO_PI * (N[0] * k1 + N[1] * k2)
    kf = np.fft.fftfreq(n_theta, d=1.0 / n_theta)
    f1, f2 = np.meshgrid(kf, kf, indexing="ij")
    lapsym = -(TWO_PI**2) * (f1**2 + f2**2)
    prob = _Problem(dsym, lapsym, b11, b22, b12, h, float(iota))
    data = np.asarray(V0(th + frame.a * n), dtype=float)
    V, res, it = prob.solve(data, tol, maxiter)
    return GridField(frame, "torus", float(T), t, V, float(iota), res, it, tol, 1.0, None,
                     {"coefficients": "identity" if coeffs is None else coeffs.name})


# ---------------------------------------------------------------------------
# energy


@dataclass
class EnergyResult:
    K: float
    remainder: float  # estimate of the part beyond the grid (grid fields only)


def _energy_density(field: GridField) -> np.ndarray:
    """``mean(|N.grad_theta V|^2 + |d_t V|^2)`` per midpoint height."""
    n = field.n_theta
    k = wavenumbers(n)
    if field.kind == "strip":
        dsym = 1j * TWO_PI * k / field.period
        axes: tuple[int, ...] = (1,)
    else:
        N = field.frame.N[:, 0]
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        dsym = 1j * TWO_PI * (N[0] * k1 + N[1] * k2)
        axes = (1, 2)
    V = field.values
    h = field.T / field.nt
    dt = (V[1:] - V[:-1]) / h
    Vm = 0.5 * (V[1:] + V[:-1])
    DV = np.fft.ifftn(dsym * np.fft.fftn(Vm, axes=axes), axes=axes).real
    red = tuple(range(1, V.ndim))
    return np.mean(DV**2 + dt**2, axis=red)


def st_venant_energy(field: SeriesField | GridField, T: float) -> EnergyResult:
    """Tail energy ``K(T) = int_{T^d} int_T^inf |N.grad V|^2 + |d_t V|^2``.

    For series fields each mode contributes ``|vhat|^2 r e^{-2 r T}`` with
    ``r = 2 pi |N^T xi|`` (exact). For grid fields the midpoint rule is
    applied up to the truncation height; the remainder beyond it is
    estimated from the decay of the top-slab energy density.
    """
    if T < 0:
        raise FieldRangeError("T must be nonnegative")
    if isinstance(field, SeriesField):
        r = field.rates
        nz = field.nonzero
        w = np.abs(field.coef[nz]) ** 2
        return EnergyResult(float(np.sum(w * r[nz] * np.exp(-2 * r[nz] * T))), 0.0)
    if T > field.T * (1 + 1e-12):
        raise FieldRangeError(f"T={T} beyond the grid height {field.T}")
    e = _energy_density(field)
    h = field.T / field.nt
    tm = 0.5 * (field.t[1:] + field.t[:-1])
    full = tm >= T
    K = float(np.sum(e[full]) * h)
    # partial cell containing T
    j = int(np.searchsorted(field.t, T, side="right")) - 1
    if 0 <= j < field.nt and field.t[j] < T and not full[j]:
        K += float(e[j] * (field.t[j + 1] - T))
    elif 0 <= j < field.nt and field.t[j] < T:
        K -= float(e[j] * (T - field.t[j]))
    top = e[-max(4, field.nt // 10):]
    remainder = float("inf")
    if top[-1] == 0.0:
        remainder = 0.0
    elif np.all(top > 0):
        rate = -(math.log(top[-1]) - math.log(top[0])) / (h * (len(top) - 1))
        if rate > 0:
            remainder = float(top[-1] / rate)
    return EnergyResult(K, remainder)


def check_max_principle(field: GridField, atol: float = 1e-9) -> bool:
    lo, hi = float(field.values[0].min()), float(field.values[0].max())
    return bool(np.all(field.values >= lo - atol) and np.all(field.values <= hi + atol))
