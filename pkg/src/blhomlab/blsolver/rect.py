"""Dirichlet problems with oscillating coefficients on a square, and the epsilon sweep."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import spsolve

from ..cell import PeriodicCoefficients, homogenized_tensor, solve_corrector

MIN_CELLS_PER_PERIOD = 8

Source = Callable[[np.ndarray, np.ndarray], np.ndarray]
CoefField = Callable[[np.ndarray, np.ndarray], np.ndarray]


def bump_source(L: float = 1.0, radius: float | None = None, height: float = 1.0) -> Source:
    """Smooth compactly supported bump centred in ``[0, L]^2``."""
    r0 = L / 4 if radius is None else radius
    c = L / 2

    def f(x1, x2):
        rho2 = ((x1 - c) ** 2 + (x2 - c) ** 2) / r0**2
        out = np.zeros(np.broadcast(x1, x2).shape)
        inside = rho2 < 1
        out[inside] = height * math.e * np.exp(-1.0 / (1.0 - rho2[inside]))
        return out

    return f


def _assemble(coef: CoefField, n: int, L: float) -> sps.csr_matrix:
    """Five-point conservative stencil plus nodal cross terms on interior nodes."""
    h = L / n
    m = n - 1
    idx = np.arange(m * m).reshape(m, m)
    i, j = np.meshgrid(np.arange(1, n), np.arange(1, n), indexing="ij")
    x1, x2 = i * h, j * h
    rows, cols, vals = [], [], []

    def add(r, c, v, mask=None):
        if mask is None:
            mask = np.ones(r.shape, dtype=bool)
        rows.append(r[mask])
        cols.append(c[mask])
        vals.append(v[mask])

    diag = np.zeros((m, m))
    for axis in (0, 1):
        for sgn in (-1, 1):
            xh1 = x1 + (0.5 * sgn * h if axis == 0 else 0.0)
            xh2 = x2 + (0.5 * sgn * h if axis == 1 else 0.0)
            a = coef(xh1, xh2)[axis, axis] / h**2
            diag += a
            ni = i + (sgn if axis == 0 else 0)
            nj = j + (sgn if axis == 1 else 0)
            inside = (ni >= 1) & (ni <= n - 1) & (nj >= 1) & (nj <= n - 1)
            nb = idx[np.clip(ni - 1, 0, m - 1), np.clip(nj - 1, 0, m - 1)]
            add(idx, nb, -a, inside)
    add(idx, idx, diag)
    # cross terms -d1(a12 d2 u) - d2(a21 d1 u) with central differences
    A_nodes = coef(np.arange(0, n + 1)[:, None] * h, np.arange(0, n + 1)[None, :] * h)
    for (p, q, outer) in ((0, 1, 0), (1, 0, 1)):
        a = A_nodes[p, q]
        if not np.any(a):
            continue
        for so in (-1, 1):
            ci = i + (so if outer == 0 else 0)
            cj = j + (so if outer == 1 else 0)
            w = -so * a[ci, cj] / (4 * h * h)
            for si in (-1, 1):
                ni = ci + (si if outer == 1 else 0)
                nj = cj + (si if outer == 0 else 0)
                inside = (ni >= 1) & (ni <= n - 1) & (nj >= 1) & (nj <= n - 1)
                nb = idx[np.clip(ni - 1, 0, m - 1), np.clip(nj - 1, 0, m - 1)]
                add(idx, nb, si * w, inside)
    A = sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m * m, m * m)
    )
    A.sum_duplicates()
    return A


def _solve(coef: CoefField, f: Source, n: int, L: float) -> np.ndarray:
    h = L / n
    A = _assemble(coef, n, L)
    x = np.arange(1, n) * h
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    u_in = spsolve(A.tocsc(), f(X1, X2).ravel())
    u = np.zeros((n + 1, n + 1))
    u[1:-1, 1:-1] = u_in.reshape(n - 1, n - 1)
    return u


@dataclass
class RectSolution:
    x: np.ndarray
    u_eps: np.ndarray
    u0: np.ndarray
    A0: np.ndarray
    eps: float
    h: float


def homogenized_matrix(coeffs: PeriodicCoefficients, grid: int = 64) -> np.ndarray:
    c = coeffs.resampled(grid) if coeffs.func is not None and coeffs.grid != grid else coeffs
    return homogenized_tensor(c, solve_corrector(c).chi)


def dirichlet_rect_solver(coeffs: PeriodicCoefficients, eps: float, f: Source, L: float = 1.0,
                          grid: int = 256, A0: np.ndarray | None = None) -> RectSolution:
    """Solve ``-div(A(x/eps) grad u) = f`` on ``[0, L]^2`` with ``u = 0`` on the boundary.

    Also solves the homogenized problem with the constant tensor ``A0`` on the
    same grid (computed from the cell problem when not given).

    Raises
    ------
    ValueError
        If the grid has fewer than 8 cells per period ``eps``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    h = L / grid
    if eps / h < MIN_CELLS_PER_PERIOD - 1e-9:
        raise ValueError(
            f"grid too coarse: {eps / h:.3g} cells per period eps={eps:g}, need at least {MIN_CELLS_PER_PERIOD}"
        )
    if coeffs.func is None:
        raise ValueError("rectangle solver needs coefficients with an evaluator")
    if A0 is None:
        A0 = homogenized_matrix(coeffs)
    A0 = np.asarray(A0, dtype=float)

    def coef_eps(x1, x2):
        return coeffs.evaluate(x1 / eps, x2 / eps)

    def coef_0(x1, x2):
        shape = np.broadcast(x1, x2).shape
        return np.broadcast_to(A0.reshape(2, 2, *([1] * len(shape))), (2, 2) + shape)

    u_eps = _solve(coef_eps, f, grid, L)
    u0 = _solve(coef_0, f, grid, L)
    return RectSolution(np.arange(grid + 1) * h, u_eps, u0, A0, float(eps), h)


@dataclass
class SweepResult:
    eps: list[float]
    errors: list[float]
    slope: float
    degenerate: bool
    grid: int

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.eps, self.errors))


def interior_error(sol: RectSolution, L: float = 1.0) -> float:
    collar = 2 * sol.eps
    inside = (sol.x >= collar - 1e-12) & (sol.x <= L - collar + 1e-12)
    d = np.abs(sol.u_eps - sol.u0)[np.ix_(inside, inside)]
    return float(d.max())


def homogenization_error_sweep(coeffs: PeriodicCoefficients, f: Source, eps_list, L: float = 1.0,
                               grid: int | None = None) -> SweepResult:
    """Interior max-norm error ``|u_eps - u0|`` per ``eps`` and its log-log slope.

    All ``eps`` share one grid fine enough for the smallest; a boundary collar
    of width ``2 eps`` is excluded. When every error is at rounding level the
    fit is flagged degenerate and the slope is NaN.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 3:
        raise ValueError("need at least 3 eps values")
    if grid is None:
        need = MIN_CELLS_PER_PERIOD * L / min(eps_list)
        grid = 1 << max(4, math.ceil(math.log2(need - 1e-9)))
    A0 = homogenized_matrix(coeffs)
    errors = []
    umax = 0.0
    for e in eps_list:
        sol = dirichlet_rect_solver(coeffs, e, f, L, grid, A0)
        errors.append(interior_error(sol, L))
        umax = max(umax, float(np.abs(sol.u0).max()))
    degenerate = max(errors) <= 1e-10 * max(umax, 1e-300)
    slope = float("nan")
    if not degenerate:
        slope = float(np.polyfit(np.log(eps_list), np.log(errors), 1)[0])
    return SweepResult(eps_list, errors, slope, bool(degenerate), int(grid))
