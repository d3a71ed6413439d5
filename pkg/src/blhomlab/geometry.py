"""Normal frames, lattice scans and Diophantine diagnostics of a boundary direction.

A frame stores the unit normal ``n``, an orthogonal matrix ``M`` whose last
column is ``n`` and the tangential block ``N`` (the first ``d-1`` columns).
The small divisors of a direction are the numbers ``|N^T xi|`` for integer
vectors ``xi``; they measure how close lattice points come to the boundary
hyperplane direction.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Sequence

import numpy as np

GS_RESIDUAL_TOL = 1e-8
ANGLE_TOL = 1e-10
GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

# rows of candidate lattice points processed per block in the line scans
_CHUNK_ROWS = 1 << 15


class GeometryError(ValueError):
    """Invalid frame or lattice-search input."""


class NoWitnessError(GeometryError):
    """No lattice vector satisfies the first-level small-divisor inequality."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NormalFrame:
    """Orthonormal frame adapted to a boundary hyperplane ``{y . n = a}``.

    Attributes
    ----------
    n : ndarray, shape (d,)
        Unit normal.
    M : ndarray, shape (d, d)
        Orthogonal matrix with ``M e_d = n``.
    a : float
        Boundary offset.
    label : str
        Human readable name of the direction (``"axis"``, ``"golden"``...).
    validity_radius : int or None
        For truncated irrational directions, the lattice radius below which
        the direction behaves as the irrational it approximates.
    slope_exact : Fraction or None
        Exact slope when the direction was built from a rational expansion.
    """

    n: np.ndarray
    M: np.ndarray
    a: float = 0.0
    label: str = ""
    validity_radius: int | None = None
    slope_exact: Fraction | None = None

    @property
    def d(self) -> int:
        return int(self.n.shape[0])

    @property
    def N(self) -> np.ndarray:
        return self.M[:, :-1]

    def with_offset(self, a: float) -> "NormalFrame":
        return NormalFrame(self.n, self.M, float(a), self.label, self.validity_radius, self.slope_exact)

    def to_dict(self) -> dict:
        return {
            "n": self.n.tolist(),
            "M": self.M.tolist(),
            "a": self.a,
            "label": self.label,
            "validity_radius": self.validity_radius,
        }


def build_frame(n_raw: Sequence[float], a: float = 0.0, label: str = "") -> NormalFrame:
    """Complete a normal vector to an orthogonal frame.

    Canonical vectors ``e_1, e_2, ...`` are orthogonalized against ``n`` and
    the already accepted columns; a vector is accepted when its residual norm
    exceeds ``1e-8``. The last column is ``n`` itself.

    Raises
    ------
    GeometryError
        If ``n_raw`` is zero, non-finite or not of dimension 2 or 3.
    """
    v = np.asarray(n_raw, dtype=float).reshape(-1)
    d = v.shape[0]
    if d not in (2, 3):
        raise GeometryError(f"dimension must be 2 or 3, got {d}")
    if not np.all(np.isfinite(v)):
        raise GeometryError("normal vector has non-finite entries")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise GeometryError("normal vector must be nonzero")
    n = v / norm
    cols: list[np.ndarray] = []
    for i in range(d):
        if len(cols) == d - 1:
            break
        e = np.zeros(d)
        e[i] = 1.0
        r = e
        # two passes: a single one loses orthogonality when e is nearly parallel to n
        for _ in range(2):
            r = r - (r @ n) * n
            for c in cols:
                r = r - (r @ c) * c
        rn = np.linalg.norm(r)
        if rn > GS_RESIDUAL_TOL:
            cols.append(r / rn)
    M = np.column_stack(cols + [n])
    return NormalFrame(_readonly(n), _readonly(M), float(a), label)


def axis_frame(d: int = 2, a: float = 0.0) -> NormalFrame:
    """Frame with normal ``e_d``."""
    e = np.zeros(d)
    e[-1] = 1.0
    return build_frame(e, a, label="axis")


def golden_frame(a: float = 0.0) -> NormalFrame:
    """Frame whose tangent is ``(1, phi)/sqrt(1+phi^2)``, phi the golden ratio.

    The normal is ``(-phi, 1)/sqrt(1+phi^2)`` so that
    ``|N^T (1,0)| = 1/sqrt(1+phi^2)``.
    """
    return build_frame([-GOLDEN, 1.0], a, label="golden")


def tangent_slope_frame(slope: float, a: float = 0.0, label: str = "") -> NormalFrame:
    """Two-dimensional frame with tangent proportional to ``(1, slope)``."""
    return build_frame([-float(slope), 1.0], a, label=label)


def liouville_direction(levels: int, a: float = 0.0) -> NormalFrame:
    """Frame with tangent ``(1, L)``, ``L = sum_{k=1..levels} 10^{-k!}``.

    The truncated slope is rational with denominator ``10^{levels!}``; lattice
    vectors of norm below ``validity_radius = 10^{levels!} - 1`` do not see
    the truncation. Only levels whose last term is resolvable in double
    precision are accepted.

    Raises
    ------
    GeometryError
        If ``levels < 3`` or the last term underflows double precision.
    """
    if levels < 3:
        raise GeometryError("levels must be at least 3")
    top = math.factorial(levels)
    if top > 300:
        raise GeometryError(f"10^{top} overflows double precision; use fewer levels")
    exact = sum((Fraction(1, 10 ** math.factorial(k)) for k in range(1, levels + 1)), Fraction(0))
    head = float(sum((Fraction(1, 10 ** math.factorial(k)) for k in range(1, levels)), Fraction(0)))
    slope = float(exact)
    if slope == head:
        raise GeometryError(
            f"term 10^-{top} is below double precision at levels={levels}; use fewer levels"
        )
    fr = tangent_slope_frame(slope, a, label=f"liouville{levels}")
    return NormalFrame(fr.n, fr.M, fr.a, fr.label, 10**top - 1, exact)


# ---------------------------------------------------------------------------
# small divisors


def divisors(frame: NormalFrame, xi: np.ndarray) -> np.ndarray:
    """``|N^T xi|`` for integer vectors (rows of ``xi``), in extended precision."""
    xi = np.atleast_2d(np.asarray(xi))
    Nl = frame.N.astype(np.longdouble)
    proj = xi.astype(np.longdouble) @ Nl
    return np.sqrt(np.sum(proj * proj, axis=1))


def rationality_test(frame: NormalFrame, qmax: int) -> np.ndarray | None:
    """Smallest integer vector parallel to ``n`` with entries bounded by ``qmax``.

    Returns ``None`` when no integer vector within ``qmax`` makes an angle
    below ``1e-10`` with ``n``. The returned vector satisfies ``p . n > 0``.
    """
    if qmax < 1:
        raise GeometryError("qmax must be >= 1")
    n = frame.n.astype(np.longdouble)
    piv = int(np.argmax(np.abs(frame.n)))
    if n[piv] < 0:
        n = -n
    ratios = n / n[piv]
    # scan the pivot coordinate in blocks; the first hit has the smallest norm
    for start in range(1, qmax + 1, _CHUNK_ROWS):
        k = np.arange(start, min(qmax, start + _CHUNK_ROWS - 1) + 1, dtype=np.int64)
        cand = np.rint(k[:, None].astype(np.longdouble) * ratios[None, :]).astype(np.int64)
        cand[:, piv] = k
        ok = np.all(np.abs(cand) <= qmax, axis=1)
        c = cand.astype(np.longdouble)
        cn = np.sqrt(np.sum(c * c, axis=1))
        along = c @ n
        perp = c - along[:, None] * n[None, :]
        sin = np.sqrt(np.sum(perp * perp, axis=1)) / cn
        hit = np.nonzero(ok & (sin < ANGLE_TOL))[0]
        if hit.size:
            return cand[hit[0]].copy()
    return None


def _tangential_generator(p: np.ndarray, frame: NormalFrame) -> np.ndarray:
    """Primitive integer vector orthogonal to ``p`` (d=2), oriented along ``N``."""
    g = np.array([-p[1], p[0]], dtype=np.int64)
    gg = math.gcd(int(abs(g[0])), int(abs(g[1])))
    g //= gg
    if g @ frame.N[:, 0] < 0:
        g = -g
    return g


def _line_candidates(
    frame: NormalFrame,
    radius: int,
    width: Callable[[np.ndarray], np.ndarray],
) -> Iterator[np.ndarray]:
    """Yield blocks of lattice vectors that may have ``|N^T xi| < width``.

    ``width`` receives ``max(|xi_p|, 1)`` per row (``p`` the pivot coordinate
    where ``|n_p|`` is largest) and must be non-increasing in it. Every
    ``xi`` with ``0 < |xi| <= radius`` and ``|N^T xi| < width(max(|xi_p|,1))``
    is yielded at least once: writing ``xi = u + s n`` with ``u`` tangential,
    ``|xi_j - xi_p n_j / n_p| <= |u| / |n_p|``.
    """
    d = frame.d
    piv = int(np.argmax(np.abs(frame.n)))
    n = frame.n.astype(np.longdouble)
    ratios = n / n[piv]
    others = [j for j in range(d) if j != piv]
    r2 = radius * radius
    for start in range(-radius, radius + 1, _CHUNK_ROWS):
        k = np.arange(start, min(radius, start + _CHUNK_ROWS - 1) + 1, dtype=np.int64)
        kk = np.maximum(np.abs(k), 1).astype(float)
        hw = np.asarray(width(kk), dtype=float) / abs(float(frame.n[piv]))
        m = int(math.ceil(float(hw.max()))) + 1
        offs = np.arange(-m, m + 1, dtype=np.int64)
        grids = np.meshgrid(*([offs] * (d - 1)), indexing="ij")
        offs_nd = np.stack([g.reshape(-1) for g in grids], axis=1)  # (q, d-1)
        centers = k[:, None].astype(np.longdouble) * ratios[None, others]  # (rows, d-1)
        base = np.rint(centers).astype(np.int64)
        vals = base[:, None, :] + offs_nd[None, :, :]  # (rows, q, d-1)
        dev = np.abs(vals.astype(np.longdouble) - centers[:, None, :])
        keep = np.all(dev <= hw[:, None, None] + 1e-9, axis=2)
        rows, qs = np.nonzero(keep)
        if rows.size == 0:
            continue
        out = np.empty((rows.size, d), dtype=np.int64)
        out[:, piv] = k[rows]
        out[:, others] = vals[rows, qs]
        nrm2 = np.sum(out * out, axis=1)
        good = (nrm2 > 0) & (nrm2 <= r2)
        if np.any(good):
            yield out[good]


def _box(radius: int, d: int, half: int) -> np.ndarray:
    h = min(radius, half)
    axes = [np.arange(-h, h + 1, dtype=np.int64)] * d
    g = np.stack([a.reshape(-1) for a in np.meshgrid(*axes, indexing="ij")], axis=1)
    n2 = np.sum(g * g, axis=1)
    return g[(n2 > 0) & (n2 <= radius * radius)]


def _order_key(xi: np.ndarray) -> np.ndarray:
    """Lexsort keys: squared norm first, then coordinates in order."""
    n2 = np.sum(xi * xi, axis=1)
    return np.lexsort([xi[:, j] for j in range(xi.shape[1] - 1, -1, -1)] + [n2])


@dataclass
class DiophantineReport:
    """Empirical small-divisor constant of a direction on a finite lattice ball."""

    tau: float
    best_constant: float
    worst_xi: tuple[int, ...]
    radius: int
    violations: list[tuple[tuple[int, ...], float]] = field(default_factory=list)
    rational_warning: bool = False
    rational_direction: tuple[int, ...] | None = None

    def to_json(self) -> str:
        d = {
            "tau": self.tau,
            "best_constant": self.best_constant,
            "worst_xi": list(self.worst_xi),
            "radius": self.radius,
            "violations": [[list(x), v] for x, v in self.violations],
            "rational_warning": self.rational_warning,
            "rational_direction": None if self.rational_direction is None else list(self.rational_direction),
        }
        return json.dumps(d, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        d = len(self.worst_xi)
        rows = [(x, v, True) for x, v in self.violations]
        if self.worst_xi not in {x for x, _ in self.violations}:
            dist = self.best_constant / math.hypot(*self.worst_xi) ** (d + self.tau)
            rows.append((self.worst_xi, dist, False))
        return _lattice_csv(d, rows)


def _lattice_csv(d: int, rows: list[tuple[tuple[int, ...], float, bool]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"xi{i + 1}" for i in range(d)] + ["abs_Ndot_xi", "norm_xi", "violates"])
    for x, v, flag in rows:
        w.writerow(list(x) + [repr(float(v)), repr(math.sqrt(sum(c * c for c in x))), int(flag)])
    return buf.getvalue()


def small_divisor_scan(frame: NormalFrame, tau: float, radius: int) -> DiophantineReport:
    """Scan ``0 < |xi| <= radius`` for the small-divisor constant.

    Records ``inf |N^T xi| |xi|^{d+tau}`` and every violation of
    ``|N^T xi| >= |xi|^{-d-tau}``. For rational directions the divisors of
    lattice vectors parallel to ``n`` are set to exactly 0 and the report
    carries a warning flag.
    """
    if radius < 1:
        raise GeometryError("radius must be >= 1")
    if tau < 0:
        raise GeometryError("tau must be >= 0")
    d = frame.d
    p = rationality_test(frame, radius)
    box = _box(radius, d, 4)
    g_box = divisors(frame, box) * np.sqrt(np.sum(box * box, axis=1).astype(np.longdouble)) ** (d + tau)
    b0 = float(g_box.min())
    expo = d + tau
    bound = max(1.0, b0) * (1 + 1e-9)
    blocks = [box] + list(_line_candidates(frame, radius, lambda r: bound / r**expo))
    cand = np.unique(np.concatenate(blocks, axis=0), axis=0)
    div = divisors(frame, cand)
    if p is not None:
        if d == 2:
            par = cand[:, 0] * p[1] - cand[:, 1] * p[0] == 0
        else:
            par = np.all(np.cross(cand, p) == 0, axis=1)
        div[par] = 0
    nrm = np.sqrt(np.sum(cand * cand, axis=1).astype(np.longdouble))
    g = div * nrm**expo
    gmin = g.min()
    tied = np.nonzero(g == gmin)[0]
    sub = cand[tied]
    worst = sub[_order_key(sub)[0]]
    viol_mask = div < nrm ** (-expo)
    vi = np.nonzero(viol_mask)[0]
    vi = vi[_order_key(cand[vi])]
    violations = [(tuple(int(c) for c in cand[i]), float(div[i])) for i in vi]
    return DiophantineReport(
        tau=float(tau),
        best_constant=float(gmin),
        worst_xi=tuple(int(c) for c in worst),
        radius=int(radius),
        violations=violations,
        rational_warning=p is not None,
        rational_direction=None if p is None else tuple(int(c) for c in p),
    )


@dataclass
class XiSequence:
    """Recursively chosen lattice vectors with fast-shrinking divisors."""

    entries: list[tuple[int, tuple[int, ...], float]]
    search_radius: int
    truncated: bool = False

    def to_json(self) -> str:
        d = {
            "entries": [[M, list(x), v] for M, x, v in self.entries],
            "search_radius": self.search_radius,
            "truncated": self.truncated,
        }
        return json.dumps(d, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        d = len(self.entries[0][1]) if self.entries else 2
        return _lattice_csv(d, [(x, v, True) for _, x, v in self.entries])


def _norm_gt_plus_one(n2: np.ndarray, prev2: int | None) -> np.ndarray:
    """Exact test ``sqrt(n2) > sqrt(prev2) + 1`` on integer squared norms.

    ``prev2=None`` (first level) imposes no constraint.
    """
    if prev2 is None:
        return np.ones(n2.shape, dtype=bool)
    delta = n2 - prev2 - 1
    return (delta > 0) & (delta.astype(object) ** 2 > 4 * prev2).astype(bool)


def xi_sequence(frame: NormalFrame, M_max: int, search_radius: int) -> XiSequence:
    """Build ``xi_M = argmin |xi|`` over ``|xi| > |xi_{M-1}| + 1`` with
    ``|N^T xi| < (1/M) |xi|^{-M}``; the first level has no norm constraint.

    Ties are broken by the lexicographic order of the coordinates. The
    search stops with ``truncated=True`` when the radius is exhausted.

    Raises
    ------
    GeometryError
        If the direction is rational within the search radius.
    NoWitnessError
        If no vector qualifies at level ``M = 1``.
    """
    if M_max < 1:
        raise GeometryError("M_max must be >= 1")
    if frame.validity_radius is not None and search_radius > frame.validity_radius:
        raise GeometryError(
            f"search radius {search_radius} exceeds the validity radius {frame.validity_radius} of the direction"
        )
    if rationality_test(frame, search_radius) is not None:
        raise GeometryError("direction is rational within the search radius")
    entries: list[tuple[int, tuple[int, ...], float]] = []
    prev2: int | None = None
    truncated = False
    for M in range(1, M_max + 1):
        blocks = list(_line_candidates(frame, search_radius, lambda r, M=M: (1.0 / M) / r**M * (1 + 1e-9)))
        found = None
        if blocks:
            cand = np.unique(np.concatenate(blocks, axis=0), axis=0)
            n2 = np.sum(cand * cand, axis=1)
            div = divisors(frame, cand)
            thr = np.longdouble(1.0 / M) * np.sqrt(n2.astype(np.longdouble)) ** (-M)
            ok = (div < thr) & _norm_gt_plus_one(n2, prev2)
            if np.any(ok):
                sub = cand[ok]
                i = _order_key(sub)[0]
                found = sub[i]
        if found is None:
            if M == 1:
                raise NoWitnessError(f"no witness within radius {search_radius}")
            truncated = True
            break
        xi = tuple(int(c) for c in found)
        entries.append((M, xi, float(divisors(frame, found)[0])))
        prev2 = int(sum(c * c for c in xi))
    return XiSequence(entries, int(search_radius), truncated)


# ---------------------------------------------------------------------------
# continued fractions


@dataclass
class ContinuedFraction:
    partial_quotients: list[int]
    convergents: list[tuple[int, int]]
    terminated: bool


def continued_fraction(slope: float | Fraction, depth: int) -> ContinuedFraction:
    """Continued-fraction expansion of ``slope`` to at most ``depth`` terms.

    Floats are expanded exactly (as the dyadic rationals they are), so the
    expansion of an irrational number is only meaningful while the
    convergent denominators stay below about ``1e8``. ``terminated`` is set
    when the expansion ends before ``depth`` terms.
    """
    if depth < 1:
        raise GeometryError("depth must be >= 1")
    x = Fraction(slope)
    qs: list[int] = []
    conv: list[tuple[int, int]] = []
    p0, q0, p1, q1 = 1, 0, 0, 1
    terminated = False
    for _ in range(depth):
        a = math.floor(x)
        qs.append(a)
        p0, q0, p1, q1 = a * p0 + p1, a * q0 + q1, p0, q0
        conv.append((p0, q0))
        frac = x - a
        if frac == 0:
            terminated = True
            break
        x = 1 / frac
    return ContinuedFraction(qs, conv, terminated)
