"""Tails, ergodic means, decay fits and the slow-convergence witness."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .blsolver import (
    FourierBoundaryData,
    GridField,
    SeriesField,
    solve_quasiperiodic_regularized,
    solve_series_laplacian,
)
from .cell import PeriodicCoefficients
from .geometry import NormalFrame, XiSequence, _tangential_generator, rationality_test, xi_sequence

TWO_PI = 2.0 * math.pi
DOWNGRADE_RESIDUAL = 0.05
_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


class PlateauError(RuntimeError):
    """The field has not settled to a constant over its top slab."""


class FitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ergodic means


@dataclass
class ErgodicResult:
    radii: list[float]
    means: list[float]
    torus_mean: float
    gaps: list[float]
    resonant: bool


def line_average(F: Callable[[np.ndarray], np.ndarray], frame: NormalFrame, R: float,
                 panel: float = 0.25) -> float:
    """``(1/2R) int_{-R}^{R} F(N s) ds`` by composite Gauss-Legendre."""
    panels = max(1, math.ceil(2 * R / panel))
    edges = np.linspace(-R, R, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = (mid[:, None] + half[:, None] * _GL_X).ravel()
    w = (half[:, None] * _GL_W).ravel()
    vals = np.asarray(F(s[:, None] * frame.N[:, 0]), dtype=float)
    return float(np.sum(w * vals) / (2 * R))


def torus_mean(F: Callable[[np.ndarray], np.ndarray], grid: int = 64) -> float:
    """Grid mean on ``T^2``; exact for trigonometric polynomials of degree below ``grid``."""
    g = np.arange(grid) / grid
    th = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    return float(np.mean(F(th)))


def ergodic_mean(F: Callable[[np.ndarray], np.ndarray], frame: NormalFrame, window_radii: Sequence[float],
                 grid: int = 64, qmax: int = 1000) -> ErgodicResult:
    """Window means of ``s -> F(N s)`` against the torus mean of ``F``.

    ``resonant`` is set for rational directions whose largest window mean
    stays away from the torus mean (gap above 1e-6).
    """
    radii = [float(r) for r in window_radii]
    means = [line_average(F, frame, R) for R in radii]
    tm = torus_mean(F, grid)
    gaps = [abs(m - tm) for m in means]
    rational = rationality_test(frame, qmax) is not None
    return ErgodicResult(radii, means, tm, gaps, bool(rational and gaps[-1] > 1e-6))


# ---------------------------------------------------------------------------
# tails


@dataclass
class TailEstimate:
    value: float
    uncertainty: float
    method: str


def tail_estimate(field: SeriesField | GridField, method: str = "plateau",
                  tolerance: float | None = None) -> TailEstimate:
    """Far-field constant of a layer.

    ``series``: the zero mode of the data (exact for the Laplacian).
    ``plateau``: mean of the top 10% slab of a grid field, uncertainty = its
    oscillation. Raises :class:`PlateauError` when the oscillation exceeds
    ``10 x`` the solver tolerance (or ``tolerance`` when given).
    """
    if method == "series":
        if not isinstance(field, SeriesField):
            raise ValueError("series tails need a series field")
        return TailEstimate(field.tail, 0.0, "series")
    if method != "plateau":
        raise ValueError(f"unknown tail method {method!r}")
    if isinstance(field, SeriesField):
        raise ValueError("plateau tails need a grid field")
    top = field.values[field.t >= 0.9 * field.T - 1e-12]
    osc = float(top.max() - top.min())
    limit = 10.0 * field.tol if tolerance is None else tolerance
    if osc > limit:
        raise PlateauError(
            f"top-slab oscillation {osc:.3e} exceeds {limit:.3e}; increase the truncation height T={field.T}"
        )
    return TailEstimate(float(top.mean()), osc, "plateau")


def rational_tail_formula(v0: Callable[[np.ndarray], np.ndarray], frame: NormalFrame, a_frac: float,
                          qmax: int = 1000, tol: float = 1e-12) -> float:
    """``(1/L) int_0^L v0(N z + a_frac n) dz`` over one tangential period ``L``.

    Periodic trapezoid rule with doubling until two levels agree to ``tol``.
    """
    p = rationality_test(frame, qmax)
    if p is None:
        raise ValueError("direction is not rational within qmax")
    g = _tangential_generator(p, frame)
    L = float(np.hypot(*g))
    N = frame.N[:, 0]
    prev = None
    m = 64
    while m <= 1 << 18:
        z = np.arange(m) * (L / m)
        val = float(np.mean(v0(z[:, None] * N + a_frac * frame.n)))
        if prev is not None and abs(val - prev) <= tol:
            return val
        prev = val
        m *= 2
    return float(prev)


# ---------------------------------------------------------------------------
# fits and decay reports


@dataclass
class FitResult:
    kind: str  # "exponential" | "power"
    C: float
    rate: float  # kappa for exponential (norm ~ C e^{-kappa t}), slope for power
    residual: float
    downgraded: bool
    dropped: int


def _usable(t, y) -> tuple[np.ndarray, np.ndarray, int]:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 4:
        raise FitError(f"need at least 4 positive samples, got {int(ok.sum())}")
    return t[ok], y[ok], int((~ok).sum())


def fit_exponential(t, norms) -> FitResult:
    """Least squares of ``log norm = log C - kappa t``."""
    t, y, dropped = _usable(t, norms)
    slope, icpt = np.polyfit(t, np.log(y), 1)
    res = float(np.sqrt(np.mean((np.log(y) - (icpt + slope * t)) ** 2)))
    return FitResult("exponential", float(math.exp(icpt)), float(-slope), res, res > DOWNGRADE_RESIDUAL, dropped)


def fit_power(t, norms) -> FitResult:
    """Least squares of ``log norm = log C + slope log t``."""
    t, y, dropped = _usable(t, norms)
    if np.any(t <= 0):
        raise FitError("power fits need positive t")
    slope, icpt = np.polyfit(np.log(t), np.log(y), 1)
    res = float(np.sqrt(np.mean((np.log(y) - (icpt + slope * np.log(t))) ** 2)))
    return FitResult("power", float(math.exp(icpt)), float(slope), res, res > DOWNGRADE_RESIDUAL, dropped)


@dataclass
class DecayReport:
    t: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    model: dict
    tail: float
    residual: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "l2", "linf"])
        for a, b, c in zip(self.t, self.l2, self.linf):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"model": self.model, "tail": self.tail, "residual": self.residual, "samples": len(self.t)}


def _series_linf(field: SeriesField, t: np.ndarray, grid: int = 64) -> np.ndarray:
    g = np.arange(grid) / grid
    th = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    return np.array([np.max(np.abs(field.evaluate(th, tt) - field.tail)) for tt in t])


def decay_report(field: SeriesField | GridField, t_samples: Sequence[float] | None = None,
                 floor: float = 1e-8) -> DecayReport:
    """Sampled decay of ``V - tail`` with a fitted model.

    Samples below ``floor`` times the largest norm are excluded from the fit
    (they are at solver-noise level for grid fields). An exponential model is
    tried first; a power law is reported when the exponential is downgraded.
    """
    if isinstance(field, SeriesField):
        t = np.asarray(t_samples if t_samples is not None else np.linspace(0, 5, 51), dtype=float)
        tail = field.tail
        l2 = field.deviation_l2(t)
        linf = _series_linf(field, t)
    else:
        tail = tail_estimate(field, "plateau", tolerance=math.inf).value
        l2_all, linf_all = field.slab_norms(tail)
        t = field.t
        l2, linf = l2_all, linf_all
        if t_samples is not None:
            idx = np.searchsorted(field.t, np.asarray(t_samples, float))
            t, l2, linf = t[idx], l2[idx], linf[idx]
    sel = (l2 >= floor * l2.max()) & (t > 0)
    model: dict
    try:
        ex = fit_exponential(t[sel], l2[sel])
        model = {"kind": "exponential", "C": ex.C, "kappa": ex.rate, "residual": ex.residual,
                 "downgraded": ex.downgraded}
        residual = ex.residual
        if ex.downgraded:
            pw = fit_power(t[sel], l2[sel])
            model = {"kind": "power", "C": pw.C, "slope": pw.rate, "residual": pw.residual,
                     "downgraded": pw.downgraded, "exponential_residual": ex.residual}
            residual = pw.residual
    except FitError as e:
        model = {"kind": "none", "reason": str(e)}
        residual = float("nan")
    return DecayReport(t, l2, linf, model, float(tail), float(residual))


@dataclass
class SuperPolynomialReport:
    m_list: list[int]
    sups: list[float]
    argmax_t: list[float]
    flat: list[bool]

    @property
    def passed(self) -> bool:
        return all(self.flat)

    def to_dict(self) -> dict:
        return dict(self.__dict__, passed=self.passed)


def small_divisor_decay_check(field: SeriesField, m_list: Sequence[int], t_grid: Sequence[float]) -> SuperPolynomialReport:
    """``sup_t t^m ||V(., t) - vhat(0)||`` per ``m`` with a flatness verdict.

    Flat means no growth over the top decade ``[t_max/10, t_max]``: the
    maximum over that decade is attained at its first sample.
    """
    t = np.asarray(t_grid, dtype=float)
    dev = field.deviation_l2(t)
    top = t >= t[-1] / 10 - 1e-12
    first = int(np.argmax(top))
    sups, args, flat = [], [], []
    for m in m_list:
        g = t**m * dev
        i = int(np.argmax(g))
        sups.append(float(g[i]))
        args.append(float(t[i]))
        gt = g[top]
        flat.append(bool(gt.max() <= g[first] * (1 + 1e-12)) if g[first] > 0 else bool(gt.max() == 0))
    return SuperPolynomialReport(list(m_list), sups, args, flat)


# ---------------------------------------------------------------------------
# slow-convergence witness


@dataclass
class SlowWitness:
    l: float
    xi_seq: XiSequence
    v0: FourierBoundaryData
    levels: list[tuple[int, tuple[int, ...], float]]  # retained (M, xi_M, |N^T xi_M|)
    log_coef: list[float]  # log vhat(xi_M)
    log_t: list[float]  # log t_M
    variant: str = "L2"
    R: float | None = None
    M_start: int = 1
    chain: list[dict] = field(default_factory=list)

    @property
    def t_list(self) -> list[float]:
        return [math.exp(v) for v in self.log_t]


def _log_norm(xi) -> float:
    return 0.5 * math.log(sum(c * c for c in xi))


def slow_witness_build(frame: NormalFrame, l: float, M_max: int, variant: str = "L2", R: float = 1.0,
                       search_radius: int = 10_000) -> SlowWitness:
    """Data with ``vhat(+-xi_M) = M^{-l} |xi_M|^{-Ml}`` and times ``t_M = l M |xi_M|^M / (2 pi)``.

    ``variant="Linf"`` keeps only levels ``M >= M_start`` where ``M_start``
    is the smallest ``M`` with ``2 pi R / M < pi / 4``; every link of the
    chain ``2pi|N.xi|R < (2piR/M)|xi|^{-M} <= 2piR/M < pi/4`` is recorded
    for each retained level.
    """
    if l <= 0:
        raise ValueError("l must be positive")
    if variant not in ("L2", "Linf"):
        raise ValueError("variant must be 'L2' or 'Linf'")
    seq = xi_sequence(frame, M_max, search_radius)
    M_start = 1
    if variant == "Linf":
        M_start = math.floor(8 * R) + 1
    levels, log_c, log_t, modes, chain = [], [], [], {}, []
    for M, xi, dv in seq.entries:
        if M < M_start:
            continue
        ln = _log_norm(xi)
        lc = -l * math.log(M) - M * l * ln
        levels.append((M, xi, dv))
        log_c.append(lc)
        log_t.append(math.log(l) + math.log(M) + M * ln - math.log(TWO_PI))
        c = math.exp(lc)
        modes[xi] = modes.get(xi, 0.0) + c
        mxi = tuple(-v for v in xi)
        modes[mxi] = modes.get(mxi, 0.0) + c
        if variant == "Linf":
            a = TWO_PI * dv * R
            b = TWO_PI * R / M * math.exp(-M * ln)
            chain.append({"M": M, "lhs": a, "mid": b, "upper": TWO_PI * R / M,
                          "holds": bool(a < b <= TWO_PI * R / M < math.pi / 4)})
    v0 = FourierBoundaryData.from_modes(modes) if modes else FourierBoundaryData.constant(0.0)
    return SlowWitness(float(l), seq, v0, levels, log_c, log_t, variant, R if variant == "Linf" else None,
                       M_start, chain)


@dataclass
class WitnessRow:
    M: int
    xi: tuple[int, ...]
    abs_Ndot_xi: float
    t_M: float
    log_value: float
    log_threshold: float
    log_proven: float
    passed: bool
    proven_passed: bool
    skipped: bool = False

    @property
    def value(self) -> float:
        return math.exp(self.log_value)

    @property
    def threshold(self) -> float:
        return math.exp(self.log_threshold)


@dataclass
class WitnessReport:
    rows: list[WitnessRow]
    variant: str
    l: float
    truncated: bool

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.passed for r in self.rows if not r.skipped)

    @property
    def proven_passed(self) -> bool:
        return bool(self.rows) and all(r.proven_passed for r in self.rows if not r.skipped)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["M", "xi1", "xi2", "absNdotxi", "tM", "value", "threshold", "pass"])
        for r in self.rows:
            w.writerow([r.M, r.xi[0], r.xi[1], repr(r.abs_Ndot_xi), repr(r.t_M), repr(r.value),
                        repr(r.threshold), int(r.passed)])
        return buf.getvalue()

    def to_json(self) -> str:
        d = {
            "variant": self.variant,
            "l": self.l,
            "truncated": self.truncated,
            "passed": self.passed,
            "proven_bound_passed": self.proven_passed,
            "rows": [
                {
                    "M": r.M, "xi": list(r.xi), "absNdotxi": r.abs_Ndot_xi, "tM": r.t_M,
                    "log_value": r.log_value, "log_threshold": r.log_threshold,
                    "log_proven_threshold": r.log_proven, "pass": r.passed,
                    "proven_pass": r.proven_passed, "skipped": r.skipped,
                }
                for r in self.rows
            ],
        }
        return json.dumps(d, indent=2, sort_keys=True)


def slow_witness_verify(witness: SlowWitness, frame: NormalFrame) -> WitnessReport:
    """Compare the layer at each ``t_M`` with ``t_M^{-l}``, in log space.

    L2: ``log ||V(., t_M) - vhat(0)||`` from the Parseval sum. Linf: the
    series at ``z1 = 0`` (all cosines equal 1). The proven lower bound
    ``sqrt(2) (l / (2 pi e))^l t_M^{-l}`` is checked alongside.
    """
    l = witness.l
    rates = [TWO_PI * dv for _, _, dv in witness.levels]
    lc = np.array(witness.log_coef)
    rows = []
    for (M, xi, dv), lt in zip(witness.levels, witness.log_t):
        tM = math.exp(lt)
        damp = -np.array(rates) * tM
        if witness.variant == "L2":
            logv = 0.5 * float(logsumexp(math.log(2.0) + 2 * lc + 2 * damp))
        else:
            logv = float(logsumexp(math.log(2.0) + lc + damp))
        thr = -l * lt
        proven = 0.5 * math.log(2.0) + l * (math.log(l) - 1.0 - math.log(TWO_PI)) - l * lt
        skipped = not (math.isfinite(logv) and math.isfinite(thr))
        rows.append(WitnessRow(M, xi, float(dv), tM, logv, thr, proven, bool(logv >= thr),
                               bool(logv >= proven), skipped))
    return WitnessReport(rows, witness.variant, l, witness.xi_seq.truncated)


# ---------------------------------------------------------------------------
# offset dependence of the tail


@dataclass
class OffsetReport:
    offsets: list[float]
    tails: list[float]
    differences: list[float]
    spread: float
    method: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def tail_offset_independence(v0: FourierBoundaryData, coeffs: PeriodicCoefficients | None, frame: NormalFrame,
                             a_list: Sequence[float], path: str = "grid", T: float = 8.0,
                             grid: tuple[int, int] = (32, 256), iota: float | None = None,
                             qmax: int = 1000) -> OffsetReport:
    """Tails for several boundary offsets and their spread around the first.

    Rational directions use the rational tail formula. Irrational directions
    use either the exact series (``path="series"``) or the regularized grid
    solver with plateau tails (``path="grid"``).
    """
    a_list = [float(a) for a in a_list]
    if rationality_test(frame, qmax) is not None:
        tails = [rational_tail_formula(v0, frame, a, qmax) for a in a_list]
        method = "rational-formula"
    elif path == "series":
        tails = [solve_series_laplacian(v0, frame.with_offset(a)).tail for a in a_list]
        method = "series"
    elif path == "grid":
        tails = []
        for a in a_list:
            f = solve_quasiperiodic_regularized(coeffs, v0, frame.with_offset(a), iota, T, grid)
            tails.append(tail_estimate(f, "plateau").value)
        method = "grid"
    else:
        raise ValueError(f"unknown path {path!r}")
    diffs = [abs(t - tails[0]) for t in tails]
    return OffsetReport(a_list, tails, diffs, float(max(diffs)), method)
