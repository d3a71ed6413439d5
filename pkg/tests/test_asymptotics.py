import json
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blhomlab.asymptotics import (
    FitError,
    PlateauError,
    decay_report,
    ergodic_mean,
    fit_exponential,
    fit_power,
    line_average,
    rational_tail_formula,
    slow_witness_build,
    slow_witness_verify,
    small_divisor_decay_check,
    tail_estimate,
    tail_offset_independence,
    torus_mean,
)
from blhomlab.blsolver import FourierBoundaryData, solve_rational_strip, solve_series_laplacian
from blhomlab.config import twenty_modes
from blhomlab.geometry import axis_frame, build_frame, golden_frame, liouville_direction

TWO_PI = 2 * math.pi


# --- ergodic means -------------------------------------------------------------


def F(th):
    return np.cos(TWO_PI * th[..., 0]) + 0.5 * np.sin(TWO_PI * (th[..., 0] - 2 * th[..., 1])) + 0.3


def test_torus_mean_exact():
    assert torus_mean(F, 16) == pytest.approx(0.3, abs=1e-15)


def test_golden_ergodic_mean_converges_like_one_over_R():
    res = ergodic_mean(F, golden_frame(), [10, 100, 1000])
    assert not res.resonant
    for R, gap in zip(res.radii, res.gaps):
        # each mode averages to at most 1 / (pi R |N.xi|) with |N.xi| >= 0.5
        assert gap <= 1.5 / (math.pi * R * 0.5)
    assert res.gaps[-1] < 1e-3


def test_rational_direction_resonant():
    G = lambda th: np.cos(TWO_PI * th[..., 1])  # noqa: E731
    res = ergodic_mean(G, axis_frame(), [10, 50])
    assert res.resonant
    assert res.means[-1] == pytest.approx(1.0, abs=1e-12)


def test_line_average_constant():
    assert line_average(lambda y: np.full(len(y), 2.5), golden_frame(), 3.7) == pytest.approx(2.5, rel=1e-14)


# --- fits -----------------------------------------------------------------------


@given(st.floats(0.1, 10), st.floats(1e-3, 1e3))
def test_exponential_fit_recovers_rate(kappa, C):
    t = np.linspace(0, 3, 20)
    fit = fit_exponential(t, C * np.exp(-kappa * t))
    assert fit.rate == pytest.approx(kappa, rel=1e-9)
    assert fit.C == pytest.approx(C, rel=1e-9)
    assert not fit.downgraded


@given(st.floats(-6, -0.5))
def test_power_fit_recovers_slope(p):
    t = np.geomspace(1, 100, 30)
    fit = fit_power(t, 2.0 * t**p)
    assert fit.rate == pytest.approx(p, rel=1e-9)
    assert fit_exponential(t, 2.0 * t**p).downgraded


def test_fit_needs_four_points():
    with pytest.raises(FitError):
        fit_exponential([0, 1, 2, 3], [1, 0.5, 0, -1])


# --- decay and tails ------------------------------------------------------------


def test_decay_report_axis_rate():
    f = solve_series_laplacian(FourierBoundaryData.sine((1, 0)), axis_frame())
    rep = decay_report(f, np.linspace(0, 3, 31))
    assert rep.model["kind"] == "exponential"
    assert rep.model["kappa"] == pytest.approx(TWO_PI, rel=1e-10)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "t,l2,linf" and len(lines) == 32


def test_golden_superpolynomial_flat():
    f = solve_series_laplacian(twenty_modes(), golden_frame())
    rep = small_divisor_decay_check(f, [1, 2, 3, 4], np.linspace(1, 50, 2000))
    assert rep.passed
    assert all(np.isfinite(rep.sups))


def test_superpolynomial_detects_growth():
    # t^8 e^{-r t} peaks at t = 8/r, inside the top decade of [0.1, 5]
    f = solve_series_laplacian(FourierBoundaryData.cosine((-1, 0)), liouville_direction(3))
    assert 0.5 < 8 / f.rates[f.nonzero].min() < 5
    rep = small_divisor_decay_check(f, [8], np.linspace(0.1, 5, 500))
    assert not rep.passed


def test_plateau_tail_and_error():
    v = FourierBoundaryData.sine((1, 0)) + FourierBoundaryData.constant(0.7)
    f = solve_rational_strip(None, v, axis_frame(), 6.0, (32, 256))
    est = tail_estimate(f)
    assert est.value == pytest.approx(0.7, abs=1e-6)
    with pytest.raises(PlateauError):
        tail_estimate(f, tolerance=0.0 if est.uncertainty > 0 else -1.0)


def test_rational_tail_formula_offsets():
    v = FourierBoundaryData.cosine((0, 1))
    fr = axis_frame()
    assert rational_tail_formula(v, fr, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert rational_tail_formula(v, fr, 0.25) == pytest.approx(0.0, abs=1e-12)


@given(st.floats(0, 1))
def test_rational_tail_formula_tilted(a):
    # n = (1, 1)/sqrt2: cos(2 pi (y1 + y2)) is constant sqrt2 a along the boundary
    v = FourierBoundaryData.cosine((1, 1)) + FourierBoundaryData.sine((1, 0))
    got = rational_tail_formula(v, build_frame([1, 1]), a)
    assert got == pytest.approx(math.cos(TWO_PI * math.sqrt(2) * a), abs=1e-10)


def test_tail_offset_series_path_irrational():
    v = FourierBoundaryData.cosine((1, 0)) + FourierBoundaryData.constant(0.2)
    rep = tail_offset_independence(v, None, golden_frame(), [0, 0.3, 0.7], path="series")
    assert rep.spread == 0.0
    assert rep.method == "series"


# --- slow-convergence witness -----------------------------------------------------


def mp_witness_norms(l, levels, slope):
    """Direct L2 summation at 50 digits, independent of the library's log-space path."""
    mpmath.mp.dps = 50
    L = mpmath.mpf(slope.numerator) / slope.denominator
    s = mpmath.sqrt(1 + L * L)
    out = []
    data = [(M, xi, mpmath.mpf(M) ** (-l) * mpmath.sqrt(xi[0] ** 2 + xi[1] ** 2) ** (-M * l)) for M, xi in levels]
    for M, xi, _ in data:
        tM = l * M * mpmath.sqrt(xi[0] ** 2 + xi[1] ** 2) ** M / (2 * mpmath.pi)
        tot = mpmath.mpf(0)
        for _, x, c in data:
            r = 2 * mpmath.pi * abs(x[0] + L * x[1]) / s
            tot += 2 * c**2 * mpmath.exp(-2 * r * tM)
        out.append((tM, mpmath.sqrt(tot)))
    return out


@pytest.mark.parametrize("l", [1.0, 2.0])
def test_witness_matches_mpmath(l):
    fr = liouville_direction(3)
    w = slow_witness_build(fr, l, 3)
    rep = slow_witness_verify(w, fr)
    ref = mp_witness_norms(l, [(M, xi) for M, xi, _ in w.levels], fr.slope_exact)
    assert len(rep.rows) == len(ref) == 1
    for row, (tM, val) in zip(rep.rows, ref):
        assert row.t_M == pytest.approx(float(tM), rel=1e-14)
        assert row.log_value == pytest.approx(float(mpmath.log(val)), abs=1e-12)


@pytest.mark.parametrize("l,gap", [(1.0, -2.4853), (2.0, -3.9309)])
def test_witness_literal_bound_fails_proven_holds(l, gap):
    fr = liouville_direction(3)
    rep = slow_witness_verify(slow_witness_build(fr, l, 3), fr)
    row = rep.rows[0]
    assert row.log_value - row.log_threshold == pytest.approx(gap, abs=1e-4)
    assert not rep.passed
    assert rep.proven_passed
    # closed form: sqrt2 e^{-l |N.xi_1|} against sqrt2 e^{-l}
    assert row.log_value - row.log_proven == pytest.approx(l * (1 - row.abs_Ndot_xi), rel=1e-12)


def test_witness_serialization():
    fr = liouville_direction(3)
    rep = slow_witness_verify(slow_witness_build(fr, 1.0, 3), fr)
    assert rep.to_csv().splitlines()[0] == "M,xi1,xi2,absNdotxi,tM,value,threshold,pass"
    d = json.loads(rep.to_json())
    assert d["truncated"] and d["rows"][0]["xi"] == [-1, 0]


def test_witness_linf_start_level():
    fr = liouville_direction(3)
    w = slow_witness_build(fr, 1.0, 3, variant="Linf", R=1.0)
    assert w.M_start == 9
    assert w.levels == []
    assert not slow_witness_verify(w, fr).passed


def test_witness_data_hermitian_and_real():
    fr = liouville_direction(3)
    w = slow_witness_build(fr, 2.0, 3)
    assert np.allclose(w.v0.coef.imag, 0)
    assert w.v0.mean == 0.0
    assert w.t_list[0] == pytest.approx(2.0 / TWO_PI)
    assert fr.slope_exact == Fraction(110001, 1000000)
