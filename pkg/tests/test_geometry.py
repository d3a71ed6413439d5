import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blhomlab.geometry import (
    GeometryError,
    NoWitnessError,
    axis_frame,
    build_frame,
    continued_fraction,
    divisors,
    golden_frame,
    liouville_direction,
    rationality_test,
    small_divisor_scan,
    tangent_slope_frame,
    xi_sequence,
)

PHI = (1 + math.sqrt(5)) / 2

nonzero_vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


@given(nonzero_vec, st.floats(-5, 5))
def test_frame_is_orthogonal_with_normal_last(v, a):
    fr = build_frame(v, a)
    d = len(v)
    assert fr.M.shape == (d, d)
    assert np.allclose(fr.M.T @ fr.M, np.eye(d), atol=1e-12)
    assert np.allclose(fr.M[:, -1], fr.n)
    assert np.allclose(fr.n, np.asarray(v) / np.linalg.norm(v))
    assert fr.a == a


@given(nonzero_vec, st.lists(st.integers(-50, 50), min_size=3, max_size=3))
def test_orthogonal_decomposition(v, xi):
    fr = build_frame(v)
    xi = np.array(xi[: fr.d])
    tang = fr.N.T @ xi
    assert np.isclose(tang @ tang + (xi @ fr.n) ** 2, xi @ xi, rtol=1e-12, atol=1e-9)
    assert np.isclose(float(divisors(fr, xi)[0]), np.linalg.norm(tang), rtol=1e-12, atol=1e-12)


def test_frame_rejects_bad_normals():
    for bad in ([0, 0], [1, np.nan], [1, 2, 3, 4], [1]):
        with pytest.raises(GeometryError):
            build_frame(bad)


def test_frame_is_read_only():
    fr = golden_frame()
    with pytest.raises(ValueError):
        fr.n[0] = 1.0


def test_golden_frame_small_divisor_constant():
    # the smallest divisor on |xi| = 1 is the tangential rate 1/sqrt(1 + phi^2)
    fr = golden_frame()
    rep = small_divisor_scan(fr, 0.0, 1)
    assert rep.best_constant == pytest.approx(1 / math.sqrt(1 + PHI**2), rel=1e-12)
    assert not rep.rational_warning


@pytest.mark.parametrize("r1,r2", [(10, 40), (40, 150)])
def test_scan_monotone_in_radius(r1, r2):
    fr = golden_frame()
    assert small_divisor_scan(fr, 0.5, r2).best_constant <= small_divisor_scan(fr, 0.5, r1).best_constant


def test_golden_constant_bounded_below():
    # Hurwitz: |q phi - p| q >~ 1/sqrt5, so |N.xi| |xi|^2 stays of order one
    rep = small_divisor_scan(golden_frame(), 0.0, 1000)
    assert 0.1 < rep.best_constant < 1.0


def test_scan_reproducible_and_serializable():
    fr = golden_frame()
    a = small_divisor_scan(fr, 0.0, 60)
    b = small_divisor_scan(fr, 0.0, 60)
    assert a.to_csv() == b.to_csv()
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert d["worst_xi"] == list(a.worst_xi)
    assert a.to_csv().splitlines()[0] == "xi1,xi2,abs_Ndot_xi,norm_xi,violates"


def test_rational_scan_flags_parallel_multiples():
    fr = build_frame([1, 2])
    rep = small_divisor_scan(fr, 0.0, 10)
    assert rep.rational_warning
    assert rep.rational_direction == (1, 2)
    assert rep.best_constant == 0.0
    for k in (1, 2, 3, 4):
        assert ((k, 2 * k), 0.0) in rep.violations


@pytest.mark.parametrize("v,p", [([0, 1], (0, 1)), ([2, 4], (1, 2)), ([-3, 6], (-1, 2)), ([1, 1, 0], (1, 1, 0))])
def test_rationality_test_primitive(v, p):
    got = rationality_test(build_frame(v), 100)
    assert tuple(got) == p or tuple(-got) == p
    assert math.gcd(*[abs(int(c)) for c in got]) == 1


def test_rationality_test_irrational():
    assert rationality_test(golden_frame(), 10_000) is None


def test_axis_frame():
    fr = axis_frame(2)
    assert np.allclose(fr.n, [0, 1])
    assert fr.label == "axis"


def test_continued_fraction_golden_fibonacci():
    cf = continued_fraction(Fraction(PHI), 20)
    assert cf.partial_quotients[:20] == [1] * 20
    fib = [1, 1]
    while len(fib) < 22:
        fib.append(fib[-1] + fib[-2])
    assert cf.convergents == [(fib[k + 1], fib[k]) for k in range(20)]
    # best approximation inequality |phi - p/q| < 1/q^2
    for p, q in cf.convergents:
        assert abs(PHI - p / q) < 1 / q**2


def test_continued_fraction_rational_terminates():
    cf = continued_fraction(Fraction(43, 19), 10)
    assert cf.terminated
    assert cf.partial_quotients == [2, 3, 1, 4]
    assert cf.convergents[-1] == (43, 19)


@given(st.fractions(min_value=-20, max_value=20, max_denominator=500))
def test_continued_fraction_roundtrip(x):
    cf = continued_fraction(x, 64)
    assert cf.terminated
    p, q = cf.convergents[-1]
    assert Fraction(p, q) == x


def test_liouville_levels():
    fr = liouville_direction(3)
    assert fr.slope_exact == Fraction(110001, 1000000)
    assert fr.validity_radius is not None
    with pytest.raises(GeometryError):
        liouville_direction(5)


def test_xi_sequence_liouville():
    fr = liouville_direction(3)
    seq = xi_sequence(fr, 3, 10_000)
    assert [e[0] for e in seq.entries] == [1]
    assert seq.entries[0][1] == (-1, 0)
    assert seq.truncated
    # the condition |N.xi| < (1/M) |xi|^-M holds for the retained level
    M, xi, dv = seq.entries[0]
    assert dv < 1.0 / M * np.linalg.norm(xi) ** (-M)


def test_xi_sequence_golden_levels():
    seq = xi_sequence(golden_frame(), 2, 2000)
    prev = None
    for M, xi, dv in seq.entries:
        nrm = math.hypot(*xi)
        assert dv < nrm ** (-M) / M
        if prev is not None:
            assert nrm > prev + 1
        prev = nrm


def test_xi_sequence_rejects_rational():
    with pytest.raises(GeometryError):
        xi_sequence(axis_frame(2), 2, 100)


def test_xi_sequence_validity_radius():
    with pytest.raises(GeometryError):
        xi_sequence(liouville_direction(3), 2, 10**7)


def test_no_witness_error_is_geometry_error():
    assert issubclass(NoWitnessError, GeometryError)


def test_tangent_slope_frame():
    fr = tangent_slope_frame(0.5)
    assert np.isclose(fr.N[:, 0] @ fr.n, 0.0)
    assert np.isclose(abs(fr.N[1, 0] / fr.N[0, 0]), 0.5)
