import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from blhomlab.cell import (
    CellSolverError,
    constant,
    flux_potential,
    from_samples,
    homogenized_tensor,
    isotropic,
    named_coefficients,
    read_grid_csv,
    solve_cell_problems,
    solve_corrector,
    solve_periodic,
)

SQRT3 = math.sqrt(3.0)


def d_dy(u, axis):
    n = u.shape[axis]
    k = np.fft.fftfreq(n, 1.0 / n)
    k[n // 2] = 0
    shape = [1] * u.ndim
    shape[axis] = n
    return np.fft.ifft(2j * np.pi * k.reshape(shape) * np.fft.fft(u, axis=axis), axis=axis).real


@pytest.fixture(scope="module")
def layered():
    return solve_cell_problems(named_coefficients("layered", 128))


def test_layered_A0_closed_form(layered):
    # harmonic mean of 2 + cos(2 pi y) is sqrt3, arithmetic mean is 2
    assert np.allclose(layered.A0, np.diag([SQRT3, 2.0]), rtol=0, atol=1e-12)


def test_layered_corrector_closed_form(layered):
    n = layered.grid
    y = np.arange(n) / n
    chi1 = np.arctan2(np.sin(np.pi * y), SQRT3 * np.cos(np.pi * y)) / np.pi - y
    assert np.max(np.abs(layered.chi[0] - chi1[:, None])) < 1e-10
    assert np.max(np.abs(layered.chi[1])) < 1e-12


def test_layered_gamma_closed_form(layered):
    n = layered.grid
    y = np.arange(n) / n
    # -(a G')' = B - mean(B) integrates once in y1
    assert np.max(np.abs(d_dy(layered.gamma[0, 0], 0) + layered.chi[0])) < 1e-8
    g22 = -np.sin(2 * np.pi * y) / (2 * np.pi * (2 + np.cos(2 * np.pi * y)))
    assert np.max(np.abs(d_dy(layered.gamma[1, 1], 0) - g22[:, None])) < 1e-8
    assert np.max(np.abs(layered.gamma[0, 1])) < 1e-12
    assert np.max(np.abs(layered.gamma[1, 0])) < 1e-12


def test_mean_of_B_is_A0(layered):
    assert np.allclose(layered.B.mean(axis=(2, 3)), layered.A0, atol=1e-10)


@pytest.mark.parametrize("name", ["layered", "checker", "aniso", "nonsym"])
def test_zero_means(name):
    cs = solve_cell_problems(named_coefficients(name, 32))
    for key, arr in cs.fields().items():
        if key.startswith(("chi", "gamma", "phi", "psi")):
            assert abs(arr.mean()) < 1e-12, key


@pytest.mark.parametrize("name", ["checker", "aniso", "nonsym"])
def test_flux_potential_identities(name):
    cs = solve_cell_problems(named_coefficients(name, 32))
    psi, phi = cs.psi, cs.phi
    # antisymmetric in the first two indices, divergence recovers Phi
    assert np.max(np.abs(psi + np.swapaxes(psi, 0, 1))) < 1e-12
    div = d_dy(psi[0], 2) + d_dy(psi[1], 3)
    assert np.max(np.abs(div - phi)) < 1e-8


@pytest.mark.parametrize("name", ["layered", "checker", "aniso"])
def test_energy_identity(name):
    c = named_coefficients(name, 32)
    cs = solve_cell_problems(c)
    A = c.samples
    for b in range(2):
        g = np.stack([d_dy(cs.chi[b], 0), d_dy(cs.chi[b], 1)])
        g[b] += 1.0
        energy = np.mean(np.einsum("ixy,ijxy,jxy->xy", g, A, g))
        assert energy == pytest.approx(cs.A0[b, b], rel=1e-10)


@pytest.mark.parametrize("name", ["layered", "checker", "aniso"])
def test_voigt_reuss_bounds(name):
    c = named_coefficients(name, 32)
    A0 = solve_cell_problems(c).A0
    assert np.allclose(A0, A0.T, atol=1e-12)
    mean = c.samples.mean(axis=(2, 3))
    inv = np.linalg.inv(np.moveaxis(c.samples, (0, 1), (-2, -1)))
    harm = np.linalg.inv(inv.mean(axis=(0, 1)))
    assert np.all(np.linalg.eigvalsh(mean - A0) >= -1e-12)
    assert np.all(np.linalg.eigvalsh(A0 - harm) >= -1e-12)


def test_transpose_property():
    c = named_coefficients("nonsym", 32)
    A0 = solve_cell_problems(c).A0
    A0t = solve_cell_problems(c.transposed()).A0
    assert not np.allclose(A0, A0.T, atol=1e-3)
    assert np.allclose(A0t, A0.T, atol=1e-10)


@pytest.mark.parametrize("name", ["checker", "aniso", "nonsym"])
def test_spectral_convergence(name):
    a = solve_cell_problems(named_coefficients(name, 32)).A0
    b = solve_cell_problems(named_coefficients(name, 64)).A0
    assert np.max(np.abs(a - b)) < 1e-10


def test_constant_coefficients_trivial():
    A = [[2.0, 0.3], [0.3, 1.0]]
    cs = solve_cell_problems(constant(A, 16))
    assert np.allclose(cs.A0, A, atol=1e-14)
    assert np.max(np.abs(cs.chi)) < 1e-14
    assert np.max(np.abs(cs.gamma)) < 1e-14


@given(st.floats(0.2, 0.9), st.integers(1, 3))
def test_layered_family_harmonic_mean(eps, m):
    # a(y1) = 1 + eps cos(2 pi m y1): A0_11 = sqrt(1 - eps^2), A0_22 = 1.
    # Aliasing error ~ rho^(n/m), rho = (1 - sqrt(1 - eps^2))/eps <= 0.63, so n = 128.
    c = isotropic(lambda y1, y2: 1 + eps * np.cos(2 * np.pi * m * y1), 128)
    A0 = homogenized_tensor(c, solve_corrector(c).chi)
    assert A0[0, 0] == pytest.approx(math.sqrt(1 - eps**2), rel=1e-7)
    assert A0[1, 1] == pytest.approx(1.0, rel=1e-12)


@given(st.floats(0.0, 0.5), st.floats(-0.5, 0.5))
def test_periodic_solve_reduces_to_poisson(shift, amp):
    n = 32
    y = np.arange(n) / n
    f = np.sin(2 * np.pi * (y[:, None] + shift)) * (1 + amp * np.cos(2 * np.pi * y[None, :]))
    f = f - f.mean()
    sol = solve_periodic(constant(np.eye(2), n), [f]).solutions[0]
    k = np.fft.fftfreq(n, 1.0 / n)
    k2 = (2 * np.pi) ** 2 * (k[:, None] ** 2 + k[None, :] ** 2)
    k2[0, 0] = 1.0
    exact = np.fft.ifft2(np.fft.fft2(f) / k2).real
    assert np.max(np.abs(sol - exact)) < 1e-9


def test_csv_roundtrip(tmp_path, layered):
    paths = layered.save(tmp_path)
    assert {p.name for p in paths} >= {"chi_1.csv", "gamma_11.csv", "psi_121.csv"}
    name, arr = read_grid_csv(tmp_path / "chi_1.csv")
    assert name == "chi_1"
    assert np.array_equal(arr, layered.chi[0])
    assert (tmp_path / "chi_1.csv").read_text().startswith("# grid=128 field=chi_1")


def test_input_validation():
    with pytest.raises(ValueError):
        from_samples(np.ones((2, 2, 12, 12)))
    bad = np.zeros((2, 2, 16, 16))
    with pytest.raises(ValueError):
        from_samples(bad)
    with pytest.raises(ValueError):
        solve_corrector(named_coefficients("layered", 8))


def test_flux_potential_detects_unconverged():
    c = named_coefficients("checker", 32)
    with pytest.raises(CellSolverError):
        flux_potential(c, np.zeros((2, 32, 32)))


def test_nonconvergence_raises():
    c = named_coefficients("aniso", 32)
    with pytest.raises(CellSolverError) as exc:
        solve_corrector(c, tol=1e-14, maxiter=2)
    assert exc.value.residual > 1e-14
