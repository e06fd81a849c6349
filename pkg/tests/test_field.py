import dataclasses

import numpy as np
import pytest

from levycarma.errors import GridMismatchError, PaddingError, PreconditionError, WrapAroundError
from levycarma.field import (FieldRealization, bump, fubini_check, pair_generalized, pair_whitenoise,
                             simulate_fields, simulate_mild, spde_residual, wrap_fraction)
from levycarma.grid import GridSpec
from levycarma.kernels import Carma1dStateSpace, kernel_carma1d, kernel_fft, kernel_regularized
from levycarma.levy import CellNoise, LevyTriplet, levy_measure, simulate_cells
from levycarma.poly import MultiPolynomial, apply_operator, parse_polynomial


@pytest.fixture(scope="module")
def grid1():
    return GridSpec.centered((512,), (0.1,))


@pytest.fixture(scope="module")
def carma(grid1):
    return kernel_carma1d(Carma1dStateSpace([1.0], [1.0]), grid1)


@pytest.fixture(scope="module")
def gauss():
    return LevyTriplet(1.0, 0.0, levy_measure("zero"))


def zero_noise(spec):
    return CellNoise(spec, np.zeros(spec.shape), 0, 0, 0.0)


# -- bump --------------------------------------------------------------------

def test_bump_center_and_edge():
    spec = GridSpec.centered((301,), (0.01,))
    phi = bump(0.0, 1.0, np.e, spec)
    t = spec.axes()[0]
    assert phi.values[np.argmin(np.abs(t))] == pytest.approx(1.0, abs=1e-15)
    assert phi.values[np.argmin(np.abs(t - 1.0))] == 0.0
    assert phi.values[np.argmin(np.abs(t + 1.0))] == 0.0
    assert np.all(phi.values >= 0)


def test_bump_symmetric():
    spec = GridSpec.centered((129, 129), (0.05, 0.05))
    phi = bump((0.0, 0.0), 1.5, 1.0, spec)
    np.testing.assert_array_equal(phi.values, phi.values[::-1, ::-1])
    np.testing.assert_array_equal(phi.values, phi.values.T)


def test_bump_derivative_vanishes_at_center():
    spec = GridSpec.centered((257,), (0.02,))
    phi = bump(0.0, 1.0, np.e, spec)
    dphi = apply_operator(parse_polynomial("x", 1), phi.values, spec.spacing)
    assert abs(dphi[spec.zero_index()]) <= 1e-8 * np.max(np.abs(dphi))


def test_bump_support_violation(grid1):
    with pytest.raises(PaddingError):
        bump(25.0, 1.0, 1.0, grid1)


def test_bump_integral_metadata(grid1):
    phi = bump(0.0, 1.0, np.e, grid1)
    assert phi.integral == pytest.approx(np.sum(phi.values) * 0.1)


# -- simulate_mild -----------------------------------------------------------

def test_mild_zero_noise(carma, grid1):
    X = simulate_mild(carma, zero_noise(grid1))
    assert np.all(X.values == 0)


def test_mild_point_mass_returns_kernel(carma, grid1):
    n = CellNoise.point_mass(grid1, (100,))
    X = simulate_mild(carma, n)
    t = grid1.axes()[0]
    shifted = np.where(t - t[100] >= 0, np.exp(-(t - t[100])), 0.0)
    # X(t) = G(t - x0); beyond the grid the circular copy is below the wrap tolerance
    inside = t - t[100] < 10
    assert np.max(np.abs(X.values[inside] - shifted[inside])) <= 1e-12


def test_mild_linear_in_noise(carma, grid1, gauss):
    n1 = simulate_cells(gauss, grid1, seed=1)
    n2 = simulate_cells(gauss, grid1, seed=2)
    both = CellNoise(grid1, n1.values + 2 * n2.values, 0, 0, 0.0)
    X = simulate_mild(carma, both).values
    ref = simulate_mild(carma, n1).values + 2 * simulate_mild(carma, n2).values
    assert np.max(np.abs(X - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_mild_grid_mismatch(carma):
    other = GridSpec.centered((256,), (0.1,))
    with pytest.raises(GridMismatchError):
        simulate_mild(carma, zero_noise(other))


def test_mild_wraparound_refused(gauss):
    spec = GridSpec.centered((64,), (0.1,))
    K = kernel_carma1d(Carma1dStateSpace([0.2], [1.0]), spec)
    assert wrap_fraction(K) > 1e-6
    with pytest.raises(WrapAroundError):
        simulate_mild(K, simulate_cells(gauss, spec, seed=0))
    simulate_mild(K, simulate_cells(gauss, spec, seed=0), wrap_tol=None)


def test_field_file_round_trip(tmp_path, carma, grid1, gauss):
    X = simulate_mild(carma, simulate_cells(gauss, grid1, seed=3, stream=4))
    X.save(tmp_path / "f.grid")
    Y = FieldRealization.load(tmp_path / "f.grid")
    np.testing.assert_array_equal(X.values, Y.values)
    assert Y.provenance["seed"] == 3 and Y.provenance["stream"] == 4
    assert Y.provenance["construction"] == "mild_convolution"


def test_simulate_fields_parallel_matches_serial(carma, grid1, gauss):
    a = simulate_fields(carma, gauss, grid1, [3, 1, 2], seed=5, workers=1)
    b = simulate_fields(carma, gauss, grid1, [1, 2, 3], seed=5, workers=3)
    assert [f.provenance["stream"] for f in a] == [1, 2, 3]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)


# -- pairings ----------------------------------------------------------------

def test_pair_whitenoise_point_mass(grid1):
    phi = bump(0.0, 1.0, np.e, grid1)
    n = CellNoise.point_mass(grid1, (130,))
    assert pair_whitenoise(n, phi) == phi.values[130]
    assert pair_whitenoise(zero_noise(grid1), phi) == 0.0


def test_pair_whitenoise_translation_covariance(grid1, gauss):
    n = simulate_cells(gauss, grid1, seed=9)
    phi = bump(0.0, 1.0, 1.0, grid1)
    phi_shift = dataclasses.replace(phi, values=np.roll(phi.values, 1))
    n_shift = CellNoise(grid1, np.roll(n.values, 1), 0, 0, 0.0)
    # identical products, summed in a rotated order
    assert pair_whitenoise(n_shift, phi_shift) == pytest.approx(pair_whitenoise(n, phi), rel=1e-14)


def test_pair_whitenoise_gaussian_variance():
    spec = GridSpec.centered((64,), (0.1,))
    gauss = LevyTriplet(1.0, 0.0, levy_measure("zero"))
    phi = bump(0.0, 1.5, 1.0, spec)
    vals = [pair_whitenoise(simulate_cells(gauss, spec, seed=0, stream=s), phi) for s in range(10_000)]
    target = float(np.sum(phi.values ** 2) * spec.cell_volume)
    assert np.var(vals) == pytest.approx(target, rel=0.05)


def test_pair_generalized_identity_equation(grid1, gauss):
    one = MultiPolynomial.constant(1.0, 1)
    K = kernel_regularized(one, one, 1, grid1)
    phi = bump(0.0, 1.0, np.e, grid1)
    n = simulate_cells(gauss, grid1, seed=11)
    g, w = pair_generalized(K, 1, n, phi), pair_whitenoise(n, phi)
    assert abs(g - w) <= 1e-10 * abs(w)


def test_pair_generalized_point_mass_direct_sum(grid1):
    p, q = parse_polynomial("1 + x", 1), parse_polynomial("1", 1)
    K = kernel_regularized(p, q, 1, grid1)
    phi = bump(0.0, 1.0, np.e, grid1)
    x0 = 140
    n = CellNoise.point_mass(grid1, (x0,))
    g = pair_generalized(K, 1, n, phi)
    # w(x0) = sum_y G(x0 - y) ((1 - D^2) phi)(y) v, as a direct circular sum
    psi_phi = apply_operator(parse_polynomial("1 - x^2", 1), phi.values, grid1.spacing)
    G = K.values
    zi = grid1.zero_index()[0]
    N = grid1.shape[0]
    direct = sum(G[(x0 - y + zi) % N] * psi_phi[y] for y in range(N)) * grid1.cell_volume
    assert g == pytest.approx(direct, rel=1e-10)


def test_pair_generalized_linear_in_phi(grid1, gauss):
    p, q = parse_polynomial("1 + x", 1), parse_polynomial("1", 1)
    K = kernel_regularized(p, q, 1, grid1)
    n = simulate_cells(gauss, grid1, seed=12)
    f1, f2 = bump(0.0, 1.0, 1.0, grid1), bump(2.0, 1.5, 1.0, grid1)
    combo = pair_generalized(K, 1, n, f1.values + 2 * f2.values)
    parts = pair_generalized(K, 1, n, f1) + 2 * pair_generalized(K, 1, n, f2)
    assert combo == pytest.approx(parts, rel=1e-12)


def test_pair_generalized_alpha_mismatch(grid1, gauss):
    one = MultiPolynomial.constant(1.0, 1)
    K = kernel_regularized(one, one, 1, grid1)
    with pytest.raises(PreconditionError):
        pair_generalized(K, 2, simulate_cells(gauss, grid1, seed=0), bump(0.0, 1.0, 1.0, grid1))


# -- SPDE identity -----------------------------------------------------------

@pytest.mark.parametrize("d, q_text", [(1, "1"), (1, "1 + x1"), (2, "1"), (2, "1 + x1")])
def test_spde_residual_vanishes(d, q_text, gauss):
    spec = GridSpec.centered((256,), (0.1,)) if d == 1 else GridSpec.centered((64, 64), (0.2, 0.2))
    p = parse_polynomial("-1 + " + " + ".join(f"x{k + 1}^2" for k in range(d)), d)
    q = parse_polynomial(q_text, d)
    K = kernel_regularized(p, q, 1, spec)
    phi = bump((0.0,) * d, 1.0, np.e, spec)
    for seed in range(3):
        r = spde_residual(p, q, K, 1, simulate_cells(gauss, spec, seed=seed), phi)
        assert r.relative <= 1e-8
    faulty = spde_residual(p, q, K, 1, simulate_cells(gauss, spec, seed=0), phi, fault=1e-3)
    assert faulty.relative > 1e-5


# -- Fubini ------------------------------------------------------------------

def test_fubini_point_mass(carma, grid1):
    phi = bump(0.0, 1.0, np.e, grid1)
    x0 = 120
    res = fubini_check(carma, CellNoise.point_mass(grid1, (x0,)), phi)
    G = carma.values
    zi = grid1.zero_index()[0]
    N = grid1.shape[0]
    direct = sum(G[(i - x0 + zi) % N] * phi.values[i] for i in range(N)) * grid1.cell_volume
    assert res.lhs == pytest.approx(direct, rel=1e-12)
    assert res.rhs == pytest.approx(direct, rel=1e-12)


def test_fubini_zero_noise(carma, grid1):
    res = fubini_check(carma, zero_noise(grid1), bump(0.0, 1.0, 1.0, grid1))
    assert (res.lhs, res.rhs, res.diff, res.relative) == (0.0, 0.0, 0.0, 0.0)


def test_fubini_random_noise(carma, grid1, gauss):
    phi = bump(0.0, 1.0, np.e, grid1)
    for seed in range(10):
        assert fubini_check(carma, simulate_cells(gauss, grid1, seed=seed), phi).relative <= 1e-10


def test_mild_variance_matches_isometry(gauss):
    spec = GridSpec.centered((100_000,), (0.01,))
    K = kernel_carma1d(Carma1dStateSpace([1.0], [1.0]), spec)
    # one realization has about 4.5% relative spread in its spatial variance, so average ten
    var = np.mean([np.var(simulate_mild(K, simulate_cells(gauss, spec, seed=0, stream=s)).values)
                   for s in range(10)])
    # the right-continuous Riemann sum of e^{-2t} at h = 0.01 is 0.50502
    assert var == pytest.approx(0.5, rel=0.05)
