import math

import numpy as np
import pytest

from levycarma.errors import ConfigError
from levycarma.grid import GridSpec
from levycarma.levy import (CellNoise, LevyTriplet, Weight, cell_moments, char_exponent, levy_measure, nu_integral,
                            simulate_cells, small_jump_cf_bound, tail_diverges)


def triplet(a=0.0, gamma=0.0, family="zero", **kw):
    return LevyTriplet(a, gamma, levy_measure(family, **kw))


# -- exponent ------------------------------------------------------------------

def test_exponent_gaussian():
    assert char_exponent(triplet(a=1.0), 2.0) == pytest.approx(-2.0)


def test_exponent_drift():
    assert char_exponent(triplet(gamma=3.0), 1.0) == pytest.approx(3j)


@pytest.mark.parametrize("z", [-2.0, 0.3, 1.0, 5.0])
def test_exponent_compensated_atom(z):
    c = 1.7
    got = char_exponent(triplet(family="finite_atomic", atoms=[1.0], masses=[c]), z)
    assert got == pytest.approx(c * (np.exp(1j * z) - 1 - 1j * z), abs=1e-12)


def test_exponent_quadrature_matches_closed_form():
    # the generic oscillatory-quadrature path against the closed form of a finite measure
    from levycarma.levy import LevyMeasureSpec
    nu = levy_measure("compound_poisson", intensity=2.0, jump="normal", mean=0.4, std=0.7)
    for z in (0.5, 2.0, -3.0):
        assert LevyMeasureSpec.exponent(nu, z) == pytest.approx(nu.exponent(z), abs=1e-8)


def test_exponent_at_zero_vanishes():
    t = triplet(a=1.0, gamma=2.0, family="two_sided_pareto", theta=1.5)
    assert char_exponent(t, 0.0) == 0


# -- tail integrals ----------------------------------------------------------

def test_nu_integral_atom_log_weight():
    nu = levy_measure("finite_atomic", atoms=[2.0], masses=[3.0])
    assert nu_integral(nu, Weight.log_power_law(2)) == pytest.approx(3 * math.log(2) ** 2, rel=1e-12)
    assert 3 * math.log(2) ** 2 == pytest.approx(1.44136, abs=1e-5)


def test_nu_integral_pareto_power():
    nu = levy_measure("two_sided_pareto", theta=2.0, w_minus=0.0)
    assert nu_integral(nu, Weight.power_law(1.0)) == pytest.approx(2.0, rel=1e-10)
    assert nu_integral(nu, Weight.power_law(2.5)) == math.inf


def test_pareto_custom_weight_near_threshold():
    nu = levy_measure("two_sided_pareto", theta=2.0, w_minus=0.0)
    w = Weight(lambda r: r ** 1.9, 1.9, 0.0, "custom")
    assert nu_integral(nu, w) == pytest.approx(2.0 / 0.1, rel=1e-6)


def test_divergence_tests():
    assert tail_diverges(levy_measure("log_pareto", kappa=2.0), Weight.log_power_law(2))
    assert not tail_diverges(levy_measure("log_pareto", kappa=2.5), Weight.log_power_law(2))
    assert tail_diverges(levy_measure("log_pareto", kappa=5.0), Weight.power_law(0.01))
    assert not tail_diverges(levy_measure("gamma_subordinator", shape=1, rate=1), Weight.power_law(50))


def test_log_pareto_log_moment():
    nu = levy_measure("log_pareto", kappa=3.0, weight=2.0)
    assert nu_integral(nu, Weight.log_power_law(1)) == pytest.approx(2.0 * 3.0 / 2.0)


# -- moments -------------------------------------------------------------------

def test_cell_moments_gaussian():
    m = cell_moments(triplet(a=1.0), 2.0)
    assert (m.mean, m.variance) == (0.0, 2.0)


def test_cell_moments_pareto():
    m = cell_moments(triplet(family="two_sided_pareto", theta=3.0, w_minus=0.0), 1.0)
    assert m.mean == pytest.approx(1.5, rel=1e-10)
    assert m.variance == pytest.approx(3.0, rel=1e-10)  # int_1^inf r^2 3 r^-4 dr
    m = cell_moments(triplet(family="two_sided_pareto", theta=1.5, w_minus=0.0), 1.0)
    assert not m.variance_defined and m.mean_defined


def test_invalid_measures_rejected():
    with pytest.raises(ConfigError):
        levy_measure("finite_atomic", atoms=[0.0], masses=[1.0])
    with pytest.raises(ConfigError):
        levy_measure("no_such_family")
    with pytest.raises(ConfigError):
        LevyTriplet(-1.0)


# -- simulation ----------------------------------------------------------------

def test_gaussian_cells():
    spec = GridSpec.centered((100000,), (0.01,))
    n = simulate_cells(triplet(a=1.0), spec, seed=3)
    assert n.values.var() == pytest.approx(0.01, rel=0.03)


def test_compensated_atom_cells():
    spec = GridSpec.centered((100000,), (0.5,))
    n = simulate_cells(triplet(family="finite_atomic", atoms=[1.0], masses=[2.0]), spec, delta=0.5, seed=4)
    assert abs(n.values.mean()) <= 0.03
    assert n.values.var() == pytest.approx(1.0, rel=0.03)


def test_degenerate_triplet_gives_exact_zeros():
    spec = GridSpec.centered((1000,), (0.1,))
    assert not np.any(simulate_cells(triplet(), spec, seed=1).values)


def test_gamma_cells_variance():
    spec = GridSpec.centered((100000,), (0.5,))
    t = triplet(family="gamma_subordinator", shape=1.5, rate=2.0)
    n = simulate_cells(t, spec, delta=0.01, seed=5)
    assert n.values.var() == pytest.approx(0.5 * 1.5 / 4.0, rel=0.05)


def test_streams_are_reproducible_and_worker_independent():
    spec = GridSpec.centered((200000,), (0.1,))
    t = triplet(a=0.5, family="compound_poisson", intensity=3.0)
    a = simulate_cells(t, spec, seed=9, stream=2, workers=1).values
    b = simulate_cells(t, spec, seed=9, stream=2, workers=4).values
    c = simulate_cells(t, spec, seed=9, stream=3).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_cell_noise_file_round_trip(tmp_path):
    spec = GridSpec.centered((8, 6), (0.1, 0.2))
    n = simulate_cells(triplet(a=1.0), spec, seed=1, stream=4)
    n.save(tmp_path / "n.grid")
    m = CellNoise.load(tmp_path / "n.grid")
    assert np.array_equal(m.values, n.values) and m.spec == spec and (m.seed, m.stream) == (1, 4)


def test_small_jump_bound_is_small_for_small_cutoff():
    t = triplet(family="gamma_subordinator", shape=1.0, rate=1.0)
    assert small_jump_cf_bound(t, 0.01, 0.01, 3.0) < 1e-6
