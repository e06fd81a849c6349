import math

import numpy as np
import pytest

from levycarma.errors import (ConfigError, GridMismatchError, NotAFunctionError, PreconditionError,
                              StationarityError)
from levycarma.grid import GridSpec
from levycarma.kernels import (BMKernelSpec, Carma1dStateSpace, Envelope, KernelGrid, kernel_bm, kernel_carma1d,
                               kernel_delta, kernel_fft, kernel_functionals, kernel_matern3, kernel_regularized)
from levycarma.poly import parse_polynomial


def P(text, d=1):
    return parse_polynomial(text, d)


@pytest.fixture(scope="module")
def long_line():
    return GridSpec.centered((2 ** 14,), (80.0 / 2 ** 14,))


# -- kernel_fft --------------------------------------------------------------

def test_fft_causal_exponential(long_line):
    K = kernel_fft(P("1 + x"), P("1"), long_line)
    t = long_line.axes()[0]
    sel = (t >= 0) & (t <= 10)
    assert np.max(np.abs(K.values[sel] - np.exp(-t[sel]))) <= 1e-4
    assert np.max(np.abs(K.values[t < -1e-9])) <= 1e-4


def test_fft_symmetric_exponential(long_line):
    # symbol of 1 - x^2 at i xi is 1 + xi^2
    K = kernel_fft(P("1 - x^2"), P("1"), long_line)
    t = long_line.axes()[0]
    sel = np.abs(t) <= 10
    assert np.max(np.abs(K.values[sel] - 0.5 * np.exp(-np.abs(t[sel])))) <= 1e-4


def test_fft_q_equal_p_is_not_a_function(line):
    with pytest.raises(NotAFunctionError):
        kernel_fft(P("1 + x"), P("1 + x"), line)


def test_fft_dimension_mismatch(line):
    with pytest.raises(GridMismatchError):
        kernel_fft(P("1 + x1^2 + x2^2", 2), P("1", 2), line)


def test_fft_values_real_and_envelope_bounds_shell(long_line):
    K = kernel_fft(P("2 + x"), P("1"), long_line)
    assert K.values.dtype == np.float64
    env = K.envelope
    assert env.kind != "none"
    r = np.abs(long_line.axes()[0])
    shell = r >= 0.9 * r.max()
    roundoff = 1e-14 * np.max(np.abs(K.values))
    assert np.all(np.abs(K.values[shell]) <= env(r[shell]) * (1 + 1e-6) + roundoff)


def test_plancherel_one_over_one_plus_xi2():
    spec = GridSpec.centered((4096,), (0.02,))
    K = kernel_fft(P("1 - x^2"), P("1"), spec)
    l2 = float(np.sum(K.values ** 2) * spec.cell_volume)
    # (2 pi)^-1 int (1 + xi^2)^-2 d xi = 1/4
    assert l2 == pytest.approx(0.25, rel=0.01)


# -- kernel_regularized ------------------------------------------------------

def test_regularized_p1_q1_alpha1(long_line):
    K = kernel_regularized(P("1"), P("1"), 1, long_line, images="auto")
    t = long_line.axes()[0]
    sel = np.abs(t) <= 10
    assert np.max(np.abs(K.values[sel] - 0.5 * np.exp(-np.abs(t[sel])))) <= 1e-4
    assert K.provenance["alpha"] == 1


def test_regularized_reflection_partial_fractions(long_line):
    # p(z) = 1 + z has reflected symbol p(-i xi) = 1 - i xi
    K = kernel_regularized(P("1 + x"), P("1"), 1, long_line, images="auto")
    t = long_line.axes()[0]
    oracle = np.where(t > 0, 0.25 * np.exp(-t), (0.25 - 0.5 * t) * np.exp(t))
    sel = np.abs(t) <= 10
    assert np.max(np.abs(K.values[sel] - oracle[sel])) <= 1e-4
    # the reflected kernel is anti-causal up to the symmetric factor: more mass on t < 0
    assert np.sum(K.values[t < 0]) > np.sum(K.values[t > 0])


def test_regularized_alpha0_equals_reflected_fft(line):
    p, q = P("2 + 3x + x^2"), P("0.5 + x")
    Kr = kernel_regularized(p, q, 0, line, images=0)
    Kf = kernel_fft(p.adjoint(), q.adjoint(), line, images=0, check_extent=False)
    np.testing.assert_allclose(Kr.values, Kf.values, rtol=0, atol=1e-14)


def test_regularized_causal_convention_pinned(long_line):
    # alpha = 0 and p(z) = 1 - z: reflected symbol 1/(1 + i xi) gives the causal kernel e^{-t} 1_{t>=0}
    K = kernel_regularized(P("1 - x"), P("1"), 0, long_line, images="auto")
    ss = Carma1dStateSpace([1.0], [1.0])
    G = kernel_carma1d(ss, long_line)
    t = long_line.axes()[0]
    sel = (t > 0) & (t <= 10)
    assert np.max(np.abs(K.values[sel] - G.values[sel])) <= 1e-4


def test_regularized_negative_alpha(line):
    with pytest.raises(ConfigError):
        kernel_regularized(P("1"), P("1"), -1, line)


# -- kernel_carma1d ----------------------------------------------------------

def test_carma10_exponential(line):
    G = kernel_carma1d(Carma1dStateSpace([1.0], [1.0]), line)
    t = line.axes()[0]
    np.testing.assert_allclose(G.values, np.where(t >= 0, np.exp(-t), 0.0), atol=1e-14)


def test_carma21_residue_oracle(line):
    # a(z) = (z + 1)(z + 2), b(z) = 1 + z: the root -1 cancels and g(t) = e^{-2t}
    ss = Carma1dStateSpace([3.0, 2.0], [1.0, 1.0])
    G = kernel_carma1d(ss, line)
    t = line.axes()[0]
    np.testing.assert_allclose(G.values, np.where(t >= 0, np.exp(-2 * t), 0.0), atol=1e-12)
    np.testing.assert_allclose(sorted(ss.residues().real), [0.0, 1.0], atol=1e-12)


def test_carma_initial_value_and_causality(line):
    ss = Carma1dStateSpace([3.0, 2.0], [0.5, 1.0])
    G = kernel_carma1d(ss, line)
    t = line.axes()[0]
    assert G.values[np.argmin(np.abs(t))] == pytest.approx(1.0)
    assert np.all(G.values[t < 0] == 0)


def test_carma_repeated_root_uses_expm(line):
    ss = Carma1dStateSpace.from_roots([-1.0, -1.0], [1.0])
    t = line.axes()[0]
    G = kernel_carma1d(ss, line)
    np.testing.assert_allclose(G.values, np.where(t >= 0, t * np.exp(-t), 0.0), atol=1e-12)


def test_carma_nonstationary():
    with pytest.raises(StationarityError):
        Carma1dStateSpace([-1.0], [1.0])


def test_carma_q_not_below_p():
    with pytest.raises(ConfigError):
        Carma1dStateSpace([1.0], [1.0, 1.0])


# -- kernel_bm ---------------------------------------------------------------

def test_bm_single_root_any_dimension():
    for d in (1, 2, 3):
        spec = GridSpec.centered((9,) * d, (0.5,) * d)
        K = kernel_bm(BMKernelSpec((-1.0,), (), d), spec)
        np.testing.assert_allclose(K.values, -0.5 * np.exp(-spec.radii()), atol=1e-15)


def test_bm_two_roots_origin_value():
    spec = GridSpec.centered((11,), (0.1,))
    K = kernel_bm(BMKernelSpec((-1.0, -2.0)), spec)
    # a(z) = (z^2 - 1)(z^2 - 4): a'(-1) = 6, a'(-2) = -12
    assert K.values[spec.zero_index()] == pytest.approx(1 / 6 - 1 / 12, abs=1e-15)


def test_bm_radial_symmetry():
    spec = GridSpec.centered((17, 17), (0.25, 0.25))
    K = kernel_bm(BMKernelSpec((-1.0, -3.0), (-2.0,), 2), spec)
    G = K.values
    np.testing.assert_array_equal(G, G[::-1, :])
    np.testing.assert_array_equal(G, G[:, ::-1])
    np.testing.assert_array_equal(G, G.T)


def test_bm_spec_validation():
    with pytest.raises(ConfigError):
        BMKernelSpec((-1.0, -1.0))
    with pytest.raises(ConfigError):
        BMKernelSpec((1.0,))
    with pytest.raises(ConfigError):
        BMKernelSpec((-1.0,), (-1.0,))


# -- kernel_matern3 ----------------------------------------------------------

def test_matern3_value_at_unit_radius():
    spec = GridSpec.centered((9, 9, 9), (0.5, 0.5, 0.5))
    K = kernel_matern3(1.0, spec)
    zi = spec.zero_index()
    idx = (zi[0] + 2, zi[1], zi[2])
    assert K.values[idx] == pytest.approx(math.exp(-1) / (4 * math.pi), rel=1e-14)
    assert K.values[idx] == pytest.approx(0.02927, abs=1e-5)


def test_matern3_decays_with_lambda():
    spec = GridSpec.centered((9, 9, 9), (0.5, 0.5, 0.5))
    zi = spec.zero_index()
    idx = (zi[0] + 2, zi[1], zi[2])
    vals = [kernel_matern3(lam, spec).values[idx] for lam in (1.0, 100.0, 1e4)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-40


def test_matern3_symmetry_and_origin_average():
    spec = GridSpec.centered((15, 15, 15), (0.2, 0.2, 0.2))
    G = kernel_matern3(2.0, spec).values
    np.testing.assert_allclose(G, np.transpose(G, (1, 0, 2)), rtol=0, atol=0)
    np.testing.assert_allclose(G, G[::-1], rtol=0, atol=0)
    assert np.all(np.isfinite(G))
    zi = spec.zero_index()
    assert G[zi] > G[zi[0] + 1, zi[1], zi[2]]


def test_matern3_symbol_mid_band():
    # the aliasing offset of the sampled singular kernel scales like h^2, so the band is fixed in |xi|
    spec = GridSpec.centered((128, 128, 128), (0.125, 0.125, 0.125))
    S = kernel_matern3(1.0, spec).symbol().real
    xi = np.stack(np.meshgrid(*spec.freqs(), indexing="ij"), axis=-1)
    x2 = np.sum(xi ** 2, axis=-1)
    band = (x2 >= 1.0) & (x2 <= 16.0)
    rel = np.abs(S[band] * (1 + x2[band]) - 1)
    assert rel.max() <= 0.01


def test_matern3_wrong_dimension(line):
    with pytest.raises(GridMismatchError):
        kernel_matern3(1.0, line)


# -- delta and file format ---------------------------------------------------

def test_delta_kernel_mass(line):
    K = kernel_delta(line)
    assert np.sum(K.values) * line.cell_volume == pytest.approx(1.0)
    assert np.count_nonzero(K.values) == 1


def test_kernel_file_round_trip(tmp_path, line):
    K = kernel_carma1d(Carma1dStateSpace([2.0], [1.0]), line)
    path = tmp_path / "k.grid"
    K.save(path)
    K2 = KernelGrid.load(path)
    np.testing.assert_array_equal(K2.values, K.values)
    assert K2.envelope == K.envelope
    assert K2.spec == K.spec
    assert K2.provenance["construction"] == "carma1d"


def test_profile_csv(tmp_path, line):
    K = kernel_carma1d(Carma1dStateSpace([2.0], [1.0]), line)
    path = tmp_path / "p.csv"
    K.write_profile_csv(path, nbins=8, header_lines=["note"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# note" and lines[1] == "r,mean,max"
    assert len(lines) == 10


# -- functionals -------------------------------------------------------------

def _indicator_kernel():
    spec = GridSpec.centered((401,), (0.01,))
    t = spec.axes()[0]
    vals = ((t >= -1e-12) & (t < 1 - 1e-9)).astype(float)
    return KernelGrid(spec, vals, Envelope("exponential", 0.0, 1.0, 0.0))


def test_indicator_distribution_and_h():
    F, _ = kernel_functionals(_indicator_kernel(), 0.0)
    np.testing.assert_allclose(F.distribution([0.0, 0.5, 0.999]), 1.0, atol=1e-12)
    np.testing.assert_allclose(F.distribution([1.0, 2.0]), 0.0, atol=1e-12)
    for x in (1.0, 2.0, 10.0):
        assert F.h(x) == pytest.approx(1.0, abs=1e-12)
    assert F.h(0.5) == pytest.approx(0.5, abs=1e-12)


def test_zero_kernel_functionals(line):
    K = KernelGrid(line, np.zeros(line.shape), Envelope("exponential", 0.0, 1.0, 0.0))
    F, table = kernel_functionals(K, 1.0, [0.5, 1.0, 4.0])
    assert all(v == 0 for v in table["d_GR"])
    assert all(v == 0 for v in table["h_R"])


def test_scaling_shifts_distribution(line):
    K = kernel_carma1d(Carma1dStateSpace([1.0], [1.0]), line)
    K2 = KernelGrid(line, 2 * K.values, Envelope("exponential", 2 * K.envelope.c, K.envelope.rate, 0.0))
    F1, _ = kernel_functionals(K, 0.5)
    F2, _ = kernel_functionals(K2, 0.5)
    a = np.array([0.05, 0.1, 0.3, 0.6])
    np.testing.assert_allclose(F2.distribution(a), F1.distribution(a / 2), rtol=1e-9, atol=1e-12)


def test_distribution_nonincreasing_and_h_over_x(line):
    K = kernel_carma1d(Carma1dStateSpace([1.0], [1.0]), line)
    F, _ = kernel_functionals(K, 1.0)
    a = np.linspace(0.0, 2.0, 200)
    d = F.distribution(a)
    assert np.all(np.diff(d) <= 1e-12)
    x = np.logspace(-2, 3, 60)
    ratio = np.array([F.h(v) / v for v in x])
    assert np.all(np.diff(ratio) <= 1e-12 * ratio[:-1])


def test_functionals_need_envelope(line):
    K = KernelGrid(line, np.ones(line.shape))
    with pytest.raises(PreconditionError):
        kernel_functionals(K, 1.0)
