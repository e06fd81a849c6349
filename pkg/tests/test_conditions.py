import json

import numpy as np
import pytest

from levycarma.conditions import (ConditionEntry, ConditionReport, check_elliptic, check_mild, check_necessary,
                                  check_sufficient_T1, check_sufficient_T38, run_checks)
from levycarma.errors import ConfigError
from levycarma.grid import GridSpec
from levycarma.kernels import Carma1dStateSpace, Envelope, KernelGrid, kernel_carma1d, kernel_matern3
from levycarma.levy import LevyTriplet, levy_measure
from levycarma.poly import parse_polynomial


def triplet(family="zero", a=0.0, gamma=0.0, **params):
    return LevyTriplet(a, gamma, levy_measure(family, **params))


def pareto(theta):
    return triplet("two_sided_pareto", theta=theta)


@pytest.fixture(scope="module")
def exp_kernel():
    spec = GridSpec.centered((2048,), (0.02,))
    return kernel_carma1d(Carma1dStateSpace([1.0], [1.0]), spec)


@pytest.fixture(scope="module")
def power_kernel():
    """``(1 + |x|)^{-2}`` in d = 1 with its power envelope (decay exponent 2)."""
    spec = GridSpec.centered((2001,), (0.05,))
    r = spec.radii()
    return KernelGrid(spec, (1.0 + r) ** -2.0, Envelope("power", 1.0, 2.0, 0.0))


@pytest.fixture(scope="module")
def newton3():
    return kernel_matern3(0.0, GridSpec.centered((16, 16, 16), (0.5, 0.5, 0.5)))


# -- sufficient condition with h_R -------------------------------------------

def test_T1_gaussian_holds(exp_kernel):
    e = check_sufficient_T1(exp_kernel, triplet(a=1.0))
    assert e.verdict == "holds"
    assert e.values["integral"] == [0.0, 0.0, 0.0]


def test_T1_exponential_kernel_log_moment_holds(exp_kernel):
    e = check_sufficient_T1(exp_kernel, triplet("log_pareto", kappa=2.0))
    assert e.verdict == "holds"
    assert all(np.isfinite(e.values[k]["integral"]) for k in ("R=0.5", "R=1", "R=2"))


def test_T1_power_kernel_threshold(power_kernel):
    # h_R(r) grows like r^{d / beta} = r^{1/2}
    assert check_sufficient_T1(power_kernel, pareto(0.4)).verdict == "fails"
    assert check_sufficient_T1(power_kernel, pareto(0.8)).verdict == "holds"


def test_T1_without_envelope(exp_kernel):
    K = KernelGrid(exp_kernel.spec, exp_kernel.values)
    assert check_sufficient_T1(K, pareto(2.0)).verdict == "inconclusive"


def test_T1_non_integrable_kernel(newton3):
    assert check_sufficient_T1(newton3, pareto(4.0)).verdict == "not_applicable"


# -- sufficient condition for mean-zero noise --------------------------------

def test_T38_symmetric_atoms_hold(exp_kernel):
    t = triplet("finite_atomic", atoms=[-3.0, -1.0, 1.0, 3.0], masses=[0.5, 1.0, 1.0, 0.5])
    assert check_sufficient_T38(exp_kernel, t).verdict == "holds"


def test_T38_nonzero_mean_not_applicable(exp_kernel):
    t = triplet("finite_atomic", gamma=0.3, atoms=[-1.0, 1.0], masses=[1.0, 1.0])
    e = check_sufficient_T38(exp_kernel, t)
    assert e.verdict == "not_applicable"
    assert "nonzero" in e.notes[0]


def test_T38_undefined_mean_not_applicable(exp_kernel):
    assert check_sufficient_T38(exp_kernel, pareto(0.8)).verdict == "not_applicable"


def test_T38_power_envelope_holds(power_kernel):
    # beta = 2 > d/2 and theta > d / beta
    assert check_sufficient_T38(power_kernel, pareto(1.5)).verdict == "holds"


# -- necessary condition -----------------------------------------------------

def test_necessary_newton_d3(newton3):
    assert check_necessary(newton3, pareto(3.5)).verdict == "holds"
    e = check_necessary(newton3, pareto(2.5))
    assert e.verdict == "fails"
    assert "no generalized process exists" in e.notes


def test_necessary_sign_changing(exp_kernel):
    K = KernelGrid(exp_kernel.spec, np.sin(exp_kernel.spec.axes()[0]), exp_kernel.envelope)
    assert check_necessary(K, pareto(2.0)).verdict == "not_applicable"


def test_consistency_necessary_fails_implies_T1_not_holds(newton3, power_kernel):
    for K in (newton3, power_kernel):
        for theta in (0.3, 0.45, 1.0, 2.0, 2.9, 3.5):
            t = pareto(theta)
            if check_necessary(K, t).verdict == "fails":
                assert check_sufficient_T1(K, t).verdict != "holds"


def test_monotone_in_tail_weight(power_kernel):
    order = {"fails": 0, "inconclusive": 1, "not_applicable": 1, "holds": 2}
    thetas = [1.6, 1.2, 0.8, 0.55, 0.45, 0.3]  # heavier tails along the list
    for check in (check_sufficient_T1, check_necessary):
        verdicts = [order[check(power_kernel, pareto(th)).verdict] for th in thetas]
        assert all(b <= a for a, b in zip(verdicts, verdicts[1:]))


# -- mild solution -----------------------------------------------------------

def test_mild_holds_gaussian():
    p, q = parse_polynomial("1 + x", 1), parse_polynomial("1", 1)
    assert check_mild(p, q, 0.5, triplet(a=1.0)).verdict == "holds"


def test_mild_fails_without_log_moment():
    p, q = parse_polynomial("1 + x", 1), parse_polynomial("1", 1)
    e = check_mild(p, q, 0.5, triplet("log_pareto", kappa=0.5))
    assert e.verdict == "fails" and e.values["log_moment"] == np.inf


def test_mild_fails_q_equal_p():
    p = parse_polynomial("1 + x", 1)
    assert check_mild(p, p, 0.5, triplet(a=1.0)).verdict == "fails"


# -- elliptic homogeneous operators ------------------------------------------

def test_elliptic_laplacian_d5_holds():
    p = parse_polynomial("x1^2 + x2^2 + x3^2 + x4^2 + x5^2", 5)
    e = check_elliptic(p, pareto(2.0))
    assert e.verdict == "holds"
    assert e.values["beta"] == pytest.approx(5 / 3 + 0.01)


def test_elliptic_laplacian_d5_heavy_tail_fails():
    p = parse_polynomial("x1^2 + x2^2 + x3^2 + x4^2 + x5^2", 5)
    assert check_elliptic(p, pareto(1.6)).verdict == "fails"


def test_elliptic_d3_violates_dimension():
    p = parse_polynomial("x1^2 + x2^2 + x3^2", 3)
    assert check_elliptic(p, pareto(4.0)).verdict == "fails"


def test_elliptic_argument_errors():
    with pytest.raises(ConfigError):
        check_elliptic(parse_polynomial("x1^2 - x2^2", 2), pareto(4.0))
    with pytest.raises(ConfigError):
        check_elliptic(parse_polynomial("1 + x1^2 + x2^2", 2), pareto(4.0))


# -- report ------------------------------------------------------------------

def test_run_checks_report(exp_kernel):
    p, q = parse_polynomial("1 + x", 1), parse_polynomial("1", 1)
    rep = run_checks(triplet(a=1.0), exp_kernel, p, q)
    names = [e.name for e in rep]
    assert len(names) == len(set(names)) == 4
    assert all(e.verdict == "holds" for e in rep)
    json.dumps(rep.to_dict())
    assert "holds" in rep.table()


def test_report_rejects_duplicates_and_bad_verdicts():
    rep = ConditionReport([ConditionEntry("a", "holds")])
    with pytest.raises(ConfigError):
        rep.add(ConditionEntry("a", "fails"))
    with pytest.raises(ConfigError):
        ConditionEntry("b", "maybe")
