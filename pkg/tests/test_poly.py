import numpy as np
import pytest

from levycarma.errors import ConfigError, SingularSymbolError
from levycarma.poly import (MultiPolynomial, apply_operator, check_strip, eval_symbol, format_polynomial,
                            l2_strip_sup, parse_polynomial, psi_polynomial, select_alpha)


def P(text, d=None):
    return parse_polynomial(text, d)


# -- structure and evaluation ------------------------------------------------

def test_zero_polynomial_has_degree_minus_one():
    z = MultiPolynomial(2)
    assert z.degree == -1 and z.is_zero()
    assert eval_symbol(z, [1.0, 2.0]) == 0


def test_terms_merge_and_drop_zeros():
    p = MultiPolynomial(1, {(1,): 2.0}) + MultiPolynomial(1, {(1,): -2.0, (0,): 1.0})
    assert p.terms == {(0,): 1.0}
    assert p.degree == 0


def test_eval_sum_of_squares():
    assert eval_symbol(P("x1^2 + x2^2"), [1, 1]) == 2


def test_eval_lambda_minus_laplacian_at_zero():
    p = P("-1 + x1^2 + x2^2")
    assert eval_symbol(p, 1j * np.zeros(2)) == -1
    # symbol at i xi is -1 - |xi|^2
    assert eval_symbol(p, 1j * np.array([1.0, 2.0])) == pytest.approx(-6.0)


def test_adjoint_examples():
    x = P("x1")
    assert x.adjoint() == -x
    assert P("x1^2").adjoint() == P("x1^2")
    q = P("1 + x1 + x1 x2")
    assert q.adjoint().adjoint() == q


def test_psi_symbol():
    psi = psi_polynomial(2, 3)
    xi = np.array([0.5, -1.0, 2.0])
    assert eval_symbol(psi, 1j * xi).real == pytest.approx((1 + xi @ xi) ** 2)


def test_parse_format_round_trip():
    for text in ("1 - 2.5*x1^2 + x1 x2", "-x1 + 3", "0", "0.1 * x2^3 - 1e-3 * x1"):
        p = P(text, 2)
        assert parse_polynomial(format_polynomial(p), 2) == p


def test_parse_bare_variable_and_z_names():
    assert P("1 + x") == P("1 + x1") == P("1 + z1")


def test_parse_error_reports_column():
    with pytest.raises(ConfigError, match="column"):
        P("1 + y")


# -- operators on grids ------------------------------------------------------

def test_identity_operator():
    f = np.random.default_rng(0).normal(size=64)
    f[:4] = f[-4:] = 0
    assert np.array_equal(apply_operator(MultiPolynomial.constant(1.0, 1), f, (0.1,)), f)


def test_second_derivative_of_gaussian():
    h = 0.05
    x = np.arange(-240, 240) * h
    f = np.exp(-x ** 2 / 2)
    got = apply_operator(P("x1^2"), f, (h,))
    assert np.max(np.abs(got - (x ** 2 - 1) * f)) <= 1e-8


def test_operator_composition():
    h = 0.05
    x = np.arange(-240, 240) * h
    f = np.exp(-x ** 2 / 2)
    a = apply_operator(P("x1"), apply_operator(P("x1"), f, (h,)), (h,))
    b = apply_operator(P("x1^2"), f, (h,))
    assert np.max(np.abs(a - b)) <= 1e-13


# -- strip checks -------------------------------------------------------------

def test_strip_holds_for_lambda_minus_laplacian():
    rep = check_strip(P("-1 + x1^2 + x2^2"), MultiPolynomial.constant(1.0, 2), 0.5)
    assert rep.verdict == "holds_on_box"
    assert rep.min_abs_p >= 0.75 - 1e-9


def test_strip_fails_on_root():
    assert check_strip(P("x1"), P("1"), 0.1).verdict == "fails"


def test_strip_product_operator():
    p = P("1 - x1", 2) * P("1 - x2", 2)
    assert check_strip(p, MultiPolynomial.constant(1.0, 2), 0.5).verdict == "holds_on_box"


def test_l2_strip_one_dimensional_oracle():
    res = l2_strip_sup(P("1 + x"), P("1"), 0.25)
    assert res.converged
    assert res.estimate == pytest.approx(np.sqrt(np.pi / 0.75), rel=0.02)


def test_l2_strip_constant_ratio_diverges():
    p = P("1 + x")
    assert not l2_strip_sup(p, p, 0.25).converged


def test_l2_strip_three_dimensional_converges():
    assert l2_strip_sup(P("1 + x1^2 + x2^2 + x3^2"), P("1", 3), 0.25).converged


@pytest.mark.parametrize("p,q,d,alpha", [("1", "1 + x", 1, 1), ("1 + x", "1", 1, 1), ("1", "1", 3, 1)])
def test_select_alpha(p, q, d, alpha):
    assert select_alpha(P(p, d), P(q, d), 0.25) == alpha


def test_select_alpha_rejects_root_in_strip():
    with pytest.raises(SingularSymbolError):
        select_alpha(P("x"), P("1"), 0.25, max_alpha=2)
