import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermodamage.material import (
    DomainError,
    MaterialParams,
    ParameterError,
    PotentialW,
    conductivity_primitive,
    eval_potential,
    heat_conductivity,
    smooth_positive_part,
    truncate_conductivity,
    truncate_conductivity_prime,
    yosida_alpha,
    yosida_alpha_hat,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
positive = st.floats(0.0, 5.0, allow_nan=False)


def test_conductivity_values():
    # [TRIVIAL] K(theta) = c0 (1 + theta^kappa)
    p = MaterialParams(kappa=2.0, c0=1.5)
    assert heat_conductivity(0.0, p) == pytest.approx(1.5)
    assert heat_conductivity(2.0, p) == pytest.approx(1.5 * 5.0)


def test_conductivity_rejects_negative_temperature():
    with pytest.raises(DomainError):
        heat_conductivity(np.array([1.0, -0.1]), MaterialParams())
    with pytest.raises(DomainError):
        conductivity_primitive(-1.0, MaterialParams())


@given(positive)
def test_primitive_derivative_is_conductivity(theta):
    # [DERIVED] central difference of the primitive reproduces K
    p = MaterialParams(kappa=2.5)
    h = 1e-6
    lo = max(theta - h, 0.0)
    fd = (conductivity_primitive(theta + h, p) - conductivity_primitive(lo, p)) / (theta + h - lo)
    assert fd == pytest.approx(heat_conductivity(theta, p), rel=1e-6, abs=1e-6)


@given(finite)
def test_conductivity_derivative(theta):
    p = MaterialParams(kappa=3.0)
    h = 1e-6
    fd = (p.K(theta + h) - p.K(theta - h)) / (2 * h)
    assert fd == pytest.approx(float(p.K_prime(theta)), rel=1e-5, abs=1e-5)


@given(st.floats(-100, 100, allow_nan=False), st.floats(0.1, 10.0))
def test_truncated_conductivity_bounded(theta, M):
    p = MaterialParams()
    k = truncate_conductivity(theta, M, p)
    assert p.c0 <= k <= p.K(M) * (1 + 1e-14)
    if abs(theta) > M:
        assert truncate_conductivity_prime(theta, M, p) == 0.0


@given(st.floats(-1.0, 1.0, allow_nan=False), st.floats(1e-3, 0.5))
def test_smooth_positive_part_properties(x, w):
    v = smooth_positive_part(x, w)
    assert v >= max(x, 0.0) - 1e-15
    assert v <= max(x, 0.0) + w / 8 + 1e-15


def test_smooth_positive_part_is_c1_and_convex():
    w = 0.1
    x = np.linspace(-0.2, 0.2, 4001)
    v = smooth_positive_part(x, w)
    assert np.min(np.diff(v, 2)) >= -1e-14
    slope = np.diff(v) / np.diff(x)
    assert np.max(np.abs(np.diff(slope))) < 0.02


@given(st.floats(-2.0, 2.0, allow_nan=False), st.floats(1e-3, 1.0))
def test_yosida_pair_consistent(r, nu):
    h = 1e-6
    fd = (yosida_alpha_hat(r + h, nu) - yosida_alpha_hat(r - h, nu)) / (2 * h)
    assert fd == pytest.approx(float(yosida_alpha(r, nu)), abs=1e-4 / nu)


def test_yosida_rejects_nonpositive_parameter():
    with pytest.raises(ParameterError):
        yosida_alpha(1.0, 0.0)
    with pytest.raises(ParameterError):
        yosida_alpha_hat(1.0, -1.0)


@pytest.mark.parametrize("kind", ["double_well", "quadratic", "zero"])
def test_potential_derivatives(kind):
    pot = PotentialW(gamma_kind=kind, gamma_scale=1.3)
    x = np.linspace(-1.0, 2.0, 31)
    h = 1e-6
    assert np.allclose((pot.gamma_hat(x + h) - pot.gamma_hat(x - h)) / (2 * h), pot.gamma(x), atol=1e-6)
    assert np.allclose((pot.gamma(x + h) - pot.gamma(x - h)) / (2 * h), pot.gamma_prime(x), atol=1e-6)


def test_double_well_convexity_defect():
    # [DERIVED] gamma_hat'' = 12 chi^2 - 12 chi + 2 has minimum -1 at chi = 1/2
    assert PotentialW().lambda_conv == pytest.approx(1.0, abs=1e-6)
    assert PotentialW(gamma_kind="quadratic").lambda_conv == 0.0


def test_eval_potential_indicator():
    pot = PotentialW()
    val, gam, feas = eval_potential(-0.1, pot)
    assert val == np.inf and not feas
    val, gam, feas = eval_potential(0.5, pot)
    assert feas and val == pytest.approx(0.0625)
    assert gam == pytest.approx(0.0)


def test_penalty_potential():
    pot = PotentialW(beta_kind="penalty", beta_penalty=10.0)
    assert pot.beta_hat(-0.2) == pytest.approx(0.2)
    assert pot.beta(-0.2) == pytest.approx(-2.0)
    assert pot.lower_bound_chi == -np.inf


def test_validate_accepts_defaults():
    assert MaterialParams().validate(1) == []
    assert MaterialParams(p_exponent=3.0).validate(2) == []


@pytest.mark.parametrize(
    "kw, fragment",
    [
        ({"kappa": 0.5}, "kappa > 1"),
        ({"c0": 0.0}, "c0 > 0"),
        ({"c2": 0.0}, "c2 > 0"),
        ({"omega": -1.0}, "omega > 0"),
        ({"p_exponent": 1.5}, "p >= 2"),
        ({"gradient_mode": "laplacian", "mu_flag": 0}, "mu_flag = 1"),
        ({"b_choice": "nope"}, "a_choice/b_choice"),
    ],
)
def test_validate_reports_violations(kw, fragment):
    errs = MaterialParams(**kw).validate(1)
    assert any(fragment in e for e in errs), errs


def test_p_must_exceed_dimension_for_p_laplacian():
    assert any("p > d" in e for e in MaterialParams(p_exponent=2.0).validate(2))


def test_kappa_upper_bound_optional():
    assert MaterialParams(kappa=2.5).validate(1) == []
    assert MaterialParams(kappa=2.5).validate(1, kappa_upper=True)


def test_irreversibility_requires_indicator():
    assert PotentialW(beta_kind="none").validate(1)
    assert PotentialW(beta_kind="none").validate(0) == []


@pytest.mark.parametrize("choice", ["damage", "phase", "quadratic", "constant"])
def test_coefficients_floor_and_convexity(choice):
    p = MaterialParams(a_choice=choice, b_choice=choice)
    x = np.linspace(-1.0, 2.0, 601)
    if choice != "constant":
        assert np.min(p.a(x)) >= p.c2 - 1e-15
        assert np.min(p.b(x)) >= p.c2 - 1e-15
    h = 1e-7
    assert np.allclose((p.b(x + h) - p.b(x - h)) / (2 * h), p.b_prime(x), atol=1e-4)


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0.1, 3), st.floats(-0.5, 3))
def test_bulk_like_modulus_bound(eps, mu, lam):
    # eps : E eps >= (lambda + 2 mu / d) (tr eps)^2 for symmetric eps in Voigt form
    p = MaterialParams(lame_mu=mu, lame_lambda=lam)
    e = np.array(eps)
    D = p.elastic_matrix(2)
    assert e @ D @ e >= p.bulk_like_modulus(2) * (e[0] + e[1]) ** 2 - 1e-10


def test_elastic_matrix_one_dimension():
    p = MaterialParams(lame_lambda=2.0, lame_mu=0.5)
    assert p.elastic_matrix(1) == pytest.approx(np.array([[3.0]]))
    assert np.all(np.linalg.eigvalsh(p.elastic_matrix(2)) > 0)


@settings(max_examples=50)
@given(st.floats(0.0, 10.0))
def test_constant_conductivity_law(theta):
    p = MaterialParams(conductivity_law="constant", c0=2.0)
    assert heat_conductivity(theta, p) == 2.0
    assert conductivity_primitive(theta, p) == pytest.approx(2.0 * theta)
