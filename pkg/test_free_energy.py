"""
测试自由能分析：极大值点、对偶关系、分类、β_c、Λ矩阵与特殊点定位
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax

from errors import (
    AmbiguousClassificationError, DimensionError, DomainBoundaryError, RegimeMismatchError,
    ShapeError,
)
from free_energy import (
    PointKind, beta_c, classify, cubic_coefficient_check, direction_u, dual_function,
    f_derivatives, find_maximizers, grad_G, gradient_polynomial_fit, hessian_G, hq_basis,
    lambda_f2_identity, lambda_jacobian, lambda_matrix, locate_critical_point,
    locate_special_point, neg_free_energy, reduced_quadratic_form, x_profile,
)
from model_core import ModelParams

MODELS = [(2, 2), (3, 2), (2, 3), (4, 2)]


def test_neg_free_energy_at_uniform_vector():
    params = ModelParams(3, 4, 1.1, 0.4)
    t = np.full(4, 0.25)
    expected = 1.1 * 4 * 0.25**3 + 0.4 * 0.25 + math.log(4)
    assert neg_free_energy(t, params) == pytest.approx(expected, abs=1e-14)
    # 0·log0 = 0
    assert neg_free_energy([1.0, 0.0, 0.0, 0.0], params) == pytest.approx(1.1 + 0.4, abs=1e-14)


def test_hq_basis_is_orthonormal_and_zero_sum():
    basis = hq_basis(5)
    assert basis.shape == (5, 4)
    assert np.allclose(basis.T @ basis, np.eye(4), atol=1e-14)
    assert np.allclose(basis.sum(axis=0), 0.0, atol=1e-14)


def test_profile_domain():
    assert np.allclose(x_profile(0.0, 3), np.full(3, 1 / 3))
    with pytest.raises(DomainBoundaryError):
        x_profile(1.0, 3)
    with pytest.raises(DomainBoundaryError):
        f_derivatives(1.0, ModelParams(2, 2, 1.0), 2)
    with pytest.raises(DimensionError):
        f_derivatives(0.5, ModelParams(2, 2, 1.0), 7)


@settings(max_examples=50, deadline=None)
@given(s=st.floats(0.05, 0.6), beta=st.floats(0.1, 3.0), h=st.floats(0.0, 1.0),
       order=st.integers(0, 5))
def test_derivatives_match_finite_differences(s, beta, h, order):
    params = ModelParams(3, 3, beta, h)
    step = 1e-5
    numeric = (f_derivatives(s + step, params, order) - f_derivatives(s - step, params, order)) / (2 * step)
    exact = f_derivatives(s, params, order + 1)
    assert exact == pytest.approx(numeric, rel=1e-4, abs=1e-4)


@pytest.mark.parametrize("p,q", MODELS)
@settings(max_examples=100, deadline=None)
@given(beta=st.floats(0.1, 2.0), h=st.one_of(st.floats(0.0, 1.0), st.floats(8.0, 14.0)))
def test_maximizers_satisfy_duality_and_fixed_point(p, q, beta, h):
    params = ModelParams(p, q, beta, h)
    _assert_stationary(find_maximizers(params), params)


def _assert_stationary(maximizers, params):
    for m in maximizers.expanded:
        assert abs(neg_free_energy(m, params) + dual_function(m, params)) < 1e-10
        logits = params.beta * params.p * m ** (params.p - 1)
        logits[0] += params.h
        assert np.max(np.abs(m - softmax(logits))) < 1e-10
        assert np.max(np.abs(grad_G(m, params))) < 1e-9


def test_strong_field_maximizer_lies_beyond_scan_grid():
    params = ModelParams(2, 3, 1.0, 10.0)
    maximizers = find_maximizers(params)
    assert maximizers.boundary
    assert maximizers.count == 1
    s = maximizers.profiles[0].s
    assert 1.0 - 1e-4 < s < 1.0
    assert abs(f_derivatives(s, params, 1)) < 1e-7
    assert maximizers.expanded[0][0] > 1 / 3
    _assert_stationary(maximizers, params)


def test_regular_point_has_uniform_maximizer(regular_params):
    maximizers = find_maximizers(regular_params)
    assert maximizers.count == 1
    assert maximizers.profiles[0].s == 0.0
    assert math.isinf(maximizers.min_pairwise_distance())


def test_zero_field_ordered_phase_expands_rotations(critical_params):
    maximizers = find_maximizers(critical_params)
    assert maximizers.count == 2
    first, second = maximizers.expanded
    assert np.allclose(first, second[::-1])
    assert maximizers.min_pairwise_distance() > 0.5

    potts = find_maximizers(ModelParams(2, 3, 2.0, 0.0))
    assert potts.count == 3
    assert potts.profile_index == [0, 0, 0]


def test_positive_field_selects_first_color():
    maximizers = find_maximizers(ModelParams(2, 3, 1.0, 0.5))
    assert maximizers.count == 1
    m = maximizers.expanded[0]
    assert m[0] > m[1] == pytest.approx(m[2])


def test_classify_regular_and_critical(regular_params, critical_params):
    regular = classify(regular_params)
    assert regular.kind is PointKind.REGULAR
    assert regular.diagnostics.max_eigenvalue < 0
    critical = classify(critical_params)
    assert critical.kind is PointKind.CRITICAL
    assert critical.verdict == "Critical"


@pytest.mark.parametrize("p,beta", [(2, 1.0), (3, 2.0 / 3.0)])
def test_classify_special_one(p, beta):
    point = classify(ModelParams(p, 2, beta, 0.0))
    assert point.kind is PointKind.SPECIAL_I
    assert abs(point.diagnostics.max_eigenvalue) < 1e-7
    if p == 2:
        assert point.diagnostics.f4 == pytest.approx(-2.0, rel=1e-9)


def test_classify_special_two():
    point = classify(ModelParams(4, 2, 2.0 / 3.0, 0.0))
    assert point.kind is PointKind.SPECIAL_II
    assert abs(point.diagnostics.f4) < 1e-7
    assert point.diagnostics.f6 == pytest.approx(-24.0, rel=1e-9)


def test_classify_flags_near_singular_points():
    # 两个极大值点几乎重合，特征值落在阈值以内
    with pytest.raises(AmbiguousClassificationError):
        classify(ModelParams(2, 2, 1.0 + 1e-8, 0.0))


@pytest.mark.parametrize("p,q,expected", [(2, 2, 1.0), (2, 3, 2 * math.log(2))])
def test_beta_c_known_values(p, q, expected):
    assert beta_c(p, q) == pytest.approx(expected, abs=1e-5)


def test_reduced_form_is_singular_along_u_at_special_point():
    params = ModelParams(2, 3, 4.0 / 3.0, math.log(2) - 2.0 / 3.0)
    form = reduced_quadratic_form([0.5, 0.25, 0.25], params)
    value, vector = form.smallest_magnitude()
    assert abs(value) < 1e-12
    u = direction_u(3)
    cosine = abs(vector @ u) / (np.linalg.norm(vector) * np.linalg.norm(u))
    assert cosine == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(p=st.sampled_from([2, 3]), q=st.sampled_from([2, 3, 4]),
       beta=st.floats(0.2, 2.0), h=st.floats(0.0, 1.0))
def test_lambda_determinant_closed_form(p, q, beta, h):
    params = ModelParams(p, q, beta, h)
    m = find_maximizers(params).profiles[0].x
    lam = lambda_matrix(m, params)
    scale = max(1.0, np.abs(lam.full).max()) ** q
    assert lam.determinant_closed_form() == pytest.approx(lam.determinant(), rel=1e-10, abs=1e-12 * scale)


@settings(max_examples=50, deadline=None)
@given(p=st.sampled_from([2, 3, 4]), q=st.sampled_from([2, 3, 5]),
       beta=st.floats(0.2, 3.0), s=st.floats(0.0, 0.95))
def test_lambda_f2_identity(p, q, beta, s):
    params = ModelParams(p, q, beta, 0.3)
    left, right = lambda_f2_identity(x_profile(s, q), params)
    assert left == pytest.approx(right, rel=1e-9, abs=1e-9)


def test_lambda_matrix_rejects_non_profile_vectors():
    with pytest.raises(ShapeError):
        lambda_matrix([0.5, 0.3, 0.2], ModelParams(2, 3, 1.0))


def test_lambda_jacobian_matches_closed_form_at_maximizer():
    params = ModelParams(2, 3, 2.0, 0.1)
    m = find_maximizers(params).expanded[0]
    assert np.allclose(lambda_jacobian(m, params), lambda_matrix(m, params).full, atol=1e-9)


def test_hessian_matches_gradient_differences():
    params = ModelParams(3, 3, 1.2, 0.2)
    x = np.array([0.5, 0.3, 0.2])
    step = 1e-6
    numeric = np.column_stack([
        (grad_G(x + step * e, params) - grad_G(x - step * e, params)) / (2 * step)
        for e in np.eye(3)
    ])
    assert np.allclose(hessian_G(x, params), 0.5 * (numeric + numeric.T), atol=1e-6)


@pytest.mark.parametrize("p,q", [(2, 2), (2, 3), (4, 2)])
def test_lambda_annihilates_u_at_special_points(p, q):
    special = locate_special_point(p, q)
    m = x_profile(special.s, q)
    lam = lambda_matrix(m, special.params)
    assert lam.null_residual() < 1e-8
    value, _ = reduced_quadratic_form(m, special.params).smallest_magnitude()
    assert abs(value) < 1e-7


def test_locate_special_point_known_coordinates():
    special = locate_special_point(2, 3)
    assert special.s == pytest.approx(0.25, abs=1e-8)
    assert special.params.beta == pytest.approx(4.0 / 3.0, abs=1e-8)
    assert special.params.h == pytest.approx(math.log(2) - 2.0 / 3.0, abs=1e-8)
    assert classify(special.params).kind is PointKind.SPECIAL_I

    ising = locate_special_point(2, 2)
    assert ising.params.beta == pytest.approx(1.0, abs=1e-12)
    assert ising.params.h == 0.0

    assert classify(locate_special_point(4, 2).params).kind is PointKind.SPECIAL_II


def test_cubic_coefficient_at_special_one_point():
    fit = cubic_coefficient_check(ModelParams(2, 2, 1.0, 0.0))
    assert abs(fit.linear) < 1e-6
    # ∇₁G(m + tu) = tanh(2t) - 2t = -(8/3)t³ + O(t⁵)
    assert fit.cubic == pytest.approx(-8.0 / 3.0, rel=1e-2)
    assert np.sign(fit.cubic) == np.sign(fit.f4)
    with pytest.raises(RegimeMismatchError):
        cubic_coefficient_check(ModelParams(2, 2, 0.5, 0.0))


@pytest.mark.parametrize("p,q", [(2, 2), (3, 2), (2, 3)])
def test_cubic_coefficient_is_proportional_to_f4(p, q):
    special = locate_special_point(p, q)
    fit = cubic_coefficient_check(special.params)
    assert abs(fit.linear) < 1e-6
    assert abs(fit.quadratic) < 1e-6
    assert fit.f4 < 0 and fit.cubic < 0
    m1 = x_profile(special.s, q)[0]
    curvature = special.params.beta * p * (p - 1) * m1 ** (p - 1) * (1 - m1)
    # 比值只依赖于q
    assert fit.cubic / (curvature * fit.f4) == pytest.approx(q**4 / (6 * (q - 1)), rel=1e-2)


@pytest.mark.parametrize("params", [ModelParams(2, 2, 0.5, 0.0), ModelParams(2, 3, 0.8, 0.3),
                                    ModelParams(3, 2, 1.5, 0.2)])
def test_linear_term_dominates_at_regular_points(params):
    assert classify(params).kind is PointKind.REGULAR
    fit = gradient_polynomial_fit(find_maximizers(params).expanded[0], params)
    t_max = np.max(np.abs(fit.t_grid))
    assert abs(fit.linear) > 10 * abs(fit.cubic) * t_max**2


def test_locate_critical_point_matches_beta_c():
    located = locate_critical_point(2, 3, 0.0, (1.2, 1.6))
    assert located.beta == pytest.approx(2 * math.log(2), abs=1e-6)
    assert classify(located).kind is PointKind.CRITICAL
