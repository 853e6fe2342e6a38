"""
测试最大伪似然估计：得分函数、求根、ρ向量、混合极限与模拟
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import BracketError, ConfigError, DegenerateSampleError, RegimeMismatchError, SingularDenominatorError
from estimator import (
    log_pseudolikelihood, mpl_estimate, mpl_mixture_law, rho, score, score_beta_derivative,
    score_gradient, simulate_mpl_distribution,
)
from free_energy import beta_c, find_maximizers
from model_core import ModelParams

probability_vectors = st.lists(st.floats(0.05, 1.0), min_size=2, max_size=4).map(
    lambda w: np.array(w) / sum(w))


@given(p=st.integers(2, 4), q=st.integers(2, 5), beta=st.floats(0.01, 10.0))
def test_score_vanishes_at_uniform_vector(p, q, beta):
    assert abs(score(np.full(q, 1.0 / q), beta, p)) < 1e-14


@settings(max_examples=50, deadline=None)
@given(xbar=probability_vectors, beta=st.floats(0.1, 3.0), p=st.integers(2, 4))
def test_score_derivatives_match_finite_differences(xbar, beta, p):
    step = 1e-6
    derivative = score_beta_derivative(xbar, beta, p)
    assert derivative <= 0
    numeric = (score(xbar, beta + step, p) - score(xbar, beta - step, p)) / (2 * step)
    assert derivative == pytest.approx(numeric, abs=1e-6)
    # ℓ'(β) = S
    numeric_score = (log_pseudolikelihood(xbar, beta + step, p)
                     - log_pseudolikelihood(xbar, beta - step, p)) / (2 * step)
    assert score(xbar, beta, p) == pytest.approx(numeric_score, abs=1e-6)

    gradient = score_gradient(xbar, beta, p)
    for r in range(xbar.size):
        e = np.zeros(xbar.size)
        e[r] = step
        partial = (score(xbar + e, beta, p) - score(xbar - e, beta, p)) / (2 * step)
        assert gradient[r] == pytest.approx(partial, abs=1e-6)


@pytest.mark.parametrize("p,q,beta", [(2, 2, 1.5), (2, 3, 2.0), (3, 2, 1.0)])
def test_mpl_recovers_beta_at_maximizer(p, q, beta):
    params = ModelParams(p, q, beta, 0.0)
    m = find_maximizers(params).expanded[0]
    result = mpl_estimate(m, p)
    assert result.beta_hat == pytest.approx(beta, abs=1e-8)
    assert abs(result.score_at_root) < 1e-10


def test_mpl_degenerate_inputs():
    with pytest.raises(DegenerateSampleError):
        mpl_estimate([0.5, 0.5], 2)
    with pytest.raises(BracketError):
        mpl_estimate([0.8, 0.2], 2, bracket=(1e-6, 1e-3))
    with pytest.raises(ConfigError):
        mpl_estimate([0.8, 0.2], 2, bracket=(2.0, 1.0))


def test_rho_singular_at_uniform_vector():
    with pytest.raises(SingularDenominatorError):
        rho([0.5, 0.5], 1.0, 2)
    assert rho([0.8, 0.2], 1.0, 2).rho.shape == (2,)


def test_mixture_components_share_variance_at_zero_field():
    params = ModelParams(2, 3, 2.0, 0.0)
    mixture = mpl_mixture_law(params)
    assert np.allclose(mixture.weights, 1 / 3)
    assert np.max(mixture.variances) - np.min(mixture.variances) < 1e-10
    assert mixture.cdf(0.0) == pytest.approx(0.5)


def test_simulation_checks_regime():
    with pytest.raises(ConfigError):
        simulate_mpl_distribution(ModelParams(2, 2, 1.5, 0.1), 50, 10, seed=1)
    with pytest.raises(RegimeMismatchError):
        simulate_mpl_distribution(ModelParams(2, 2, 0.8, 0.0), 50, 10, seed=1)


def test_simulation_is_deterministic(critical_params):
    first = simulate_mpl_distribution(critical_params, 60, 200, seed=5, critical_beta=1.0)
    second = simulate_mpl_distribution(critical_params, 60, 200, seed=5, threads=3, critical_beta=1.0)
    assert np.array_equal(first.beta_hats, second.beta_hats)
    assert first.errors.size + first.excluded == 200
    frame = first.to_frame()
    assert list(frame.columns) == ["replicate", "betaHat", "sqrtN_err"]
    assert np.all(np.diff(first.sorted_errors) >= 0)


@pytest.mark.slow
def test_mpl_converges_to_mixture_law():
    critical = beta_c(2, 2)
    params = ModelParams(2, 2, 1.5 * critical, 0.0)
    mixture = mpl_mixture_law(params)

    def distance(N):
        simulation = simulate_mpl_distribution(params, N, 10**4, seed=2024, threads=4,
                                               critical_beta=critical)
        return simulation.kolmogorov_to(mixture)

    assert distance(400) < 0.05
    assert distance(1600) < distance(100)


@pytest.mark.parametrize("p", [2, 3])
def test_rho_is_equivariant_under_permutation(p):
    m = np.array([0.55, 0.25, 0.15, 0.05])
    base = rho(m, 1.7, p).rho
    for perm in itertools.permutations(range(4)):
        order = np.array(perm)
        assert np.allclose(rho(m[order], 1.7, p).rho, base[order], atol=1e-13)


@pytest.mark.parametrize("p,q,beta", [(2, 3, 2.0), (3, 2, 1.0)])
def test_mpl_linearizes_along_rho(p, q, beta, rng):
    params = ModelParams(p, q, beta, 0.0)
    m = find_maximizers(params).expanded[0]
    gradient = rho(m, beta, p).rho
    for _ in range(5):
        delta = rng.standard_normal(q)
        delta -= delta.mean()
        delta *= 1e-6 / np.linalg.norm(delta)
        shift = mpl_estimate(m + delta, p).beta_hat - beta
        assert shift == pytest.approx(gradient @ delta, abs=1e-9)


def test_rho_vectors_are_permutations_at_zero_field():
    params = ModelParams(2, 3, 2.0, 0.0)
    maximizers = find_maximizers(params).expanded
    assert len(maximizers) == 3
    vectors = [rho(m, params.beta, params.p).rho for m in maximizers]
    first = np.sort(vectors[0])
    for r in vectors[1:]:
        assert np.allclose(np.sort(r), first, atol=1e-13)


def test_simulation_median_is_centered(critical_params):
    simulation = simulate_mpl_distribution(critical_params, 1600, 4000, seed=17, threads=4,
                                           critical_beta=1.0)
    errors = simulation.errors
    standard_error = 1.2533 * errors.std() / math.sqrt(errors.size)
    assert abs(simulation.median()) < 3 * standard_error
