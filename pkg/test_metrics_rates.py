"""
测试距离与速率实验：Kolmogorov距离、半空间代理、斜率拟合和各区域的速率趋势
"""

import math

import numpy as np
import pytest

from config import RatesConfig
from errors import ConfigError, MathDegenerateError, OverlapError, RegimeMismatchError
from free_energy import PointKind, classify, locate_critical_point, locate_special_point
from metrics_rates import (
    berry_esseen_experiment, critical_weights_check, halfspace_directions, kolmogorov_distance_1d,
    mean_w_scaling_check, rate_fit,
)
from model_core import ModelParams, exact_magnetization_law

DOUBLING_GRID = [100, 200, 400, 800, 1600, 3200]
SPECIAL_GRID = [200, 400, 800, 1600, 3200]


def _step_cdf(values, probs):
    order = np.argsort(values)
    atoms, masses = np.asarray(values)[order], np.cumsum(np.asarray(probs)[order])

    def cdf(x):
        index = np.searchsorted(atoms, x, side="right")
        return np.r_[0.0, masses][index]

    return cdf


def test_kolmogorov_distance_point_mass_against_normal():
    from scipy.stats import norm
    assert kolmogorov_distance_1d([0.0], [1.0], norm.cdf) == pytest.approx(0.5, abs=1e-15)


def test_kolmogorov_distance_symmetry_and_triangle(rng):
    grid = np.linspace(-1.0, 1.0, 9)
    for _ in range(20):
        laws = [rng.dirichlet(np.ones(grid.size)) for _ in range(3)]
        cdfs = [_step_cdf(grid, probs) for probs in laws]
        d = [[kolmogorov_distance_1d(grid, laws[i], cdfs[j]) for j in range(3)] for i in range(3)]
        assert d[0][1] == pytest.approx(d[1][0], abs=1e-14)
        assert d[0][2] <= d[0][1] + d[1][2] + 1e-14


def test_kolmogorov_distance_validates_input():
    with pytest.raises(ConfigError):
        kolmogorov_distance_1d([0.0, 1.0], [0.5, 0.4], lambda x: x)
    with pytest.raises(ConfigError):
        kolmogorov_distance_1d([], [], lambda x: x)


def test_halfspace_directions_are_unit_zero_sum():
    directions = halfspace_directions(4)
    assert directions.shape == (3 + RatesConfig.RANDOM_DIRECTIONS, 4)
    assert np.allclose(directions.sum(axis=1), 0.0, atol=1e-14)
    assert np.allclose(np.linalg.norm(directions, axis=1), 1.0)
    assert np.array_equal(directions, halfspace_directions(4))


def test_rate_fit_on_synthetic_decay(rng):
    Ns = np.array(DOUBLING_GRID)
    slope, _ = rate_fit(Ns, 2.0 * Ns ** -0.5)
    assert slope == pytest.approx(-0.5, abs=1e-12)
    noisy = 3.0 * Ns ** -0.25 * (1 + 0.1 * rng.standard_normal(Ns.size))
    slope, _ = rate_fit(Ns, noisy)
    assert -0.30 <= slope <= -0.20
    with pytest.raises(MathDegenerateError):
        rate_fit([100], [0.1])
    with pytest.raises(MathDegenerateError):
        rate_fit([100, 200], [0.1, 0.0])


def test_short_grid_reports_nan_slopes(regular_params):
    report = berry_esseen_experiment(regular_params, [100, 200, 400])
    assert report.regime is PointKind.REGULAR
    assert math.isnan(report.fitted_slope) and math.isnan(report.fitted_slope_log)
    assert list(report.to_frame().columns) == ["N", "distance"]


def test_regime_mismatch_is_reported(regular_params):
    with pytest.raises(RegimeMismatchError):
        berry_esseen_experiment(regular_params, [100, 200], regime="Critical")
    with pytest.raises(RegimeMismatchError):
        berry_esseen_experiment(regular_params, [100, 200], regime="SpecialII")
    with pytest.raises(ConfigError):
        berry_esseen_experiment(regular_params, [200, 100])


def test_regular_rate(regular_params):
    report = berry_esseen_experiment(regular_params, DOUBLING_GRID, regime="Regular", threads=2)
    assert -0.65 <= report.fitted_slope <= -0.35
    assert report.distances[-1] < report.distances[0]


def test_regular_rate_with_three_colors():
    params = ModelParams(2, 3, 0.8, 0.3)
    report = berry_esseen_experiment(params, [50, 100, 200, 400])
    assert report.fitted_slope < -0.2
    assert report.distances[-1] < report.distances[0]


@pytest.mark.slow
def test_special_one_rate():
    special = locate_special_point(2, 2)
    report = berry_esseen_experiment(special.params, SPECIAL_GRID, regime="SpecialI")
    assert report.fitted_slope <= -0.12
    assert report.distances[-1] < report.distances[0]
    assert report.auxiliary is not None and len(report.scale_moments) == len(SPECIAL_GRID)


@pytest.mark.slow
def test_special_one_rate_three_colors():
    special = locate_special_point(2, 3)
    report = berry_esseen_experiment(special.params, [100, 200, 400, 800], regime="SpecialI")
    assert report.distances[-1] < report.distances[0]
    assert all(np.isfinite(report.auxiliary))


@pytest.mark.slow
def test_special_two_rate():
    special = locate_special_point(4, 2)
    report = berry_esseen_experiment(special.params, SPECIAL_GRID, regime="SpecialII")
    assert report.fitted_slope <= -0.07
    assert report.distances[-1] < report.distances[0]
    # E F_N^6 在最大的两个N上稳定
    top, below = report.scale_moments[-1], report.scale_moments[-2]
    assert abs(top - below) / top < 0.1


@pytest.mark.parametrize("params", [ModelParams(2, 2, 0.5, 0.2), ModelParams(2, 3, 0.8, 0.3)])
def test_mean_w_is_bounded_at_regular_points(params):
    scaling = mean_w_scaling_check(params, [100, 200, 400, 800, 1600])
    assert min(scaling.values) > 0
    assert scaling.maximum / min(scaling.values) < 10


def test_mean_w_requires_regular_point(critical_params):
    with pytest.raises(RegimeMismatchError):
        mean_w_scaling_check(critical_params, [100])


def test_critical_weights(critical_params):
    residuals = []
    Ns = [50, 100, 200, 400]
    for N in Ns:
        check = critical_weights_check(critical_params, N)
        assert abs(check.ball_masses[0] - check.ball_masses[1]) < 1e-12
        assert np.all(check.scaled_gaps < 1.0)
        assert len(check.rows()) == 2
        residuals.append(check.residual_log_mass)
    assert np.polyfit(np.log(Ns), residuals, 1)[0] < -2


@pytest.mark.slow
def test_critical_weights_with_positive_field():
    params = locate_critical_point(2, 3, 0.01, (1.2, 1.5))
    assert classify(params).kind is PointKind.CRITICAL
    check = critical_weights_check(params, 800)
    # 外场打破颜色对称，两个极大值点的权重不同
    assert len(check.maximizers) == 2
    assert abs(check.weights[0] - check.weights[1]) > 1e-3
    assert math.fsum(check.weights) == pytest.approx(1.0, abs=1e-14)
    # 默认半径下球外质量较大，比较归一化后的球质量
    normalized = check.ball_masses / check.ball_masses.sum()
    assert np.max(np.abs(normalized - check.weights)) < 0.05
    assert check.ball_masses.sum() + math.exp(check.residual_log_mass) == pytest.approx(1.0, abs=1e-10)


def test_critical_weights_rejects_overlapping_balls(critical_params):
    with pytest.raises(OverlapError):
        critical_weights_check(critical_params, 50, eps=1.0)
    with pytest.raises(RegimeMismatchError):
        critical_weights_check(ModelParams(2, 2, 0.5), 50)


def test_critical_conditional_rate(critical_params):
    report = berry_esseen_experiment(critical_params, [100, 200, 400, 800, 1600], regime="Critical")
    assert report.eps is not None
    assert report.distances[-1] < report.distances[0]


def test_experiment_uses_law_provider(regular_params):
    calls = []

    def provider(N):
        calls.append(N)
        return exact_magnetization_law(regular_params, N)

    berry_esseen_experiment(regular_params, [10, 20], law_provider=provider)
    assert sorted(calls) == [10, 20]
