"""
收敛速率模块
有限N分布与极限分布之间的距离（一维Kolmogorov距离、半空间代理），
按参数点分类分派的Berry-Esseen速率实验与对数-对数斜率拟合
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from config import FreeEnergyConfig, RatesConfig
from errors import ConfigError, MathDegenerateError, OverlapError, RegimeMismatchError
from free_energy import ClassifiedPoint, PointKind, classify, hq_basis
from limit_laws import (
    GaussianLimit, decompose_F_many, decompose_TV_many, empirical_limit_scale,
    gaussian_directional_cdf, mixture_weights,
)
from model_core import (
    ChainConfig, MagnetizationLaw, ModelParams, ball_log_mass, centered_stats,
    conditional_restriction, magnetization_law,
)

logger = logging.getLogger(__name__)

# 投影值的舍入位数，消除H_q退化方向上的舍入噪声
_PROJECTION_DECIMALS = 12

LawProvider = Callable[[int], MagnetizationLaw]


def kolmogorov_distance_1d(values: Sequence[float], probs: Sequence[float], cdf: Callable) -> float:
    """
    离散分布与CDF之间的Kolmogorov距离（在原子边界上精确取上确界）

    Args:
        values: 原子位置，可以无序、可以重复
        probs: 原子概率，和为1（误差1e-10以内）
        cdf: 非减的CDF，接受数组

    Returns:
        max_x max(|F(x) - cdf(x)|, |F(x⁻) - cdf(x⁻)|)
    """
    values = np.asarray(values, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if values.shape != probs.shape or values.ndim != 1 or values.size == 0:
        raise ConfigError("原子位置与概率的长度必须一致且非空")
    if abs(math.fsum(probs) - 1.0) > 1e-10:
        raise ConfigError(f"原子概率之和为 {math.fsum(probs)}，不是1")
    atoms, inverse = np.unique(values, return_inverse=True)
    masses = np.zeros(atoms.size)
    np.add.at(masses, inverse.reshape(-1), probs)
    after = np.cumsum(masses)
    before = after - masses
    at = np.asarray(cdf(atoms), dtype=np.float64)
    left = np.asarray(cdf(np.nextafter(atoms, -np.inf)), dtype=np.float64)
    return float(max(np.max(np.abs(after - at)), np.max(np.abs(before - left))))


def halfspace_directions(q: int, n_random: int = RatesConfig.RANDOM_DIRECTIONS,
                         seed: int = RatesConfig.DIRECTION_SEED) -> np.ndarray:
    """Helmert基方向加上n_random个固定种子的H_q随机单位方向，形状(q-1+n_random, q)"""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    random = rng.standard_normal((n_random, q))
    random -= random.mean(axis=1, keepdims=True)
    random /= np.linalg.norm(random, axis=1, keepdims=True)
    return np.vstack([hq_basis(q).T, random])


def _vector_discrepancy(vectors: np.ndarray, probs: np.ndarray, limit: GaussianLimit,
                        directions: np.ndarray) -> float:
    worst = 0.0
    for d in directions:
        projected = np.round(vectors @ d, _PROJECTION_DECIMALS) + 0.0
        distance = kolmogorov_distance_1d(
            projected, probs, lambda x, d=d: gaussian_directional_cdf(d, limit, x))
        worst = max(worst, distance)
    return worst


def halfspace_discrepancy(law: MagnetizationLaw, center: Sequence[float], limit: GaussianLimit,
                          directions: Optional[np.ndarray] = None) -> float:
    """
    W_N = √N(X̄_N - center)与高斯极限在半空间族上的最大距离

    Args:
        law: 分布
        center: 中心
        limit: 高斯极限
        directions: 半空间法向量，默认halfspace_directions(q)

    Returns:
        各方向一维Kolmogorov距离的最大值
    """
    directions = halfspace_directions(law.params.q) if directions is None else np.atleast_2d(directions)
    center = np.asarray(center, dtype=np.float64)
    vectors = math.sqrt(law.N) * (law.frequencies - center)
    probs = law.probs
    return _vector_discrepancy(vectors, probs / probs.sum(), limit, directions)


def rate_fit(Ns: Sequence[int], distances: Sequence[float]) -> Tuple[float, float]:
    """
    对数-对数最小二乘斜率

    Returns:
        (log d对log N的斜率, log(d/log N)对log N的斜率)

    Raises:
        MathDegenerateError: 点数不足、log N无方差或距离非正
    """
    Ns = np.asarray(Ns, dtype=np.float64)
    distances = np.asarray(distances, dtype=np.float64)
    if Ns.shape != distances.shape or Ns.size < 2:
        raise MathDegenerateError("拟合至少需要两个点")
    if np.any(distances <= 0) or np.any(Ns <= 1):
        raise MathDegenerateError("距离必须为正且N>1")
    log_n = np.log(Ns)
    if np.ptp(log_n) == 0:
        raise MathDegenerateError("log N没有方差，无法拟合")
    slope = np.polyfit(log_n, np.log(distances), 1)[0]
    corrected = np.polyfit(log_n, np.log(distances / log_n), 1)[0]
    return float(slope), float(corrected)


@dataclass(frozen=True, eq=False)
class RateReport:
    """速率实验结果；auxiliary为特殊I点处V_N的半空间距离"""

    params: ModelParams
    regime: PointKind
    Ns: List[int]
    distances: List[float]
    fitted_slope: float
    fitted_slope_log: float
    auxiliary: Optional[List[float]] = None
    eps: Optional[float] = None
    scale_moments: Optional[List[float]] = None

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"N": self.Ns, "distance": self.distances})
        if self.auxiliary is not None:
            frame["auxiliary"] = self.auxiliary
        if self.scale_moments is not None:
            frame["scale_moment"] = self.scale_moments
        return frame


def _weighted_cov(vectors: np.ndarray, probs: np.ndarray) -> np.ndarray:
    mean = probs @ vectors
    diff = vectors - mean
    cov = (diff.T * probs) @ diff
    return 0.5 * (cov + cov.T)


def _check_balls(point: ClassifiedPoint, eps: Optional[float]) -> float:
    distance = point.maximizers.min_pairwise_distance()
    eps = RatesConfig.EPS_FRACTION * distance if eps is None else eps
    if eps <= 0:
        raise ConfigError("eps必须为正")
    if 2 * eps >= distance:
        raise OverlapError(f"半径{eps}的球相互重叠（极大值点最小间距{distance:.6g}）")
    return eps


def _regular_distance(law, point, directions):
    m = point.maximizers.expanded[0]
    _, cov = centered_stats(law, m)
    return halfspace_discrepancy(law, m, GaussianLimit(cov), directions)


def _critical_distance(law, point, eps, directions):
    worst = 0.0
    for m in point.maximizers.expanded:
        restricted = conditional_restriction(law, m, eps)
        _, cov = centered_stats(restricted, m)
        worst = max(worst, halfspace_discrepancy(restricted, m, GaussianLimit(cov), directions))
    return worst


def _special_one_distance(law, point, directions):
    m = point.maximizers.expanded[0]
    T, V = decompose_TV_many(law.frequencies, m, law.N)
    probs = law.probs / law.probs.sum()
    limit = empirical_limit_scale(law, m, 4)
    distance = kolmogorov_distance_1d(T, probs, limit.cdf)
    auxiliary = math.nan
    if law.params.q > 2:
        auxiliary = _vector_discrepancy(V, probs, GaussianLimit(_weighted_cov(V, probs)), directions)
    return distance, auxiliary, limit.scale_moment


def _special_two_distance(law, point):
    m = point.maximizers.expanded[0]
    F = decompose_F_many(law.frequencies, m, law.N)
    limit = empirical_limit_scale(law, m, 6)
    return kolmogorov_distance_1d(F, law.probs / law.probs.sum(), limit.cdf), limit.scale_moment


def _default_provider(params: ModelParams, cap: Optional[int], chain: Optional[ChainConfig]) -> LawProvider:
    return lambda N: magnetization_law(params, N, cap=cap, chain=chain)


def _laws(provider: LawProvider, Ns: Sequence[int], threads: int) -> List[MagnetizationLaw]:
    if threads > 1 and len(Ns) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            return list(executor.map(provider, Ns))
    return [provider(N) for N in Ns]


def berry_esseen_experiment(params: ModelParams, Ns: Sequence[int], eps: Optional[float] = None,
                            regime: Optional[str] = None, threads: int = 1,
                            cap: Optional[int] = None, chain: Optional[ChainConfig] = None,
                            tol_zero: float = FreeEnergyConfig.TOL_ZERO,
                            law_provider: Optional[LawProvider] = None) -> RateReport:
    """
    按分类分派的Berry-Esseen速率实验

    正则点：W_N对N(0, Cov W_N)的半空间距离；
    临界点：每个极大值点的条件分布上同样的距离，取最大；
    特殊I点：T_N对形状4广义正态的Kolmogorov距离，V_N距离记入auxiliary；
    特殊II点：F_N对形状6广义正态的Kolmogorov距离

    Args:
        params: 模型参数
        Ns: 严格递增的N网格
        eps: 临界点条件球半径，默认最小间距的三分之一
        regime: 期望的区域，与分类不符时报错
        threads: 按N并行的线程数
        cap: 枚举上限
        chain: MCMC配置，给定时超过上限的N改用MCMC
        tol_zero: 分类阈值
        law_provider: 自定义的N ↦ 分布函数（例如带缓存）

    Returns:
        速率报告；点数少于RatesConfig.MIN_FIT_POINTS时斜率为nan

    Raises:
        RegimeMismatchError: 分类与期望区域不符
    """
    Ns = [int(n) for n in Ns]
    if not Ns or any(b <= a for a, b in zip(Ns, Ns[1:])) or Ns[0] < 1:
        raise ConfigError("N网格必须为非空的严格递增正整数")
    if regime == PointKind.SPECIAL_II.value and (params.p, params.q) != (4, 2):
        raise RegimeMismatchError(f"特殊II点只出现在(p,q)=(4,2)，当前为({params.p},{params.q})")

    point = classify(params, tol_zero)
    if regime is not None and regime != point.verdict:
        raise RegimeMismatchError(f"参数点分类为 {point.verdict}，与请求的 {regime} 不符")
    logger.info("速率实验: %s, 分类=%s, Ns=%s", params, point.verdict, Ns)

    directions = halfspace_directions(params.q)
    if point.kind is PointKind.CRITICAL:
        eps = _check_balls(point, eps)

    provider = law_provider or _default_provider(params, cap, chain)
    laws = _laws(provider, Ns, threads)

    distances: List[float] = []
    auxiliary: List[float] = []
    moments: List[float] = []
    for N, law in zip(Ns, laws):
        if point.kind is PointKind.REGULAR:
            distance = _regular_distance(law, point, directions)
        elif point.kind is PointKind.CRITICAL:
            distance = _critical_distance(law, point, eps, directions)
        elif point.kind is PointKind.SPECIAL_I:
            distance, extra, moment = _special_one_distance(law, point, directions)
            auxiliary.append(extra)
            moments.append(moment)
        else:
            distance, moment = _special_two_distance(law, point)
            moments.append(moment)
        logger.info("N=%d: 距离=%.6e", N, distance)
        distances.append(float(distance))

    if len(Ns) >= RatesConfig.MIN_FIT_POINTS:
        slope, slope_log = rate_fit(Ns, distances)
    else:
        logger.warning("N网格只有%d个点，少于%d个，不拟合斜率", len(Ns), RatesConfig.MIN_FIT_POINTS)
        slope, slope_log = math.nan, math.nan

    return RateReport(
        params=params, regime=point.kind, Ns=Ns, distances=distances,
        fitted_slope=slope, fitted_slope_log=slope_log,
        auxiliary=auxiliary or None,
        eps=eps if point.kind is PointKind.CRITICAL else None,
        scale_moments=moments or None,
    )


@dataclass(frozen=True)
class MeanScaling:
    """各N下的√N·‖E W_N‖∞"""

    Ns: List[int]
    values: List[float]

    @property
    def maximum(self) -> float:
        return max(self.values)


def mean_w_scaling_check(params: ModelParams, Ns: Sequence[int],
                         law_provider: Optional[LawProvider] = None,
                         cap: Optional[int] = None) -> MeanScaling:
    """
    正则点处 √N·‖E W_N‖∞ 随N的变化

    Raises:
        RegimeMismatchError: 不是正则点
    """
    point = classify(params)
    if point.kind is not PointKind.REGULAR:
        raise RegimeMismatchError(f"均值尺度检查要求正则点，当前为 {point.verdict}")
    m = point.maximizers.expanded[0]
    provider = law_provider or _default_provider(params, cap, None)
    values = []
    for N in Ns:
        mean_w, _ = centered_stats(provider(int(N)), m)
        values.append(math.sqrt(N) * float(np.max(np.abs(mean_w))))
    return MeanScaling(Ns=[int(n) for n in Ns], values=values)


@dataclass(frozen=True, eq=False)
class CriticalWeights:
    """每个极大值点的球质量、极限权重p_i与√N·|质量-p_i|，以及球外剩余质量的对数"""

    maximizers: List[np.ndarray]
    ball_masses: np.ndarray
    weights: np.ndarray
    scaled_gaps: np.ndarray
    residual_log_mass: float
    eps: float

    def rows(self) -> List[Dict]:
        return [
            {"maximizer": m.tolist(), "ball_mass": float(b), "p": float(w), "gap_sqrt_n": float(g)}
            for m, b, w, g in zip(self.maximizers, self.ball_masses, self.weights, self.scaled_gaps)
        ]


def critical_weights_check(params: ModelParams, N: int, eps: Optional[float] = None,
                           law: Optional[MagnetizationLaw] = None,
                           cap: Optional[int] = None) -> CriticalWeights:
    """
    临界点处各极大值点球内的精确质量与τ权重的比较

    Raises:
        RegimeMismatchError: 不是临界点
        OverlapError: 球相互重叠
    """
    point = classify(params)
    if point.kind is not PointKind.CRITICAL:
        raise RegimeMismatchError(f"临界权重检查要求临界点，当前为 {point.verdict}")
    eps = _check_balls(point, eps)
    law = magnetization_law(params, N, cap=cap) if law is None else law

    maximizers = point.maximizers.expanded
    masses = np.array([math.exp(ball_log_mass(law, m, eps)) for m in maximizers])
    weights = mixture_weights(point.maximizers, params)
    inside = np.zeros(law.size, dtype=bool)
    for m in maximizers:
        inside |= np.linalg.norm(law.frequencies - m, axis=1) < eps
    residual = float(logsumexp(law.log_probs[~inside])) if (~inside).any() else -math.inf
    return CriticalWeights(
        maximizers=maximizers, ball_masses=masses, weights=weights,
        scaled_gaps=math.sqrt(N) * np.abs(masses - weights),
        residual_log_mass=residual, eps=eps,
    )
