"""
最大伪似然估计模块
h=0时β的最大伪似然估计(MPL)：得分函数S(x̄,β)、其β导数、求根、
隐函数梯度ρ，以及√N(β̂-β)的模拟分布和极限混合分布
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import brentq
from scipy.special import logsumexp, softmax

from config import EstimatorConfig
from errors import (
    BracketError, ConfigError, DegenerateSampleError, PottsError,
    RegimeMismatchError, SingularDenominatorError,
)
from free_energy import MaximizerSet, beta_c, find_maximizers
from limit_laws import MixtureLaw, asymptotic_covariance
from metrics_rates import kolmogorov_distance_1d
from model_core import ChainConfig, MagnetizationLaw, ModelParams, magnetization_law, sample_counts

logger = logging.getLogger(__name__)

# 判定x̄为均匀向量的容差
_UNIFORM_TOL = 1e-14


def _weights(xbar: np.ndarray, beta: float, p: int) -> Tuple[np.ndarray, np.ndarray]:
    powers = xbar ** (p - 1)
    return powers, softmax(beta * p * powers)


def score(xbar: Sequence[float], beta: float, p: int) -> float:
    """
    伪似然得分 S(x̄,β) = ‖x̄‖_p^p - Σ x̄_r^{p-1}w_r，w = softmax(βp x̄^{p-1})

    Args:
        xbar: 概率向量
        beta: 逆温度
        p: 相互作用阶数

    Returns:
        S的值
    """
    xbar = np.asarray(xbar, dtype=np.float64)
    powers, weights = _weights(xbar, beta, p)
    return float(np.sum(xbar ** p) - np.sum(powers * weights))


def score_beta_derivative(xbar: Sequence[float], beta: float, p: int) -> float:
    """∂S/∂β = -p·Var_w(x̄^{p-1}) ≤ 0"""
    xbar = np.asarray(xbar, dtype=np.float64)
    powers, weights = _weights(xbar, beta, p)
    mean = np.sum(powers * weights)
    return float(-p * np.sum(weights * (powers - mean) ** 2))


def score_gradient(xbar: Sequence[float], beta: float, p: int) -> np.ndarray:
    """∇_x S(x, β)"""
    xbar = np.asarray(xbar, dtype=np.float64)
    powers, weights = _weights(xbar, beta, p)
    mean = np.sum(powers * weights)
    slope = (p - 1) * xbar ** (p - 2)
    return p * powers - slope * weights * (1.0 + beta * p * (powers - mean))


def log_pseudolikelihood(xbar: Sequence[float], beta: float, p: int) -> float:
    """
    归一化的对数伪似然 ℓ(β) = βΣx̄^p - (1/p)log Σ exp(βp x̄^{p-1})

    以x̄代替去掉单点后的频率，∂ℓ/∂β = S(x̄, β)
    """
    xbar = np.asarray(xbar, dtype=np.float64)
    return float(beta * np.sum(xbar ** p) - logsumexp(beta * p * xbar ** (p - 1)) / p)


@dataclass(frozen=True)
class MplResult:
    """MPL估计结果"""

    beta_hat: float
    score_at_root: float
    iterations: int
    bracket: Tuple[float, float]


def mpl_estimate(xbar: Sequence[float], p: int,
                 bracket: Tuple[float, float] = EstimatorConfig.BRACKET) -> MplResult:
    """
    求解 S(x̄, β) = 0

    Args:
        xbar: 磁化向量
        p: 相互作用阶数
        bracket: 求根区间(lo, hi)

    Returns:
        MPL估计结果

    Raises:
        DegenerateSampleError: x̄为均匀向量
        BracketError: 区间两端S不变号
    """
    xbar = np.asarray(xbar, dtype=np.float64)
    lo, hi = bracket
    if not lo < hi:
        raise ConfigError(f"求根区间不合法: {bracket}")
    if np.max(np.abs(xbar - 1.0 / xbar.size)) < _UNIFORM_TOL:
        raise DegenerateSampleError("x̄为均匀向量，S恒为0，估计量无定义")
    s_lo, s_hi = score(xbar, lo, p), score(xbar, hi, p)
    if s_lo * s_hi > 0:
        raise BracketError(f"S在区间[{lo}, {hi}]两端同号 ({s_lo:.3e}, {s_hi:.3e})")
    root, info = brentq(lambda b: score(xbar, b, p), lo, hi, xtol=1e-14, full_output=True)
    value = score(xbar, root, p)
    if abs(value) >= EstimatorConfig.SCORE_TOL:
        logger.warning("根处得分 %.3e 超过容差", value)
    return MplResult(beta_hat=float(root), score_at_root=value,
                     iterations=int(info.iterations), bracket=(lo, hi))


@dataclass(frozen=True, eq=False)
class RhoVector:
    """ρ = -∇_x S / ∂_β S"""

    rho: np.ndarray


def rho(m: Sequence[float], beta: float, p: int) -> RhoVector:
    """
    极大值点m处的隐函数梯度 ρ = -∇_x S(m,β)/∂_β S(m,β)

    Raises:
        SingularDenominatorError: ∂_β S = 0
    """
    denominator = score_beta_derivative(m, beta, p)
    if abs(denominator) < 1e-300 or not math.isfinite(denominator):
        raise SingularDenominatorError("∂S/∂β为0，ρ无定义")
    return RhoVector(rho=-score_gradient(m, beta, p) / denominator)


def mpl_mixture_law(params: ModelParams, maximizers: Optional[MaximizerSet] = None,
                    weights: Optional[Sequence[float]] = None) -> MixtureLaw:
    """
    √N(β̂-β)的极限混合分布 Σ p_i N(0, ρ_iᵀΣ_iρ_i)

    Args:
        params: h=0的模型参数
        maximizers: 极大值点，默认重新计算
        weights: 混合权重，默认各1/q

    Returns:
        混合分布
    """
    maximizers = find_maximizers(params) if maximizers is None else maximizers
    variances = []
    for m in maximizers.expanded:
        r = rho(m, params.beta, params.p).rho
        variances.append(float(r @ asymptotic_covariance(m, params) @ r))
    count = len(variances)
    weights = np.full(count, 1.0 / count) if weights is None else np.asarray(weights, dtype=float)
    return MixtureLaw(weights=weights, variances=np.array(variances))


@dataclass(frozen=True, eq=False)
class MplSimulation:
    """√N(β̂-β)的模拟分布"""

    params: ModelParams
    N: int
    beta_hats: np.ndarray
    errors: np.ndarray
    excluded: int
    replicate_ids: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    @property
    def sorted_errors(self) -> np.ndarray:
        return np.sort(self.errors)

    def median(self) -> float:
        return float(np.median(self.errors))

    def kolmogorov_to(self, law: MixtureLaw) -> float:
        """经验分布与极限CDF之间的Kolmogorov距离"""
        values = self.sorted_errors
        probs = np.full(values.size, 1.0 / values.size)
        return kolmogorov_distance_1d(values, probs, law.cdf)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "replicate": self.replicate_ids,
            "betaHat": self.beta_hats,
            "sqrtN_err": self.errors,
        })


def simulate_mpl_distribution(params: ModelParams, N: int, replicates: int, seed: int,
                              threads: int = 1, law: Optional[MagnetizationLaw] = None,
                              chain: Optional[ChainConfig] = None, cap: Optional[int] = None,
                              critical_beta: Optional[float] = None) -> MplSimulation:
    """
    从磁化向量分布中抽样x̄并逐个求MPL估计

    Args:
        params: h=0且β>β_c的模型参数
        N: 格点数
        replicates: 重复次数
        seed: 随机种子
        threads: 线程数
        law: 已计算好的分布，默认精确枚举（超限时用chain做MCMC）
        chain: MCMC配置
        cap: 枚举上限
        critical_beta: 已知的β_c，默认重新计算

    Returns:
        模拟结果；退化样本被剔除并计数
    """
    if params.h != 0:
        raise ConfigError("MPL估计只适用于h=0")
    if replicates < 1:
        raise ConfigError("重复次数必须为正")
    threshold = beta_c(params.p, params.q) if critical_beta is None else critical_beta
    if params.beta <= threshold:
        raise RegimeMismatchError(f"MPL极限要求β>β_c={threshold:.6g}，当前β={params.beta}")

    if law is None:
        law = magnetization_law(params, N, cap=cap, chain=chain, threads=threads)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    samples = sample_counts(law, replicates, rng) / N

    def estimate(xbar: np.ndarray) -> float:
        try:
            return mpl_estimate(xbar, params.p).beta_hat
        except PottsError as e:
            logger.debug("剔除退化样本: %s", e)
            return math.nan

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            hats = np.array(list(executor.map(estimate, samples)))
    else:
        hats = np.array([estimate(x) for x in samples])

    valid = np.isfinite(hats)
    excluded = int((~valid).sum())
    if excluded:
        logger.warning("共剔除%d个退化样本（共%d个）", excluded, replicates)
    ids = np.flatnonzero(valid)
    hats = hats[valid]
    return MplSimulation(params=params, N=N, beta_hats=hats,
                         errors=math.sqrt(N) * (hats - params.beta),
                         excluded=excluded, replicate_ids=ids)
