"""
极限分布模块
约化高斯极限、形状4/6的广义正态分布、临界点的τ加权混合分布，
以及磁化向量的T/V/F分解
"""

import math
import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import gammainc, gammaln
from scipy.stats import norm

from config import FreeEnergyConfig
from errors import ConfigError, DimensionError, DomainBoundaryError, MathDegenerateError
from free_energy import (
    MaximizerSet, StationaryProfile, direction_u, hq_basis, k_derivative,
    reduced_quadratic_form,
)
from model_core import MagnetizationLaw, ModelParams, law_moment

logger = logging.getLogger(__name__)

# 方差低于该值视为退化方向
_DEGENERATE_VARIANCE = 1e-14


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    # 特征分解，负特征值截断为0
    values, vectors = np.linalg.eigh(0.5 * (matrix + matrix.T))
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


@dataclass(frozen=True, eq=False)
class GaussianLimit:
    """秩为q-1的高斯极限 N(0, Σ)，Σ零化全1向量"""

    covariance: np.ndarray

    def __post_init__(self):
        cov = np.array(self.covariance, dtype=np.float64, copy=True)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise DimensionError("协方差矩阵必须是方阵")
        cov = 0.5 * (cov + cov.T)
        cov.flags.writeable = False
        object.__setattr__(self, "covariance", cov)

    @property
    def q(self) -> int:
        return int(self.covariance.shape[0])

    @property
    def reduced_covariance(self) -> np.ndarray:
        basis = hq_basis(self.q)
        reduced = basis.T @ self.covariance @ basis
        return 0.5 * (reduced + reduced.T)

    @property
    def sqrt(self) -> np.ndarray:
        return _psd_sqrt(self.covariance)

    def directional_variance(self, direction: Sequence[float]) -> float:
        d = np.asarray(direction, dtype=np.float64)
        return float(d @ self.covariance @ d)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Σ^{1/2}Z，形状(size, q)"""
        return rng.standard_normal((size, self.q)) @ self.sqrt.T


@dataclass(frozen=True)
class GenNormalLaw:
    """密度 ∝ exp(-|x|^k/(k·M)) 的广义正态分布，k∈{4,6}，M = E|X|^k"""

    shape: int
    scale_moment: float

    def __post_init__(self):
        if self.shape not in (4, 6):
            raise ConfigError(f"形状参数只能是4或6，当前为 {self.shape}")
        if not math.isfinite(self.scale_moment) or self.scale_moment <= 0:
            raise ConfigError(f"scale_moment必须为正，当前为 {self.scale_moment}")

    @property
    def _scale(self) -> float:
        return self.shape * self.scale_moment

    @property
    def log_normalizer(self) -> float:
        """log(2(kM)^{1/k}Γ(1+1/k))"""
        k = self.shape
        return math.log(2.0) + math.log(self._scale) / k + float(gammaln(1.0 + 1.0 / k))

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return -np.abs(x) ** self.shape / self._scale - self.log_normalizer

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        tail = gammainc(1.0 / self.shape, np.abs(x) ** self.shape / self._scale)
        value = 0.5 + 0.5 * np.sign(x) * tail
        return float(value) if value.ndim == 0 else value

    def moment(self, order: int) -> float:
        """E|X|^order"""
        k = self.shape
        return math.exp(order / k * math.log(self._scale)
                        + gammaln((order + 1.0) / k) - gammaln(1.0 / k))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        # |X|^k/(kM) ~ Gamma(1/k)
        magnitude = (self._scale * rng.gamma(1.0 / self.shape, size=size)) ** (1.0 / self.shape)
        return np.where(rng.random(size) < 0.5, -magnitude, magnitude)


def gen_normal_cdf(x, law: GenNormalLaw):
    """广义正态分布的CDF（正则化下不完全伽马函数，对称反射）"""
    return law.cdf(x)


def gen_normal_sample(law: GenNormalLaw, rng: np.random.Generator) -> float:
    """抽取一个广义正态样本"""
    return float(law.sample(rng, 1)[0])


@dataclass(frozen=True, eq=False)
class MixtureLaw:
    """一维中心高斯的有限混合 Σ p_i N(0, σ_i²)"""

    weights: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64, copy=True)
        variances = np.array(self.variances, dtype=np.float64, copy=True)
        if weights.shape != variances.shape or weights.ndim != 1 or weights.size == 0:
            raise DimensionError("权重和方差的长度必须一致且非空")
        if np.any(weights <= 0) or abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ConfigError("混合权重必须为正且和为1")
        if np.any(variances < 0):
            raise ConfigError("方差不能为负")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "variances", variances)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        total = np.zeros_like(x)
        for w, v in zip(self.weights, self.variances):
            if v <= _DEGENERATE_VARIANCE:
                total = total + w * (x >= 0)
            else:
                total = total + w * norm.cdf(x / math.sqrt(v))
        return float(total) if total.ndim == 0 else total

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        component = rng.choice(self.weights.size, size=size, p=self.weights)
        return rng.standard_normal(size) * np.sqrt(self.variances[component])


@dataclass(frozen=True, eq=False)
class TVDecomposition:
    """X̄_N - m_* = N^{-1/4}T u + N^{-1/2}V，V_1 = 0"""

    T: float
    V: np.ndarray

    def reconstruct(self, mstar: Sequence[float], N: int) -> np.ndarray:
        mstar = np.asarray(mstar, dtype=np.float64)
        return mstar + N ** -0.25 * self.T * direction_u(mstar.size) + self.V / math.sqrt(N)


def _pair(xbar, mstar):
    xbar = np.asarray(xbar, dtype=np.float64)
    mstar = np.asarray(mstar, dtype=np.float64)
    if xbar.shape[-1] != mstar.shape[-1]:
        raise DimensionError("x̄与m_*的维度不一致")
    return xbar, mstar


def decompose_TV_many(xbar: np.ndarray, mstar: Sequence[float], N: int):
    """
    批量T/V分解

    Args:
        xbar: (M, q)频率矩阵
        mstar: 展开点
        N: 格点数

    Returns:
        (T, V)，形状分别为(M,)和(M, q)
    """
    xbar, mstar = _pair(np.atleast_2d(xbar), mstar)
    q = mstar.size
    T = N ** 0.25 * (xbar[:, 0] - mstar[0]) / (1 - q)
    V = math.sqrt(N) * (xbar - mstar - N ** -0.25 * T[:, None] * direction_u(q))
    V[:, 0] = 0.0
    return T, V


def decompose_TV(xbar: Sequence[float], mstar: Sequence[float], N: int) -> TVDecomposition:
    """T = N^{1/4}(x̄_1 - m_1)/(1-q)，V = √N(x̄ - m_* - N^{-1/4}T u)"""
    T, V = decompose_TV_many(xbar, mstar, N)
    return TVDecomposition(T=float(T[0]), V=V[0])


def decompose_F_many(xbar: np.ndarray, mstar: Sequence[float], N: int) -> np.ndarray:
    """批量F分解，仅q=2"""
    xbar, mstar = _pair(np.atleast_2d(xbar), mstar)
    if mstar.size != 2:
        raise DimensionError(f"F分解只适用于q=2，当前q={mstar.size}")
    return -N ** (1.0 / 6.0) * (xbar[:, 0] - mstar[0])


def decompose_F(xbar: Sequence[float], mstar: Sequence[float], N: int) -> float:
    """F = N^{1/6}(x̄_1 - m_1)/(1-q) = -N^{1/6}(x̄_1 - m_1)"""
    return float(decompose_F_many(xbar, mstar, N)[0])


def gaussian_directional_cdf(direction: Sequence[float], limit: GaussianLimit, x):
    """
    P(dᵀΣ^{1/2}Z ≤ x)

    Args:
        direction: 非零方向d
        limit: 高斯极限
        x: 实数或数组

    Returns:
        Φ(x/√(dᵀΣd))；dᵀΣd = 0时为0处的阶跃函数
    """
    d = np.asarray(direction, dtype=np.float64)
    if d.shape != (limit.q,):
        raise DimensionError(f"方向的长度必须为{limit.q}")
    if not np.any(d):
        raise ConfigError("方向不能为零向量")
    variance = limit.directional_variance(d)
    x = np.asarray(x, dtype=np.float64)
    if variance <= _DEGENERATE_VARIANCE * max(1.0, float(d @ d)):
        value = (x >= 0).astype(np.float64)
    else:
        value = norm.cdf(x / math.sqrt(variance))
    return float(value) if np.ndim(value) == 0 else value


def tau_weight(profile: StationaryProfile, params: ModelParams,
               tol_zero: float = FreeEnergyConfig.TOL_ZERO) -> float:
    """
    τ(m_i) = √(|f''(s_i)|^{-1}(-k''((1-s_i)/q))^{2-q} / ∏ m_{i,r})

    Raises:
        MathDegenerateError: |f''| < tol_zero（特殊点，没有混合极限）
    """
    if abs(profile.f2) < tol_zero:
        raise MathDegenerateError(f"|f''(s)|={abs(profile.f2):.3e} 过小，特殊点没有混合极限")
    if np.any(profile.x <= 0):
        raise DomainBoundaryError("极大值点的坐标必须为正")
    curvature = -float(k_derivative((1.0 - profile.s) / params.q, params, 2))
    radicand = curvature ** (2 - params.q) / abs(profile.f2) / float(np.prod(profile.x))
    if not radicand > 0:
        raise MathDegenerateError(f"τ的根号内为非正数 {radicand:.3e}")
    return math.sqrt(radicand)


def mixture_weights(maximizers: MaximizerSet, params: ModelParams,
                    tol_zero: float = FreeEnergyConfig.TOL_ZERO) -> np.ndarray:
    """每个（展开后的）极大值点的权重 p_i = τ_i/Στ_j"""
    taus = np.array([tau_weight(maximizers.profiles[i], params, tol_zero)
                     for i in maximizers.profile_index])
    return taus / math.fsum(taus)


def empirical_limit_scale(law: MagnetizationLaw, mstar: Sequence[float],
                          kind: Union[int, str]) -> GenNormalLaw:
    """
    由有限N分布计算 E T_N^4（形状4）或 E F_N^6（形状6）并构造广义正态分布

    Args:
        law: 精确或经验分布
        mstar: 极大值点
        kind: 4/"shape4" 或 6/"shape6"

    Returns:
        广义正态分布

    Raises:
        MathDegenerateError: 矩为0
    """
    shape = {"shape4": 4, "shape6": 6}.get(kind, kind)
    if shape == 4:
        moment = law_moment(law, lambda freqs: decompose_TV_many(freqs, mstar, law.N)[0] ** 4)
    elif shape == 6:
        moment = law_moment(law, lambda freqs: decompose_F_many(freqs, mstar, law.N) ** 6)
    else:
        raise ConfigError(f"未知的极限类型: {kind}")
    if not moment > 0:
        raise MathDegenerateError("尺度矩为0，分布退化")
    return GenNormalLaw(shape=int(shape), scale_moment=moment)


def asymptotic_covariance(m: Sequence[float], params: ModelParams) -> np.ndarray:
    """
    N→∞时Cov(W_N)的极限：(-Q|_{H_q})^{-1}提升回ℝ^q

    Raises:
        MathDegenerateError: Q在H_q上不是负定的
    """
    form = reduced_quadratic_form(m, params)
    if form.eigenvalues.max() >= 0:
        raise MathDegenerateError("约化二次型不是负定的，高斯极限不存在")
    inverse = np.linalg.inv(-form.matrix)
    cov = form.basis @ inverse @ form.basis.T
    return 0.5 * (cov + cov.T)


def cdf_table(cdf: Callable, grid: Sequence[float]) -> pd.DataFrame:
    """CDF在网格上的取值表 (x, cdf)"""
    grid = np.asarray(grid, dtype=np.float64)
    values = np.asarray(cdf(grid), dtype=np.float64).reshape(grid.shape)
    return pd.DataFrame({"x": grid, "cdf": values})


def limit_laws_for(maximizers: MaximizerSet, params: ModelParams) -> List[GaussianLimit]:
    """每个展开后的极大值点处的高斯极限"""
    return [GaussianLimit(asymptotic_covariance(x, params)) for x in maximizers.expanded]
