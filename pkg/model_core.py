"""
模型核心模块
张量Curie-Weiss Potts模型的精确与蒙特卡洛计算：
1. 组合网格上磁化向量的精确分布（对数空间、log-gamma多项式系数）
2. 暴力枚举全部q^N个构型的对照分布
3. 单点条件颜色分布、Glauber交换对转移核与MCMC采样
4. 矩、中心化统计量、条件限制和Stirling密度近似检查
颜色在代码中以0为起点编号，颜色0即外场作用的颜色1
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.special import gammaln, logsumexp, softmax

from config import EnumerationConfig
from errors import (
    ConfigError, DimensionError, DomainBoundaryError, EmptyRestrictionError,
    GridTooLargeError, MathDegenerateError,
)

logger = logging.getLogger(__name__)

# 每个numba调用块的最大步数
_BLOCK_STEPS = 2**20


@dataclass(frozen=True)
class ModelParams:
    """模型参数(p, q, β, h)，参数空间为 β>0, h≥0"""

    p: int
    q: int
    beta: float
    h: float = 0.0

    def __post_init__(self):
        for name in ("p", "q"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 2:
                raise ConfigError(f"{name}必须是不小于2的整数，当前为 {value}")
            object.__setattr__(self, name, int(value))
        beta = float(self.beta)
        h = float(self.h)
        if not math.isfinite(beta) or beta <= 0:
            raise ConfigError(f"beta必须为正的有限实数，当前为 {self.beta}")
        if not math.isfinite(h) or h < 0:
            raise ConfigError(f"h必须为非负的有限实数，当前为 {self.h}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "h", h)

    def with_(self, **changes) -> "ModelParams":
        """返回修改了部分字段的新参数"""
        return replace(self, **changes)

    def to_dict(self) -> Dict:
        return {"p": self.p, "q": self.q, "beta": self.beta, "h": self.h}


@dataclass(frozen=True)
class ColorCounts:
    """各颜色的计数向量，总和为N"""

    n: Tuple[int, ...]

    def __post_init__(self):
        values = tuple(int(v) for v in self.n)
        if not values or any(v < 0 for v in values):
            raise ConfigError(f"颜色计数必须为非负整数: {self.n}")
        object.__setattr__(self, "n", values)

    @property
    def N(self) -> int:
        return sum(self.n)

    @property
    def q(self) -> int:
        return len(self.n)

    def as_array(self) -> np.ndarray:
        return np.array(self.n, dtype=np.int64)

    def frequencies(self) -> np.ndarray:
        """概率向量 n/N"""
        if self.N == 0:
            raise DomainBoundaryError("N=0时频率向量无定义")
        return self.as_array() / self.N

    @classmethod
    def from_colors(cls, colors: Sequence[int], q: int) -> "ColorCounts":
        return cls(tuple(np.bincount(np.asarray(colors, dtype=np.int64), minlength=q)[:q]))


@dataclass(frozen=True, eq=False)
class MagnetizationLaw:
    """
    磁化向量X̄_N在组合网格上的分布

    counts为(M, q)整数矩阵，每行一个原子；log_probs为对应的对数概率；
    log_z = log(q^N Z_N(β,h))，经验分布的log_z为nan
    """

    params: ModelParams
    N: int
    counts: np.ndarray
    log_probs: np.ndarray
    log_z: float
    empirical: bool = False

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        log_probs = np.array(self.log_probs, dtype=np.float64, copy=True)
        if counts.ndim != 2 or counts.shape[0] != log_probs.shape[0]:
            raise DimensionError("原子计数矩阵与对数概率长度不一致")
        if counts.shape[1] != self.params.q:
            raise DimensionError(f"原子维度{counts.shape[1]}与q={self.params.q}不一致")
        counts.flags.writeable = False
        log_probs.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "log_probs", log_probs)

    @property
    def size(self) -> int:
        return int(self.counts.shape[0])

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def frequencies(self) -> np.ndarray:
        """每个原子的概率向量 n/N，形状(M, q)"""
        return self.counts / self.N

    def total_mass(self) -> float:
        return math.fsum(self.probs)

    def mean(self) -> np.ndarray:
        """E X̄_N，按坐标做补偿求和"""
        probs = self.probs
        freqs = self.frequencies
        return np.array([math.fsum(freqs[:, r] * probs) for r in range(self.params.q)])

    def total_variation(self, other: "MagnetizationLaw") -> float:
        """与另一个分布在支撑并集上的全变差距离"""
        if other.params.q != self.params.q:
            raise DimensionError("两个分布的颜色数不同")
        keys = np.vstack([self.counts, other.counts])
        _, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mine = np.zeros(inverse.max() + 1)
        theirs = np.zeros_like(mine)
        np.add.at(mine, inverse[:self.size], self.probs)
        np.add.at(theirs, inverse[self.size:], other.probs)
        return 0.5 * math.fsum(np.abs(mine - theirs))


@dataclass(frozen=True, eq=False)
class SpinConfig:
    """
    自旋构型X∈[q]^N及其颜色计数缓存

    传入counts时只做O(q)的一致性检查，完整核对见check()
    """

    colors: np.ndarray
    q: int
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        colors = np.array(self.colors, dtype=np.int64, copy=True)
        if colors.ndim != 1 or colors.size == 0:
            raise ConfigError("构型必须是非空的一维颜色向量")
        if colors.min() < 0 or colors.max() >= self.q:
            raise ConfigError(f"颜色必须在[0, {self.q})内")
        if self.counts is None:
            counts = np.bincount(colors, minlength=self.q).astype(np.int64)
        else:
            counts = np.array(self.counts, dtype=np.int64, copy=True)
            if counts.shape != (self.q,) or counts.sum() != colors.size:
                raise ConfigError("缓存计数与构型不一致")
        colors.flags.writeable = False
        counts.flags.writeable = False
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "counts", counts)

    @property
    def N(self) -> int:
        return int(self.colors.size)

    def color_counts(self) -> ColorCounts:
        return ColorCounts(tuple(self.counts))

    def frequencies(self) -> np.ndarray:
        return self.counts / self.N

    def check(self) -> bool:
        """缓存计数是否等于颜色计数"""
        return bool(np.array_equal(np.bincount(self.colors, minlength=self.q), self.counts))

    @classmethod
    def random(cls, N: int, q: int, rng: np.random.Generator) -> "SpinConfig":
        return cls(rng.integers(0, q, size=N), q)


@dataclass(frozen=True)
class ChainConfig:
    """MCMC链配置：预烧扫描数、抽样间隔（扫描）、链数、每条链样本数、种子"""

    burn_in: int = 200
    thin: int = 1
    replicates: int = 4
    samples: int = 10**4
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0:
            raise ConfigError("预烧扫描数不能为负")
        for name in ("thin", "replicates", "samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}必须为正")
        if self.seed < 0:
            raise ConfigError("种子必须为非负整数")


def compositions(N: int, q: int) -> np.ndarray:
    """
    N分成q个非负整数部分的全部组合

    Args:
        N: 总数
        q: 部分数

    Returns:
        (C(N+q-1, q-1), q)矩阵，按(n_1,…,n_{q-1})的余字典序排列（n_{q-1}最高位）
    """
    if N < 0 or q < 1:
        raise ConfigError("组合参数不合法")
    free = q - 1
    memo: Dict[Tuple[int, int], np.ndarray] = {}

    def bounded(k: int, total: int) -> np.ndarray:
        # k个非负分量、和不超过total的全部向量，余字典序
        key = (k, total)
        if key in memo:
            return memo[key]
        if k == 0:
            block = np.zeros((1, 0), dtype=np.int64)
        elif k == 1:
            block = np.arange(total + 1, dtype=np.int64).reshape(-1, 1)
        else:
            parts = []
            for last in range(total + 1):
                head = bounded(k - 1, total - last)
                parts.append(np.column_stack([head, np.full(head.shape[0], last, dtype=np.int64)]))
            block = np.vstack(parts)
        memo[key] = block
        return block

    head = bounded(free, N)
    tail = N - head.sum(axis=1, keepdims=True)
    return np.hstack([head, tail])


def grid_size(N: int, q: int) -> int:
    """组合网格大小 C(N+q-1, q-1)"""
    return math.comb(N + q - 1, q - 1)


def log_multinomial(counts: np.ndarray) -> np.ndarray:
    """log |A_N(v)| = log N! - Σ log n_r!，沿最后一维计算"""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum(axis=-1)
    return gammaln(total + 1.0) - gammaln(counts + 1.0).sum(axis=-1)


def _log_weight_array(counts: np.ndarray, N: int, params: ModelParams) -> np.ndarray:
    x = np.asarray(counts, dtype=np.float64) / N
    return params.beta * N * np.sum(x ** params.p, axis=-1) + params.h * np.asarray(counts)[..., 0]


def log_weight(counts: ColorCounts, params: ModelParams) -> float:
    """
    Gibbs权重的指数部分 βN Σ_r (n_r/N)^p + N h (n_1/N)

    Args:
        counts: 颜色计数
        params: 模型参数

    Returns:
        对数权重
    """
    if counts.q != params.q:
        raise DimensionError(f"计数维度{counts.q}与q={params.q}不一致")
    if counts.N < 1:
        raise ConfigError("N必须至少为1")
    return float(_log_weight_array(counts.as_array(), counts.N, params))


def configuration_log_weight(colors: np.ndarray, params: ModelParams) -> np.ndarray:
    """
    单个（或一批）构型在均匀张量J=N^{1-p}下的对数权重

    Args:
        colors: 形状(N,)或(B, N)的颜色矩阵

    Returns:
        每个构型的对数权重
    """
    colors = np.atleast_2d(np.asarray(colors, dtype=np.int64))
    N = colors.shape[1]
    tally = (colors[:, :, None] == np.arange(params.q)).sum(axis=1).astype(np.float64)
    # 单色p元组个数 Σ_r n_r^p，乘以 J = N^{1-p}
    monochrome = np.sum(tally ** params.p, axis=1)
    return params.beta * monochrome * float(N) ** (1 - params.p) + params.h * tally[:, 0]


def _chunked(n: int, size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + size, n)) for start in range(0, n, size)]


def exact_magnetization_law(params: ModelParams, N: int, cap: Optional[int] = None,
                            threads: int = 1) -> MagnetizationLaw:
    """
    在组合网格上精确计算磁化向量的分布

    Args:
        params: 模型参数
        N: 格点数
        cap: 网格原子数上限，默认EnumerationConfig.CAP
        threads: 分块计算的线程数

    Returns:
        精确分布，概率和为1（误差1e-12以内）

    Raises:
        GridTooLargeError: 网格超过上限，应改用MCMC
    """
    if N < 1:
        raise ConfigError("N必须至少为1")
    cap = EnumerationConfig.CAP if cap is None else cap
    size = grid_size(N, params.q)
    if size > cap:
        raise GridTooLargeError(
            f"组合网格大小{size}超过上限{cap}（N={N}, q={params.q}），请改用MCMC")

    counts = compositions(N, params.q)
    chunks = _chunked(size, EnumerationConfig.CHUNK)

    def unnormalized(bounds: Tuple[int, int]) -> np.ndarray:
        block = counts[bounds[0]:bounds[1]]
        return log_multinomial(block) + _log_weight_array(block, N, params)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            pieces = list(executor.map(unnormalized, chunks))
    else:
        pieces = [unnormalized(b) for b in chunks]

    # 按块顺序归约，保证结果确定
    log_z = float(logsumexp([logsumexp(piece) for piece in pieces]))
    log_unnorm = np.concatenate(pieces)
    logger.debug("精确枚举完成: N=%d, 原子数=%d, logZ=%.6f", N, size, log_z)
    return MagnetizationLaw(params=params, N=N, counts=counts,
                            log_probs=log_unnorm - log_z, log_z=log_z)


def _colex_order(counts: np.ndarray) -> np.ndarray:
    q = counts.shape[1]
    if q == 1:
        return np.arange(counts.shape[0])
    # lexsort以最后一个键为主键
    return np.lexsort(counts[:, :q - 1].T)


def brute_force_law(params: ModelParams, N: int, cap: Optional[int] = None) -> MagnetizationLaw:
    """
    枚举全部q^N个构型并按颜色计数聚合，作为精确分布的对照

    Args:
        params: 模型参数
        N: 格点数
        cap: q^N的上限，默认EnumerationConfig.BRUTE_FORCE_CAP

    Returns:
        与exact_magnetization_law相同约定的分布
    """
    if N < 1:
        raise ConfigError("N必须至少为1")
    cap = EnumerationConfig.BRUTE_FORCE_CAP if cap is None else cap
    total = params.q ** N
    if total > cap:
        raise GridTooLargeError(f"构型数q^N={total}超过暴力枚举上限{cap}")

    powers = params.q ** np.arange(N, dtype=np.int64)
    accumulated: Dict[Tuple[int, ...], float] = {}
    for start, stop in _chunked(total, 2**16):
        index = np.arange(start, stop, dtype=np.int64)
        colors = (index[:, None] // powers) % params.q
        weights = configuration_log_weight(colors, params)
        tally = (colors[:, :, None] == np.arange(params.q)).sum(axis=1)
        groups, inverse = np.unique(tally, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        starts = np.r_[0, np.flatnonzero(np.diff(inverse[order])) + 1]
        group_lse = np.logaddexp.reduceat(weights[order], starts)
        for row, value in zip(groups, group_lse):
            key = tuple(int(v) for v in row)
            accumulated[key] = np.logaddexp(accumulated[key], value) if key in accumulated else value

    keys = np.array(sorted(accumulated), dtype=np.int64)
    keys = keys[_colex_order(keys)]
    log_unnorm = np.array([accumulated[tuple(int(v) for v in row)] for row in keys])
    log_z = float(logsumexp(log_unnorm))
    return MagnetizationLaw(params=params, N=N, counts=keys,
                            log_probs=log_unnorm - log_z, log_z=log_z)


def law_moment(law: MagnetizationLaw, g: Callable, vectorized: bool = True) -> float:
    """
    计算 E g(X̄_N)，补偿求和

    Args:
        law: 分布
        g: vectorized为True时接收(M, q)频率矩阵并返回(M,)数组；
           否则逐个接收ColorCounts并返回实数
        vectorized: g是否为向量化函数

    Returns:
        期望值
    """
    if vectorized:
        values = np.asarray(g(law.frequencies), dtype=np.float64).reshape(-1)
    else:
        values = np.array([float(g(ColorCounts(tuple(row)))) for row in law.counts])
    if values.shape[0] != law.size:
        raise DimensionError("g的返回值长度与原子数不一致")
    if not np.all(np.isfinite(values)):
        raise MathDegenerateError("g在支撑上不是有限值")
    return math.fsum(values * law.probs)


def _check_probability_vector(v: Sequence[float], q: int, name: str = "center") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (q,):
        raise DimensionError(f"{name}的长度必须为{q}")
    if np.any(v < -1e-12) or abs(v.sum() - 1.0) > 1e-9:
        raise ConfigError(f"{name}必须是概率向量")
    return v


def centered_stats(law: MagnetizationLaw, center: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    W_N = √N(X̄_N - center) 的均值和协方差

    Returns:
        (meanW, covW)，covW对称半正定且零化全1向量
    """
    q = law.params.q
    center = _check_probability_vector(center, q)
    mean = law.mean()
    mean_w = math.sqrt(law.N) * (mean - center)
    diff = law.frequencies - mean
    cov = law.N * (diff.T * law.probs) @ diff
    # 投影到H_q，消除舍入误差造成的行和偏差
    projector = np.eye(q) - np.full((q, q), 1.0 / q)
    cov = projector @ (0.5 * (cov + cov.T)) @ projector
    return mean_w, 0.5 * (cov + cov.T)


def _increment_logits(n: np.ndarray, N: int, p: int, beta: float) -> np.ndarray:
    # βN[((n_r+1)/N)^p - (n_r/N)^p]
    n = np.asarray(n, dtype=np.float64)
    return beta * ((n + 1.0) ** p - n ** p) / float(N) ** (p - 1)


def conditional_color_distribution(counts_excluding_site: ColorCounts, params: ModelParams,
                                   N: int, exact: bool = False) -> np.ndarray:
    """
    单点条件颜色分布 P(X_j = r | (X_t)_{t≠j})

    Args:
        counts_excluding_site: 除去第j个格点后的颜色计数（总和N-1）
        params: 模型参数
        N: 格点总数，m_{j,r} = count_r / N
        exact: False时用一阶形式 ∝ exp(pβ m^{p-1} + h δ_{r,1})；
            True时用Gibbs权重之差 ∝ exp(βN[((n_r+1)/N)^p - (n_r/N)^p] + h δ_{r,1})。
            p=2时两者相同

    Returns:
        长度q的概率向量
    """
    n = counts_excluding_site.as_array()
    if n.shape[0] != params.q:
        raise DimensionError(f"计数维度{n.shape[0]}与q={params.q}不一致")
    if n.sum() != N - 1:
        raise ConfigError(f"除去格点后的计数总和必须为N-1={N - 1}")
    if exact:
        logits = _increment_logits(n, N, params.p, params.beta)
    else:
        logits = params.p * params.beta * (n / N) ** (params.p - 1)
    logits[0] += params.h
    return softmax(logits)


def _conditional_by_color(state: SpinConfig, params: ModelParams) -> np.ndarray:
    # 条件分布只依赖于被移除格点的颜色，按颜色缓存；Glauber核用精确条件分布
    rows = []
    for color in range(params.q):
        if state.counts[color] == 0:
            rows.append(np.full(params.q, np.nan))
            continue
        rest = state.counts.copy()
        rest[color] -= 1
        rows.append(conditional_color_distribution(ColorCounts(tuple(rest)), params, state.N,
                                                   exact=True))
    return np.array(rows)


def glauber_step(state: SpinConfig, params: ModelParams, rng: np.random.Generator) -> SpinConfig:
    """
    一步Glauber更新：均匀选取格点I，按Gibbs测度的精确条件分布重新抽取其颜色

    Returns:
        新构型；颜色未变时返回原对象。计数按O(q)增量更新
    """
    if state.q != params.q:
        raise DimensionError("构型颜色数与参数不一致")
    j = int(rng.integers(state.N))
    old = int(state.colors[j])
    rest = state.counts.copy()
    rest[old] -= 1
    probs = conditional_color_distribution(ColorCounts(tuple(rest)), params, state.N, exact=True)
    new = int(rng.choice(params.q, p=probs))
    if new == old:
        return state
    colors = state.colors.copy()
    colors[j] = new
    rest[new] += 1
    return SpinConfig(colors, params.q, rest)


def glauber_kernel(state: SpinConfig, params: ModelParams) -> np.ndarray:
    """
    一步Glauber转移核

    Returns:
        (N, q)矩阵，K[j, r] = (1/N) P(X_j = r | 其余格点)，所有元素之和为1
    """
    by_color = _conditional_by_color(state, params)
    return by_color[state.colors] / state.N


def exchangeable_regression(state: SpinConfig, params: ModelParams,
                            center: Sequence[float]) -> np.ndarray:
    """
    逐一枚举N·q个转移结果，计算 E[W' - W | X]

    Args:
        state: 当前构型
        params: 模型参数
        center: W = √N(X̄ - center) 的中心

    Returns:
        长度q的条件期望向量
    """
    center = _check_probability_vector(center, params.q)
    kernel = glauber_kernel(state, params)
    root_n = math.sqrt(state.N)
    w_now = root_n * (state.frequencies() - center)
    expected = np.zeros(params.q)
    for j in range(state.N):
        for r in range(params.q):
            counts = state.counts.copy()
            counts[state.colors[j]] -= 1
            counts[r] += 1
            w_next = root_n * (counts / state.N - center)
            expected += kernel[j, r] * (w_next - w_now)
    return expected


def regression_identity(state: SpinConfig, params: ModelParams,
                        center: Sequence[float]) -> np.ndarray:
    """
    交换对回归的闭式表达（泰勒展开之前）：
    -W_r/N - x_{0,r}/√N + N^{-3/2} Σ_j P(X_j = r | 其余格点)
    """
    center = _check_probability_vector(center, params.q)
    N = state.N
    w_now = math.sqrt(N) * (state.frequencies() - center)
    conditional_sum = (_conditional_by_color(state, params)[state.colors]).sum(axis=0)
    return -w_now / N - center / math.sqrt(N) + conditional_sum / N ** 1.5


@njit(nogil=True)
def _glauber_chain(colors, counts, sites, uniforms, p, beta, h, record_every, out):
    N = colors.shape[0]
    q = counts.shape[0]
    scale = beta / float(N) ** (p - 1)
    weights = np.empty(q)
    recorded = 0
    for t in range(sites.shape[0]):
        j = sites[t]
        counts[colors[j]] -= 1
        top = -np.inf
        for r in range(q):
            n = float(counts[r])
            value = scale * ((n + 1.0) ** p - n ** p)
            if r == 0:
                value += h
            weights[r] = value
            if value > top:
                top = value
        total = 0.0
        for r in range(q):
            weights[r] = np.exp(weights[r] - top)
            total += weights[r]
        threshold = uniforms[t] * total
        chosen = q - 1
        running = 0.0
        for r in range(q):
            running += weights[r]
            if threshold < running:
                chosen = r
                break
        colors[j] = chosen
        counts[chosen] += 1
        if record_every > 0 and (t + 1) % record_every == 0:
            for r in range(q):
                out[recorded, r] = counts[r]
            recorded += 1
    return recorded


def _run_chain(seed_seq: np.random.SeedSequence, params: ModelParams, N: int,
               chain: ChainConfig) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    colors = rng.integers(0, params.q, size=N).astype(np.int64)
    counts = np.bincount(colors, minlength=params.q).astype(np.int64)
    no_record = np.empty((0, params.q), dtype=np.int64)

    # 预烧
    remaining = chain.burn_in * N
    while remaining > 0:
        steps = min(remaining, _BLOCK_STEPS)
        _glauber_chain(colors, counts, rng.integers(0, N, size=steps), rng.random(steps),
                       params.p, params.beta, params.h, 0, no_record)
        remaining -= steps

    record_every = chain.thin * N
    per_block = max(1, _BLOCK_STEPS // record_every)
    out = np.empty((chain.samples, params.q), dtype=np.int64)
    filled = 0
    while filled < chain.samples:
        k = min(per_block, chain.samples - filled)
        steps = k * record_every
        filled += _glauber_chain(colors, counts, rng.integers(0, N, size=steps), rng.random(steps),
                                 params.p, params.beta, params.h, record_every,
                                 out[filled:filled + k])
    return out


def mcmc_magnetization_law(params: ModelParams, N: int, chain: ChainConfig,
                           threads: int = 1) -> MagnetizationLaw:
    """
    用Glauber动力学采样得到磁化向量的经验分布

    Args:
        params: 模型参数
        N: 格点数
        chain: 链配置，每条链使用独立的Philox随机流
        threads: 并行链的线程数

    Returns:
        经验分布（empirical=True，log_z为nan），给定种子时结果确定
    """
    if N < 1:
        raise ConfigError("N必须至少为1")
    streams = np.random.SeedSequence(chain.seed).spawn(chain.replicates)
    logger.info("MCMC采样: N=%d, 链数=%d, 每条链样本=%d", N, chain.replicates, chain.samples)

    def run(seed_seq):
        return _run_chain(seed_seq, params, N, chain)

    if threads > 1 and chain.replicates > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            samples = list(executor.map(run, streams))
    else:
        samples = [run(s) for s in streams]

    rows = np.vstack(samples)
    atoms, frequency = np.unique(rows, axis=0, return_counts=True)
    order = _colex_order(atoms)
    atoms, frequency = atoms[order], frequency[order]
    return MagnetizationLaw(params=params, N=N, counts=atoms,
                            log_probs=np.log(frequency / rows.shape[0]),
                            log_z=math.nan, empirical=True)


def sample_counts(law: MagnetizationLaw, size: int, rng: np.random.Generator) -> np.ndarray:
    """从分布中抽取size个颜色计数向量"""
    probs = law.probs
    index = rng.choice(law.size, size=size, p=probs / probs.sum())
    return law.counts[index]


def _ball_mask(law: MagnetizationLaw, center: Sequence[float], eps: float) -> np.ndarray:
    center = _check_probability_vector(center, law.params.q)
    if eps <= 0:
        raise ConfigError("eps必须为正")
    return np.linalg.norm(law.frequencies - center, axis=1) < eps


def ball_log_mass(law: MagnetizationLaw, center: Sequence[float], eps: float) -> float:
    """log P(‖X̄_N - center‖₂ < eps)，球内无原子时为-inf"""
    mask = _ball_mask(law, center, eps)
    if not mask.any():
        return -math.inf
    return float(logsumexp(law.log_probs[mask]))


def conditional_restriction(law: MagnetizationLaw, center: Sequence[float],
                            eps: float) -> MagnetizationLaw:
    """
    把分布限制在欧氏球B(center, eps)内并重新归一化

    Raises:
        EmptyRestrictionError: 球内没有原子
    """
    mask = _ball_mask(law, center, eps)
    if not mask.any():
        raise EmptyRestrictionError(f"球B(center, {eps})内没有任何原子")
    kept = law.log_probs[mask]
    log_mass = float(logsumexp(kept))
    return MagnetizationLaw(params=law.params, N=law.N, counts=law.counts[mask],
                            log_probs=kept - log_mass, log_z=law.log_z + log_mass,
                            empirical=law.empirical)


def stirling_density_check(v: Sequence[float], params: ModelParams, N: int) -> Tuple[float, float]:
    """
    比较网格点v处的精确对数质量与Stirling近似

    Returns:
        (exactLogMass, approxLogMass)，两者之差为O(1/N)

    Raises:
        DomainBoundaryError: v有零坐标
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.q,):
        raise DimensionError(f"v的长度必须为{params.q}")
    if np.any(v <= 0):
        raise DomainBoundaryError("v的所有坐标必须为正")
    scaled = N * v
    counts = np.rint(scaled)
    if np.any(np.abs(scaled - counts) > 1e-9) or counts.sum() != N:
        raise ConfigError("N·v必须是总和为N的整数向量")

    energy = params.beta * np.sum(v ** params.p) + params.h * v[0]
    exact = float(log_multinomial(counts)) + N * energy
    entropy = -np.sum(v * np.log(v))
    half_dim = 0.5 * (params.q - 1)
    log_amplitude = -half_dim * math.log(2 * math.pi) - 0.5 * np.sum(np.log(v))
    approx = -half_dim * math.log(N) + log_amplitude + N * (energy + entropy)
    return exact, float(approx)


def configuration_transition_matrix(params: ModelParams, N: int,
                                    cap: int = 4096) -> Tuple[np.ndarray, np.ndarray]:
    """
    在全部q^N个构型上显式构造一步Glauber转移矩阵

    Args:
        params: 模型参数
        N: 格点数
        cap: 构型数上限

    Returns:
        (P, pi)：P[a, b]为构型a到b的转移概率，pi为精确的构型分布
    """
    total = params.q ** N
    if total > cap:
        raise GridTooLargeError(f"构型数q^N={total}超过转移矩阵上限{cap}")
    powers = params.q ** np.arange(N, dtype=np.int64)
    index = np.arange(total, dtype=np.int64)
    colors = (index[:, None] // powers) % params.q
    weights = configuration_log_weight(colors, params)
    pi = np.exp(weights - logsumexp(weights))

    matrix = np.zeros((total, total))
    for a in range(total):
        state = SpinConfig(colors[a], params.q)
        kernel = glauber_kernel(state, params)
        for j in range(N):
            for r in range(params.q):
                # 第j位改成颜色r后的构型编号
                b = a + (r - colors[a, j]) * powers[j]
                matrix[a, b] += kernel[j, r]
    return matrix, pi


def magnetization_law(params: ModelParams, N: int, cap: Optional[int] = None,
                      chain: Optional[ChainConfig] = None, threads: int = 1) -> MagnetizationLaw:
    """
    优先精确枚举；网格超过上限且给定链配置时改用MCMC

    Raises:
        GridTooLargeError: 超过上限且未启用MCMC
    """
    try:
        return exact_magnetization_law(params, N, cap=cap, threads=threads)
    except GridTooLargeError:
        if chain is None:
            raise
        logger.warning("N=%d超过枚举上限，改用MCMC", N)
        return mcmc_magnetization_law(params, N, chain, threads=threads)
