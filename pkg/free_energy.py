"""
自由能分析模块
负自由能H、对偶函数G、一维化后的f(s)=H(x_s)及其各阶导数，
极大值点搜索、参数点分类（正则/临界/特殊I/特殊II）、β_c、
约化二次型、Λ矩阵以及特殊点与临界点的数值定位
"""

import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import helmert
from scipy.optimize import brentq
from scipy.special import logsumexp, softmax, xlogy

from config import FreeEnergyConfig
from errors import (
    AmbiguousClassificationError, BracketError, DimensionError, DomainBoundaryError,
    RegimeMismatchError, ShapeError,
)
from model_core import ModelParams

logger = logging.getLogger(__name__)

# 同一极大值点的合并距离
MERGE_DISTANCE = 1e-3
# f''(0)不超过该值时s=0视为平坦的局部极大值
FLAT_CURVATURE = 1e-9


class PointKind(str, Enum):
    """参数点类型"""

    REGULAR = "Regular"
    CRITICAL = "Critical"
    SPECIAL_I = "SpecialI"
    SPECIAL_II = "SpecialII"


def neg_free_energy(t: Sequence[float], params: ModelParams) -> float:
    """
    负自由能 H(t) = βΣt_r^p + h t_1 - Σ t_r log t_r （0·log0 = 0）

    Args:
        t: 概率向量
        params: 模型参数

    Returns:
        H的值
    """
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (params.q,):
        raise DimensionError(f"t的长度必须为{params.q}")
    return float(params.beta * np.sum(t ** params.p) + params.h * t[0] - np.sum(xlogy(t, t)))


def _logits(x: np.ndarray, params: ModelParams) -> np.ndarray:
    logits = params.p * params.beta * x ** (params.p - 1)
    logits[..., 0] += params.h
    return logits


def dual_function(x: Sequence[float], params: ModelParams) -> float:
    """对偶函数 G(x) = β(p-1)Σx_r^p - log Σ exp(pβx_r^{p-1} + hδ_{r,1})"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.q,):
        raise DimensionError(f"x的长度必须为{params.q}")
    return float(params.beta * (params.p - 1) * np.sum(x ** params.p) - logsumexp(_logits(x, params)))


def k_function(x, params: ModelParams):
    """k(x) = βx^p - x log x"""
    x = np.asarray(x, dtype=np.float64)
    return params.beta * x ** params.p - xlogy(x, x)


def _falling_factorial(p: int, j: int) -> int:
    value = 1
    for i in range(j):
        value *= p - i
    return value


def k_derivative(x, params: ModelParams, order: int):
    """
    k的任意阶导数（闭式）

    k'(x) = βp x^{p-1} - log x - 1；
    j≥2时 k^{(j)}(x) = β p(p-1)…(p-j+1) x^{p-j} + (-1)^{j-1}(j-2)!/x^{j-1}

    Args:
        x: 正实数或数组
        params: 模型参数
        order: 导数阶数

    Returns:
        导数值
    """
    x = np.asarray(x, dtype=np.float64)
    if order == 0:
        return k_function(x, params)
    if np.any(x <= 0):
        raise DomainBoundaryError("k的导数要求x>0")
    if order == 1:
        return params.beta * params.p * x ** (params.p - 1) - np.log(x) - 1.0
    power = _falling_factorial(params.p, order)
    polynomial = params.beta * power * x ** (params.p - order) if power else 0.0
    return polynomial + (-1) ** (order - 1) * math.factorial(order - 2) / x ** (order - 1)


def x_profile(s: float, q: int) -> np.ndarray:
    """x_s = ((1+(q-1)s)/q, (1-s)/q, …, (1-s)/q)，s∈[0,1)"""
    if not 0.0 <= s < 1.0:
        raise DomainBoundaryError(f"s必须在[0,1)内，当前为 {s}")
    return _profile(s, q)


def _profile(s: float, q: int) -> np.ndarray:
    x = np.full(q, (1.0 - s) / q)
    x[0] = (1.0 + (q - 1) * s) / q
    return x


def _first_derivative(s, params: ModelParams):
    # m1 - mq = s，因式分解后减少相消误差
    p, q = params.p, params.q
    s = np.asarray(s, dtype=np.float64)
    m1 = (1.0 + (q - 1) * s) / q
    mq = (1.0 - s) / q
    power_sum = sum(m1 ** i * mq ** (p - 2 - i) for i in range(p - 1))
    bracket = (params.beta * p * s * power_sum - np.log1p((q - 1) * s) + np.log1p(-s) + params.h)
    return (q - 1) / q * bracket


def _derivative(s, params: ModelParams, order: int):
    # 不检查定义域，供求根器在s<0附近使用
    q = params.q
    s = np.asarray(s, dtype=np.float64)
    m1 = (1.0 + (q - 1) * s) / q
    mq = (1.0 - s) / q
    if order == 0:
        return k_function(m1, params) + (q - 1) * k_function(mq, params) + params.h * m1
    if order == 1:
        return _first_derivative(s, params)
    return (((q - 1) / q) ** order * k_derivative(m1, params, order)
            + (q - 1) * (-1.0 / q) ** order * k_derivative(mq, params, order))


def f_derivatives(s, params: ModelParams, order: int):
    """
    f(s) = H(x_s) 的第order阶导数（0到6阶，链式法则解析计算）

    Args:
        s: [0,1)内的实数或数组
        params: 模型参数
        order: 0..6

    Returns:
        导数值
    """
    if order not in range(7):
        raise DimensionError(f"导数阶数必须在0到6之间，当前为 {order}")
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < 0) or np.any(s_arr >= 1):
        raise DomainBoundaryError("s必须在[0,1)内，s→1时x_s有零坐标")
    value = _derivative(s_arr, params, order)
    return float(value) if np.ndim(value) == 0 else value


@dataclass(frozen=True, eq=False)
class StationaryProfile:
    """f的驻点s及其处的函数值与导数"""

    s: float
    x: np.ndarray
    f_value: float
    f2: float
    f4: float
    f6: float

    @classmethod
    def at(cls, s: float, params: ModelParams) -> "StationaryProfile":
        return cls(
            s=float(s),
            x=x_profile(s, params.q),
            f_value=float(_derivative(s, params, 0)),
            f2=float(_derivative(s, params, 2)),
            f4=float(_derivative(s, params, 4)),
            f6=float(_derivative(s, params, 6)),
        )


@dataclass(frozen=True, eq=False)
class MaximizerSet:
    """
    H的全部全局极大值点

    profiles为f的全局极大值点；expanded为作用置换后的H的极大值点，
    profile_index[i]指出expanded[i]来自哪个profile；
    boundary表示扫描最大值落在网格右端
    """

    params: ModelParams
    profiles: List[StationaryProfile]
    expanded: List[np.ndarray]
    profile_index: List[int]
    boundary: bool = False

    @property
    def count(self) -> int:
        return len(self.expanded)

    @property
    def max_value(self) -> float:
        return max(p.f_value for p in self.profiles)

    def min_pairwise_distance(self) -> float:
        """极大值点之间的最小欧氏距离，只有一个时为inf"""
        points = np.array(self.expanded)
        if len(points) < 2:
            return math.inf
        diff = points[:, None, :] - points[None, :, :]
        dist = np.linalg.norm(diff, axis=-1)
        return float(dist[np.triu_indices(len(points), k=1)].min())


def _local_maxima(params: ModelParams, grid_points: int, tol: float) -> Tuple[List[float], bool]:
    grid = np.linspace(0.0, 1.0, grid_points, endpoint=False)
    slope = _first_derivative(grid, params)
    candidates: List[float] = []
    start = 0
    if params.h == 0:
        # h=0时f'(0)=0，s=0不是局部极小值时作为候选
        start = 1
        if _derivative(0.0, params, 2) <= FLAT_CURVATURE or slope[1] <= 0:
            candidates.append(0.0)
    crossings = np.flatnonzero((slope[:-1] > 0) & (slope[1:] <= 0))
    for i in crossings[crossings >= start]:
        if slope[i + 1] == 0:
            candidates.append(float(grid[i + 1]))
        else:
            root = brentq(_first_derivative, grid[i], grid[i + 1], args=(params,),
                          xtol=FreeEnergyConfig.POLISH_TOL)
            candidates.append(float(root))
    boundary = bool(slope[-1] > 0)
    if boundary:
        # s→1时f'→-∞，极大值点在网格右端与1之间
        upper = float(np.nextafter(1.0, 0.0))
        if _first_derivative(upper, params) > 0:
            logger.warning("f'在s=1-ε处仍为正，极大值点被截断在 s=%r", upper)
            candidates.append(upper)
        else:
            root = brentq(_first_derivative, grid[-1], upper, args=(params,),
                          xtol=FreeEnergyConfig.POLISH_TOL * (1.0 - grid[-1]))
            logger.info("极大值点越过扫描网格右端，精修到 s=%.15g", root)
            candidates.append(float(root))
    if not candidates:
        candidates.append(float(grid[int(np.argmax(_derivative(grid, params, 0)))]))

    # 合并数值噪声产生的相邻驻点
    merged: List[float] = []
    for s in sorted(candidates):
        if merged and s - merged[-1] < MERGE_DISTANCE and abs(
                _derivative(s, params, 0) - _derivative(merged[-1], params, 0)) <= tol:
            continue
        merged.append(s)
    return merged, boundary


def find_maximizers(params: ModelParams, tol: float = FreeEnergyConfig.VALUE_TOL,
                    grid_points: int = FreeEnergyConfig.GRID_POINTS) -> MaximizerSet:
    """
    通过一维化求H的全部全局极大值点

    在s∈[0,1)上用f'的变号扫描，再用brentq精修；f值与最大值相差不超过tol的
    都视为全局极大值点。h=0且s>0时展开成q个轮换，否则不展开

    Args:
        params: 模型参数
        tol: 判定并列最大值的容差
        grid_points: 扫描网格点数

    Returns:
        极大值点集合
    """
    if tol <= 0:
        raise DimensionError("tol必须为正")
    candidates, boundary = _local_maxima(params, grid_points, tol)
    values = [float(_derivative(s, params, 0)) for s in candidates]
    best = max(values)
    profiles = [StationaryProfile.at(s, params) for s, v in zip(candidates, values) if v >= best - tol]

    expanded: List[np.ndarray] = []
    index: List[int] = []
    for i, profile in enumerate(profiles):
        if params.h == 0 and profile.s > 0:
            for r in range(params.q):
                expanded.append(np.roll(profile.x, r))
                index.append(i)
        else:
            expanded.append(profile.x)
            index.append(i)
    logger.debug("参数 %s 的全局极大值点: s=%s", params, [p.s for p in profiles])
    return MaximizerSet(params=params, profiles=profiles, expanded=expanded,
                        profile_index=index, boundary=boundary)


@dataclass(frozen=True, eq=False)
class ReducedForm:
    """Q_{v,β}在H_q上的约化：basis为q×(q-1)正交基，matrix = BᵀDB"""

    basis: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def smallest_magnitude(self) -> Tuple[float, np.ndarray]:
        """绝对值最小的特征值及其在ℝ^q中的特征向量"""
        i = int(np.argmin(np.abs(self.eigenvalues)))
        return float(self.eigenvalues[i]), self.basis @ self.eigenvectors[:, i]


def hq_basis(q: int) -> np.ndarray:
    """H_q的固定Helmert正交基，q×(q-1)"""
    return helmert(q).T


def reduced_quadratic_form(v: Sequence[float], params: ModelParams) -> ReducedForm:
    """
    二次型 Q_{v,β}(t) = Σ(βp(p-1)v_r^{p-2} - 1/v_r)t_r² 在H_q上的约化矩阵

    Raises:
        DomainBoundaryError: v有零坐标
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.q,):
        raise DimensionError(f"v的长度必须为{params.q}")
    if np.any(v <= 0):
        raise DomainBoundaryError("v的所有坐标必须为正")
    coupling = params.beta * params.p * (params.p - 1)
    diagonal = coupling * v ** (params.p - 2) - 1.0 / v
    basis = hq_basis(params.q)
    matrix = basis.T @ (diagonal[:, None] * basis)
    matrix = 0.5 * (matrix + matrix.T)
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    return ReducedForm(basis=basis, matrix=matrix, eigenvalues=eigenvalues, eigenvectors=eigenvectors)


@dataclass(frozen=True)
class Diagnostics:
    """分类诊断量：约化Hessian的最小/最大特征值以及f2、f4、f6"""

    min_eigenvalue: float
    max_eigenvalue: float
    f2: float
    f4: float
    f6: float


@dataclass(frozen=True, eq=False)
class ClassifiedPoint:
    """参数点分类结果"""

    kind: PointKind
    params: ModelParams
    maximizers: MaximizerSet
    diagnostics: Diagnostics

    @property
    def verdict(self) -> str:
        return self.kind.value


def classify(params: ModelParams, tol_zero: float = FreeEnergyConfig.TOL_ZERO) -> ClassifiedPoint:
    """
    对参数点(β,h)分类

    Args:
        params: 模型参数
        tol_zero: 特征值和f导数的数值零阈值

    Returns:
        分类结果

    Raises:
        AmbiguousClassificationError: 特征值或f4落在阈值附近，判定相互矛盾
    """
    if tol_zero <= 0:
        raise DimensionError("tol_zero必须为正")
    maximizers = find_maximizers(params)
    forms = [reduced_quadratic_form(x, params) for x in maximizers.expanded]
    top = [float(form.eigenvalues.max()) for form in forms]
    # 诊断量取最接近奇异的极大值点
    worst = int(np.argmax(top))
    profile = maximizers.profiles[maximizers.profile_index[worst]]
    diagnostics = Diagnostics(
        min_eigenvalue=float(forms[worst].eigenvalues.min()),
        max_eigenvalue=top[worst],
        f2=profile.f2, f4=profile.f4, f6=profile.f6,
    )

    def result(kind: PointKind) -> ClassifiedPoint:
        return ClassifiedPoint(kind=kind, params=params, maximizers=maximizers, diagnostics=diagnostics)

    if maximizers.count > 1:
        if all(e < -tol_zero for e in top):
            return result(PointKind.CRITICAL)
        raise AmbiguousClassificationError(
            f"存在{maximizers.count}个极大值点，但最大特征值{max(top):.3e}不是负定的")

    eigen = top[0]
    if eigen < -tol_zero:
        return result(PointKind.REGULAR)
    if abs(eigen) > tol_zero:
        raise AmbiguousClassificationError(f"唯一极大值点处约化二次型有正特征值 {eigen:.3e}")
    if profile.f4 < -tol_zero:
        return result(PointKind.SPECIAL_I)
    if abs(profile.f4) <= tol_zero:
        if (params.p, params.q) != (4, 2):
            raise AmbiguousClassificationError(
                f"f4≈0只可能出现在(p,q)=(4,2)，当前为({params.p},{params.q})")
        return result(PointKind.SPECIAL_II)
    raise AmbiguousClassificationError(f"奇异极大值点处f4={profile.f4:.3e}>0")


def beta_c(p: int, q: int, tol: float = FreeEnergyConfig.BETA_C_TOL,
           bracket: Tuple[float, float] = FreeEnergyConfig.BETA_C_BRACKET,
           grid_points: int = FreeEnergyConfig.GRID_POINTS) -> float:
    """
    h=0时的相变阈值β_c：低于它唯一极大值点为s=0，高于它存在s>0的全局极大值点

    Args:
        p, q: 模型阶数和颜色数
        tol: 二分容差
        bracket: 初始区间(lo, hi)
        grid_points: 扫描网格点数

    Returns:
        β_c

    Raises:
        BracketError: 初始区间两端没有跨越相变
    """
    def ordered(beta: float) -> bool:
        found = find_maximizers(ModelParams(p, q, beta, 0.0), grid_points=grid_points)
        return any(profile.s > 0 for profile in found.profiles)

    lo, hi = bracket
    if lo >= hi or ordered(lo) or not ordered(hi):
        raise BracketError(f"区间[{lo}, {hi}]没有跨越相变")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ordered(mid):
            hi = mid
        else:
            lo = mid
    logger.info("β_c(p=%d, q=%d) ≈ %.12f", p, q, 0.5 * (lo + hi))
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class LambdaMatrix:
    """Λ矩阵的分块元素及完整矩阵"""

    a: float
    b: float
    b_prime: float
    c: float
    d: float
    full: np.ndarray

    @property
    def q(self) -> int:
        return int(self.full.shape[0])

    def determinant_closed_form(self) -> float:
        """det(Λ) = (d-c)^{q-2}[a((q-2)c+d) - (q-1)bb']"""
        q = self.q
        return (self.d - self.c) ** (q - 2) * (
            self.a * ((q - 2) * self.c + self.d) - (q - 1) * self.b * self.b_prime)

    def determinant(self) -> float:
        return float(np.linalg.det(self.full))

    def null_residual(self) -> float:
        """‖Λu‖∞，u = (1-q, 1, …, 1)"""
        return float(np.max(np.abs(self.full @ direction_u(self.q))))


def direction_u(q: int) -> np.ndarray:
    """u = (1-q, 1, …, 1)"""
    u = np.ones(q)
    u[0] = 1.0 - q
    return u


def _profile_pair(m: Sequence[float], q: int) -> Tuple[float, float]:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (q,):
        raise DimensionError(f"m的长度必须为{q}")
    if np.max(np.abs(m[1:] - m[1])) > 1e-12:
        raise ShapeError("m不是x_s形式（第2到q个坐标必须相等）")
    return float(m[0]), float(m[1])


def lambda_matrix(m: Sequence[float], params: ModelParams) -> LambdaMatrix:
    """
    x_s形式的m处的Λ矩阵（闭式分块元素）

    Raises:
        ShapeError: m不是x_s形式
    """
    q, p = params.q, params.p
    m1, mq = _profile_pair(m, q)
    B = params.beta * p * (p - 1)
    a = B - B**2 * (q - 1) * m1 ** (p - 1) * mq
    b = B**2 * m1 * mq ** (p - 1)
    b_prime = B**2 * m1 ** (p - 1) * mq
    c = B**2 * mq**p
    d = B - B**2 * mq ** (p - 1) * (1.0 - mq)

    full = np.empty((q, q))
    full[0, 0] = a
    full[0, 1:] = b
    full[1:, 0] = b_prime
    full[1:, 1:] = (d - c) * np.eye(q - 1) + c
    return LambdaMatrix(a=a, b=b, b_prime=b_prime, c=c, d=d, full=full)


def lambda_f2_identity(m: Sequence[float], params: ModelParams) -> Tuple[float, float]:
    """
    (1-q)a + (q-1)b 与 βp(p-1)q²m_1m_q f''(s) 两侧的值

    Returns:
        (左侧, 右侧)
    """
    q, p = params.q, params.p
    m1, mq = _profile_pair(m, q)
    lam = lambda_matrix(m, params)
    s = m1 - mq
    B = params.beta * p * (p - 1)
    left = (1 - q) * lam.a + (q - 1) * lam.b
    right = B * q**2 * m1 * mq * float(_derivative(s, params, 2))
    return left, right


def _check_positive(x: Sequence[float], q: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (q,):
        raise DimensionError(f"x的长度必须为{q}")
    if np.any(x <= 0):
        raise DomainBoundaryError("x的所有坐标必须为正")
    return x


def grad_G(x: Sequence[float], params: ModelParams) -> np.ndarray:
    """∇G，第r个分量为 βp(p-1)x_r^{p-2}(x_r - π_r)，π为softmax权重"""
    x = _check_positive(x, params.q)
    B = params.beta * params.p * (params.p - 1)
    weights = softmax(_logits(x, params))
    return B * x ** (params.p - 2) * (x - weights)


def hessian_G(x: Sequence[float], params: ModelParams) -> np.ndarray:
    """G的Hessian矩阵（解析）"""
    x = _check_positive(x, params.q)
    p = params.p
    B = params.beta * p * (p - 1)
    weights = softmax(_logits(x, params))
    diagonal = B * (p - 1) * x ** (p - 2) - B * (p - 2) * x ** (p - 3) * weights
    jacobian = B * weights[:, None] * (np.eye(params.q) - weights[None, :]) * x[None, :] ** (p - 2)
    hessian = np.diag(diagonal) - (B * x ** (p - 2))[:, None] * jacobian
    return 0.5 * (hessian + hessian.T)


def lambda_jacobian(m: Sequence[float], params: ModelParams) -> np.ndarray:
    """x ↦ (x_r^{2-p}∇_r G(x))_r 在m处的Jacobian，在极大值点处等于Λ"""
    x = _check_positive(m, params.q)
    p = params.p
    B = params.beta * p * (p - 1)
    weights = softmax(_logits(x, params))
    return B * (np.eye(params.q) - B * weights[:, None] * (np.eye(params.q) - weights[None, :])
                * x[None, :] ** (p - 2))


@dataclass(frozen=True, eq=False)
class CubicFit:
    """t ↦ ∇₁G(m + t u) 的多项式拟合系数（低次在前）"""

    coefficients: np.ndarray
    t_grid: np.ndarray
    f4: float

    @property
    def linear(self) -> float:
        return float(self.coefficients[1])

    @property
    def quadratic(self) -> float:
        return float(self.coefficients[2])

    @property
    def cubic(self) -> float:
        return float(self.coefficients[3])


def default_t_grid(points: int = 20) -> np.ndarray:
    """±[1e-3, 1e-2]上的对称网格"""
    half = np.linspace(1e-3, 1e-2, points)
    return np.concatenate([-half[::-1], half])


def gradient_polynomial_fit(m: Sequence[float], params: ModelParams,
                            t_grid: Optional[np.ndarray] = None, degree: int = 5) -> CubicFit:
    """
    沿u方向对∇₁G(m + t u)做最小二乘多项式拟合

    Args:
        m: 展开点
        params: 模型参数
        t_grid: 拟合网格，默认default_t_grid()
        degree: 多项式次数，至少为3

    Returns:
        拟合结果；f4取m对应的s处的值
    """
    t_grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    u = direction_u(params.q)
    values = np.array([grad_G(m + t * u, params)[0] for t in t_grid])
    # polyfit返回高次在前
    coefficients = np.polyfit(t_grid, values, max(degree, 3))[::-1]
    m1, mq = m[0], m[1]
    f4 = float(_derivative(m1 - mq, params, 4))
    return CubicFit(coefficients=coefficients, t_grid=t_grid, f4=f4)


def cubic_coefficient_check(params: ModelParams, t_grid: Optional[np.ndarray] = None,
                            tol_zero: float = FreeEnergyConfig.TOL_ZERO) -> CubicFit:
    """
    特殊I点处 t ↦ ∇₁G(m_* + t u) 的三次系数

    m_* + t u 沿x_s曲线（s ↦ s - qt），一次、二次系数为0，
    三次系数 = βp(p-1) m_1^{p-1}(1-m_1) q⁴/(6(q-1)) · f''''(s)

    Raises:
        RegimeMismatchError: 参数点不是特殊I点
    """
    point = classify(params, tol_zero)
    if point.kind is not PointKind.SPECIAL_I:
        raise RegimeMismatchError(f"三次系数检查要求特殊I点，当前为 {point.verdict}")
    s = _refine_on_third(point.maximizers.profiles[0].s, params)
    return gradient_polynomial_fit(_profile(s, params.q), params, t_grid)


def _refine_on_third(s: float, params: ModelParams, width: float = 1e-3) -> float:
    # f在特殊点附近是四次平坦的，f'求根只精确到1e-5左右；f'''在该点有单根
    third = float(_derivative(s, params, 3))
    if third == 0.0:
        return s
    lo, hi = s - width, min(s + width, 1.0 - width)
    f_lo, f_hi = float(_derivative(lo, params, 3)), float(_derivative(hi, params, 3))
    if f_lo * f_hi > 0:
        return s
    root = brentq(lambda v: float(_derivative(v, params, 3)), lo, hi, xtol=1e-15)
    return max(float(root), 0.0)


@dataclass(frozen=True)
class SpecialPoint:
    """数值定位的特殊点"""

    params: ModelParams
    s: float


def _special_beta(s: float, p: int, q: int) -> float:
    # f'' 关于β是线性的：f'' = β·A(s) - C(s)
    m1 = (1.0 + (q - 1) * s) / q
    mq = (1.0 - s) / q
    w1 = ((q - 1) / q) ** 2
    wq = (q - 1) / q**2
    slope = p * (p - 1) * (w1 * m1 ** (p - 2) + wq * mq ** (p - 2))
    return (w1 / m1 + wq / mq) / slope


def _special_field(s: float, beta: float, p: int, q: int) -> float:
    # 由 f'(s) = 0 解出h
    params = ModelParams(p, q, beta, 0.0)
    m1 = (1.0 + (q - 1) * s) / q
    mq = (1.0 - s) / q
    return float(k_derivative(mq, params, 1) - k_derivative(m1, params, 1))


def _third_on_curve(s: float, p: int, q: int) -> float:
    return float(_derivative(s, ModelParams(p, q, _special_beta(s, p, q), 0.0), 3))


def locate_special_point(p: int, q: int, guess: Optional[float] = None,
                         grid_points: int = 2000) -> SpecialPoint:
    """
    数值定位特殊点：f' = f'' = f''' = 0 且s为唯一全局极大值点

    f''=0 关于β线性，f'=0 关于h线性，因此只需在s上对f'''求根

    Args:
        p, q: 模型阶数和颜色数
        guess: 期望的s，存在多个根时取最近的一个
        grid_points: s的扫描点数

    Returns:
        特殊点

    Raises:
        BracketError: 在h≥0的区域内找不到特殊点
    """
    grid = np.linspace(0.0, 1.0, grid_points, endpoint=False)[1:]
    third = np.array([_third_on_curve(s, p, q) for s in grid])
    roots: List[float] = []
    if q == 2:
        # q=2时f关于s对称，s=0处f'''恒为0
        roots.append(0.0)
    for i in range(len(grid) - 1):
        if third[i] == 0.0:
            roots.append(float(grid[i]))
        elif third[i] * third[i + 1] < 0:
            roots.append(float(brentq(_third_on_curve, grid[i], grid[i + 1], args=(p, q),
                                      xtol=FreeEnergyConfig.POLISH_TOL)))
    if guess is not None:
        roots.sort(key=lambda s: abs(s - guess))

    for s in roots:
        beta = _special_beta(s, p, q)
        h = _special_field(s, beta, p, q)
        if h < 0:
            if h < -1e-12:
                continue
            h = 0.0
        params = ModelParams(p, q, beta, h)
        found = find_maximizers(params)
        if found.count == 1 and abs(found.profiles[0].s - s) < MERGE_DISTANCE:
            logger.info("特殊点(p=%d, q=%d): β=%.12f, h=%.12f, s=%.12f", p, q, beta, h, s)
            return SpecialPoint(params=params, s=s)
    raise BracketError(f"(p={p}, q={q})在h≥0区域内没有找到特殊点")


def local_maxima_values(params: ModelParams,
                        grid_points: int = FreeEnergyConfig.GRID_POINTS) -> List[Tuple[float, float]]:
    """f的全部局部极大值点及其函数值 [(s, f(s)), …]"""
    candidates, _ = _local_maxima(params, grid_points, FreeEnergyConfig.VALUE_TOL)
    return [(s, float(_derivative(s, params, 0))) for s in candidates]


def locate_critical_point(p: int, q: int, h: float, beta_bracket: Tuple[float, float],
                          scan_points: int = 200) -> ModelParams:
    """
    在给定h下定位两个局部极大值取相同f值的β（临界点）

    Args:
        p, q: 模型阶数和颜色数
        h: 外场
        beta_bracket: β的搜索区间
        scan_points: 区间内的扫描点数

    Returns:
        临界点参数

    Raises:
        BracketError: 区间内两个局部极大值的差没有变号
    """
    def gap(beta: float) -> float:
        peaks = local_maxima_values(ModelParams(p, q, beta, h))
        if len(peaks) < 2:
            return math.nan
        return peaks[-1][1] - peaks[0][1]

    betas = np.linspace(beta_bracket[0], beta_bracket[1], scan_points)
    gaps = np.array([gap(b) for b in betas])
    for i in range(scan_points - 1):
        g0, g1 = gaps[i], gaps[i + 1]
        if np.isfinite(g0) and np.isfinite(g1) and g0 * g1 <= 0:
            if g0 == 0:
                root = betas[i]
            else:
                root = brentq(gap, betas[i], betas[i + 1], xtol=FreeEnergyConfig.BETA_C_TOL)
            logger.info("临界点(p=%d, q=%d, h=%.6g): β=%.12f", p, q, h, root)
            return ModelParams(p, q, float(root), h)
    raise BracketError(f"区间{beta_bracket}内没有找到h={h}的临界点")
