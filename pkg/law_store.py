"""
结果存储模块
磁化向量分布、分类结果、Λ矩阵、速率报告和MPL模拟结果的JSON/CSV文档结构，
以及按(p, q, β, h, N)哈希缓存精确分布的本地目录
"""

import os
import json
import math
import hashlib
import logging
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from config import CACHE_ENV_VAR, FLOAT_FORMAT
from errors import ConfigError
from model_core import MagnetizationLaw, ModelParams, exact_magnetization_law

logger = logging.getLogger(__name__)

# 分布文档的字段说明
LAW_DOCUMENT_FIELDS = {
    # 模型参数 {p, q, beta, h}
    "params": "object",
    # 格点数
    "N": "integer",
    # 原子的颜色计数，每行q个整数，按余字典序排列
    "counts": "integer[][]",
    # 原子的对数概率
    "log_probs": "double[]",
    # log(q^N Z_N)，经验分布为NaN
    "log_z": "double",
    # 是否为MCMC经验分布
    "empirical": "boolean",
}

# 分布CSV的概率列名
LOG_PROB_COLUMN = "log_prob"


def _floats(values) -> List[float]:
    return [float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]


def create_params_document(params: ModelParams) -> Dict[str, Any]:
    return params.to_dict()


def create_law_document(law: MagnetizationLaw) -> Dict[str, Any]:
    """
    创建分布文档

    Args:
        law: 磁化向量分布

    Returns:
        可直接json.dump的字典（浮点以最短往返表示保存，读回后比特一致）
    """
    return {
        "params": create_params_document(law.params),
        "N": law.N,
        "counts": law.counts.tolist(),
        "log_probs": _floats(law.log_probs),
        "log_z": float(law.log_z),
        "empirical": bool(law.empirical),
    }


def law_from_document(doc: Dict[str, Any]) -> MagnetizationLaw:
    """由分布文档重建分布"""
    missing = [key for key in LAW_DOCUMENT_FIELDS if key not in doc]
    if missing:
        raise ConfigError(f"分布文档缺少字段: {missing}")
    params = ModelParams(**doc["params"])
    return MagnetizationLaw(
        params=params,
        N=int(doc["N"]),
        counts=np.array(doc["counts"], dtype=np.int64).reshape(-1, params.q),
        log_probs=np.array(doc["log_probs"], dtype=np.float64),
        log_z=float(doc["log_z"]),
        empirical=bool(doc["empirical"]),
    )


def law_to_frame(law: MagnetizationLaw) -> pd.DataFrame:
    """每行一个原子：n_1..n_q, log_prob"""
    frame = pd.DataFrame(law.counts, columns=[f"n_{r + 1}" for r in range(law.params.q)])
    frame[LOG_PROB_COLUMN] = law.log_probs
    return frame


def law_from_frame(frame: pd.DataFrame, params: ModelParams, log_z: float = math.nan,
                   empirical: bool = False) -> MagnetizationLaw:
    """由原子表重建分布，N取计数的行和"""
    columns = [f"n_{r + 1}" for r in range(params.q)]
    counts = frame[columns].to_numpy(dtype=np.int64)
    totals = np.unique(counts.sum(axis=1))
    if totals.size != 1:
        raise ConfigError("原子表中各行的计数总和不一致")
    return MagnetizationLaw(params=params, N=int(totals[0]), counts=counts,
                            log_probs=frame[LOG_PROB_COLUMN].to_numpy(dtype=np.float64),
                            log_z=log_z, empirical=empirical)


def write_json(doc: Dict[str, Any], path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, indent=2, ensure_ascii=False)


def read_json(path: str) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_csv(frame: pd.DataFrame, path: str) -> None:
    """17位有效数字写出浮点列"""
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def create_maximizer_rows(maximizers) -> List[Dict[str, Any]]:
    """极大值点表：每个展开后的极大值点一行"""
    rows = []
    for x, i in zip(maximizers.expanded, maximizers.profile_index):
        profile = maximizers.profiles[i]
        rows.append({
            "s": profile.s,
            "x": _floats(x),
            "f": profile.f_value,
            "f2": profile.f2,
            "f4": profile.f4,
            "f6": profile.f6,
        })
    return rows


def create_classification_document(point) -> Dict[str, Any]:
    """
    创建分类结果文档

    Args:
        point: ClassifiedPoint

    Returns:
        包含分类、诊断量和极大值点表的字典
    """
    diagnostics = point.diagnostics
    return {
        "params": create_params_document(point.params),
        "kind": point.verdict,
        "diagnostics": {
            "min_eigenvalue": diagnostics.min_eigenvalue,
            "max_eigenvalue": diagnostics.max_eigenvalue,
            "f2": diagnostics.f2,
            "f4": diagnostics.f4,
            "f6": diagnostics.f6,
        },
        "boundary": point.maximizers.boundary,
        "maximizers": create_maximizer_rows(point.maximizers),
    }


def create_lambda_document(lam, m, params: ModelParams,
                           identity: Optional[tuple] = None) -> Dict[str, Any]:
    """Λ矩阵文档"""
    doc = {
        "params": create_params_document(params),
        "m": _floats(m),
        "a": lam.a,
        "b": lam.b,
        "b_prime": lam.b_prime,
        "c": lam.c,
        "d": lam.d,
        "full": lam.full.tolist(),
        "determinant": lam.determinant(),
        "determinant_closed_form": lam.determinant_closed_form(),
        "null_residual": lam.null_residual(),
    }
    if identity is not None:
        doc["f2_identity"] = {"left": identity[0], "right": identity[1]}
    return doc


def create_rate_report_document(report) -> Dict[str, Any]:
    """速率报告的JSON摘要"""
    doc = {
        "params": create_params_document(report.params),
        "regime": report.regime.value,
        "Ns": list(report.Ns),
        "distances": _floats(report.distances),
        "fitted_slope": report.fitted_slope,
        "fitted_slope_log": report.fitted_slope_log,
    }
    if report.auxiliary is not None:
        doc["auxiliary"] = _floats(report.auxiliary)
    if report.scale_moments is not None:
        doc["scale_moments"] = _floats(report.scale_moments)
    if report.eps is not None:
        doc["eps"] = report.eps
    return doc


def create_mpl_summary_document(simulation, mixture, distance: float) -> Dict[str, Any]:
    """MPL模拟的JSON摘要"""
    return {
        "params": create_params_document(simulation.params),
        "N": simulation.N,
        "replicates": int(simulation.beta_hats.size + simulation.excluded),
        "excluded": simulation.excluded,
        "median": simulation.median() if simulation.errors.size else math.nan,
        "mixture_weights": _floats(mixture.weights),
        "mixture_variances": _floats(mixture.variances),
        "kolmogorov_distance": distance,
    }


def cache_key(params: ModelParams, N: int) -> str:
    """(p, q, β, h, N)的SHA-256哈希"""
    payload = json.dumps([params.p, params.q, repr(params.beta), repr(params.h), int(N)])
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def cache_dir() -> Optional[str]:
    path = os.environ.get(CACHE_ENV_VAR)
    return path or None


def cached_exact_law(params: ModelParams, N: int, cap: Optional[int] = None,
                     threads: int = 1) -> MagnetizationLaw:
    """
    带本地缓存的精确分布

    未设置POTTS_CACHE_DIR时直接计算；否则先查缓存，未命中时计算并写入
    """
    directory = cache_dir()
    if directory is None:
        return exact_magnetization_law(params, N, cap=cap, threads=threads)

    path = os.path.join(directory, f"{cache_key(params, N)}.json")
    if os.path.exists(path):
        try:
            law = law_from_document(read_json(path))
            logger.debug("缓存命中: %s", path)
            return law
        except (OSError, ValueError, KeyError) as e:
            logger.warning("缓存文件 %s 无法读取，重新计算: %s", path, e)

    law = exact_magnetization_law(params, N, cap=cap, threads=threads)
    os.makedirs(directory, exist_ok=True)
    write_json(create_law_document(law), path)
    logger.info("已写入缓存: %s", path)
    return law
