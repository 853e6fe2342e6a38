"""
张量Curie-Weiss Potts模型实验主程序
提供分类、极大值点、β_c、精确分布、收敛速率、MPL估计、Λ矩阵和极限CDF等子命令
退出码：0 成功，1 配置错误，2 数学退化，3 区域不匹配
"""

import sys
import json
import argparse
import logging
from typing import Any, Dict, List, Optional

import numpy as np

from config import ExperimentConfig, print_config, setup_logging, update_config
from errors import ConfigError, GridTooLargeError, PottsError
from estimator import mpl_mixture_law, simulate_mpl_distribution
from free_energy import (
    PointKind, beta_c, classify, find_maximizers, hq_basis, lambda_f2_identity,
    lambda_matrix, locate_special_point,
)
from law_store import (
    cached_exact_law, create_classification_document, create_lambda_document,
    create_law_document, create_maximizer_rows, create_mpl_summary_document,
    create_rate_report_document, law_to_frame, write_csv, write_json,
)
from limit_laws import (
    GaussianLimit, GenNormalLaw, MixtureLaw, asymptotic_covariance, cdf_table,
    gaussian_directional_cdf, mixture_weights,
)
from metrics_rates import berry_esseen_experiment
from model_core import mcmc_magnetization_law

logger = logging.getLogger(__name__)


def _print_json(doc: Dict[str, Any]) -> None:
    print(json.dumps(doc, indent=2, ensure_ascii=False))


def _law_provider(config: ExperimentConfig, threads: int = 1):
    params = config.model_params()
    chain = config.chain_config() if config.mcmc else None

    def provide(N: int):
        try:
            return cached_exact_law(params, N, cap=config.cap, threads=threads)
        except GridTooLargeError:
            if chain is None:
                raise
            logger.warning("N=%d超过枚举上限，改用MCMC", N)
            return mcmc_magnetization_law(params, N, chain, threads=threads)

    return provide


def cmd_classify(config: ExperimentConfig):
    """
    分类参数点并输出结论

    Args:
        config: 实验配置

    Returns:
        分类结果
    """
    point = classify(config.model_params(), config.tol_zero)
    print(f"分类: {point.verdict}")
    doc = create_classification_document(point)
    _print_json(doc)
    if config.output:
        write_json(doc, f"{config.output}.json")
    return point


def cmd_maximize(config: ExperimentConfig):
    """输出全局极大值点表"""
    params = config.model_params()
    maximizers = find_maximizers(params)
    rows = create_maximizer_rows(maximizers)
    print(f"共 {maximizers.count} 个全局极大值点")
    for i, row in enumerate(rows):
        coords = ", ".join(f"{v:.10f}" for v in row["x"])
        print(f"  [{i}] s={row['s']:.12f}  x=({coords})  f={row['f']:.12f}")
    if maximizers.boundary:
        print("警告: 最大值落在s网格右端")
    if config.output:
        write_json({"params": params.to_dict(), "maximizers": rows}, f"{config.output}.json")
    return maximizers


def cmd_beta_c(config: ExperimentConfig) -> float:
    """计算h=0时的相变阈值β_c"""
    value = beta_c(config.p, config.q, bracket=(1e-3, config.beta_hi))
    print(f"β_c(p={config.p}, q={config.q}) = {value!r}")
    if config.output:
        write_json({"p": config.p, "q": config.q, "beta_c": value}, f"{config.output}.json")
    return value


def cmd_exact_law(config: ExperimentConfig):
    """计算磁化向量分布（超过枚举上限且启用MCMC时改用采样）"""
    law = _law_provider(config, config.worker_count())(config.N)
    kind = "MCMC经验分布" if law.empirical else "精确分布"
    print(f"{kind}: N={law.N}, 原子数={law.size}, logZ={law.log_z!r}")
    if config.output:
        write_json(create_law_document(law), f"{config.output}.json")
        write_csv(law_to_frame(law), f"{config.output}.csv")
        print(f"已写入 {config.output}.json 和 {config.output}.csv")
    return law


def cmd_rates(config: ExperimentConfig):
    """Berry-Esseen速率实验，写出CSV和JSON"""
    params = config.model_params()
    threads = config.worker_count()
    report = berry_esseen_experiment(
        params, config.Ns, eps=config.eps, regime=config.regime, threads=threads,
        tol_zero=config.tol_zero, law_provider=_law_provider(config),
    )
    doc = create_rate_report_document(report)
    print(f"区域: {report.regime.value}")
    for N, d in zip(report.Ns, report.distances):
        print(f"  N={N:>6d}  距离={d:.6e}")
    print(f"斜率={report.fitted_slope:.4f}  对数修正斜率={report.fitted_slope_log:.4f}")
    if config.output:
        write_csv(report.to_frame(), f"{config.output}.csv")
        write_json(doc, f"{config.output}.json")
    return report


def cmd_mpl(config: ExperimentConfig):
    """模拟√N(β̂-β)的分布并与极限混合分布比较"""
    params = config.model_params()
    threads = config.worker_count()
    law = _law_provider(config, threads)(config.N)
    simulation = simulate_mpl_distribution(params, config.N, config.replicates, config.seed,
                                           threads=threads, law=law)
    mixture = mpl_mixture_law(params)
    distance = simulation.kolmogorov_to(mixture) if simulation.errors.size else float("nan")
    doc = create_mpl_summary_document(simulation, mixture, distance)
    print(f"有效重复={simulation.errors.size}, 剔除={simulation.excluded}, "
          f"中位数={doc['median']:.6f}, Kolmogorov距离={distance:.6e}")
    if config.output:
        write_csv(simulation.to_frame(), f"{config.output}.csv")
        write_json(doc, f"{config.output}.json")
    return simulation


def cmd_lambda(config: ExperimentConfig, special: bool = False):
    """Λ矩阵；special为True时先定位该(p, q)的特殊点"""
    if special:
        located = locate_special_point(config.p, config.q)
        params = located.params
        print(f"特殊点: β={params.beta!r}, h={params.h!r}, s={located.s!r}")
    else:
        params = config.model_params()
    m = find_maximizers(params).profiles[0].x
    lam = lambda_matrix(m, params)
    doc = create_lambda_document(lam, m, params, lambda_f2_identity(m, params))
    print(f"‖Λu‖∞ = {doc['null_residual']:.3e}")
    _print_json(doc)
    if config.output:
        write_json(doc, f"{config.output}.json")
    return lam


def _limit_cdf(config: ExperimentConfig):
    if config.shape is not None:
        return GenNormalLaw(config.shape, config.scale_moment).cdf
    params = config.model_params()
    point = classify(params, config.tol_zero)
    direction = hq_basis(params.q)[:, 0]
    if point.kind is PointKind.REGULAR:
        limit = GaussianLimit(asymptotic_covariance(point.maximizers.expanded[0], params))
        return lambda x: gaussian_directional_cdf(direction, limit, x)
    if point.kind is PointKind.CRITICAL:
        weights = mixture_weights(point.maximizers, params)
        variances = [GaussianLimit(asymptotic_covariance(m, params)).directional_variance(direction)
                     for m in point.maximizers.expanded]
        return MixtureLaw(weights=weights, variances=np.array(variances)).cdf
    raise ConfigError(f"{point.verdict}点需要指定 --shape 和 --scale-moment")


def cmd_limit_cdf(config: ExperimentConfig):
    """在网格上输出极限分布的CDF表"""
    grid = np.linspace(config.x_min, config.x_max, config.points)
    table = cdf_table(_limit_cdf(config), grid)
    if config.output:
        write_csv(table, f"{config.output}.csv")
        print(f"已写入 {config.output}.csv")
    else:
        print(table.to_csv(index=False, float_format="%.17g"), end="")
    return table


def build_parser() -> argparse.ArgumentParser:
    """构造命令行解析器"""
    parser = argparse.ArgumentParser(description="张量Curie-Weiss Potts模型数值实验")
    parser.add_argument("--log-level", default="WARNING", help="日志级别")

    # 所有实验子命令共享的参数
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON配置文件，命令行参数优先")
    common.add_argument("--p", type=int, help="相互作用阶数")
    common.add_argument("--q", type=int, help="颜色数")
    common.add_argument("--beta", type=float, help="逆温度")
    common.add_argument("--h", type=float, help="外场")
    common.add_argument("--seed", type=int, help="随机种子")
    common.add_argument("--output", help="输出文件前缀")
    common.add_argument("--threads", type=int, help="线程数，默认CPU核心数")
    common.add_argument("--tol-zero", type=float, help="分类的数值零阈值")
    common.add_argument("--dry-run", action="store_true", default=None, help="只校验配置")

    # MCMC参数
    chain = argparse.ArgumentParser(add_help=False)
    chain.add_argument("--cap", type=int, help="组合网格原子数上限")
    chain.add_argument("--mcmc", action="store_true", default=None, help="超过上限时改用MCMC")
    chain.add_argument("--burn-in", type=int, help="预烧扫描数")
    chain.add_argument("--thin", type=int, help="抽样间隔（扫描数）")
    chain.add_argument("--samples", type=int, help="每条链的样本数")
    chain.add_argument("--chains", type=int, help="独立链数")

    subparsers = parser.add_subparsers(dest="command", help="子命令")
    subparsers.add_parser("classify", parents=[common], help="参数点分类")
    subparsers.add_parser("maximize", parents=[common], help="全局极大值点")

    beta_parser = subparsers.add_parser("beta-c", parents=[common], help="计算β_c")
    beta_parser.add_argument("--beta-hi", type=float, help="二分区间上端")

    law_parser = subparsers.add_parser("exact-law", parents=[common, chain], help="磁化向量分布")
    law_parser.add_argument("--N", type=int, help="格点数")

    rates_parser = subparsers.add_parser("rates", parents=[common, chain], help="收敛速率实验")
    rates_parser.add_argument("--Ns", type=int, nargs="+", help="严格递增的N网格")
    rates_parser.add_argument("--eps", type=float, help="临界点条件球半径")
    rates_parser.add_argument("--regime", choices=[k.value for k in PointKind], help="期望的区域")

    mpl_parser = subparsers.add_parser("mpl", parents=[common, chain], help="MPL估计模拟")
    mpl_parser.add_argument("--N", type=int, help="格点数")
    mpl_parser.add_argument("--replicates", type=int, help="重复次数")

    lambda_parser = subparsers.add_parser("lambda", parents=[common], help="Λ矩阵")
    lambda_parser.add_argument("--special", action="store_true", help="先定位(p, q)的特殊点")

    cdf_parser = subparsers.add_parser("limit-cdf", parents=[common], help="极限分布CDF表")
    cdf_parser.add_argument("--shape", type=int, help="广义正态的形状参数（4或6）")
    cdf_parser.add_argument("--scale-moment", type=float, help="E|X|^shape")
    cdf_parser.add_argument("--x-min", type=float, help="网格左端")
    cdf_parser.add_argument("--x-max", type=float, help="网格右端")
    cdf_parser.add_argument("--points", type=int, help="网格点数")

    subparsers.add_parser("show-config", help="显示当前配置")
    update_parser = subparsers.add_parser("update-config", help="更新配置")
    update_parser.add_argument("key", help="配置键")
    update_parser.add_argument("value", help="配置值（JSON）")
    return parser


COMMANDS = {
    "classify": cmd_classify,
    "maximize": cmd_maximize,
    "beta-c": cmd_beta_c,
    "exact-law": cmd_exact_law,
    "rates": cmd_rates,
    "mpl": cmd_mpl,
    "limit-cdf": cmd_limit_cdf,
}


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        setup_logging(args.log_level)
        if args.command == "show-config":
            print_config()
            return 0
        if args.command == "update-config":
            update_config(args.key, args.value)
            print(f"已更新配置: {args.key} = {args.value}")
            return 0
        if args.command is None:
            parser.print_help()
            return 0

        overrides = {key: value for key, value in vars(args).items()
                     if key not in ("command", "config", "log_level", "special")}
        config = ExperimentConfig.from_sources(args.config, overrides)
        config.validate(args.command)
        if config.dry_run:
            print(f"配置有效: {args.command}")
            return 0
        if args.command == "lambda":
            cmd_lambda(config, special=args.special)
        else:
            COMMANDS[args.command](config)
        return 0
    except PottsError as e:
        print(f"错误: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
