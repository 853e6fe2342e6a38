"""
全局配置参数文件
包含所有项目所需的配置参数，如枚举上限、数值阈值、随机种子、输出格式等
"""

import os
import json
import logging
from dataclasses import dataclass, field, asdict, fields
from typing import Any, Dict, List, Optional

from errors import ConfigError

#################################################
# 全局配置参数 - 可根据需要修改这些值
#################################################

# 精确枚举配置
ENUMERATION_CAP = 2 * 10**7  # 组合网格原子数上限，超过则报错（可改用MCMC）
BRUTE_FORCE_CAP = 10**7  # 暴力枚举q^N的上限
ENUMERATION_CHUNK = 2**18  # 并行枚举时每块的原子数

# 自由能分析配置
GRID_POINTS = 10**4  # s∈[0,1)上的扫描网格点数
POLISH_TOL = 1e-12  # 极大值点精修的求根容差
TOL_ZERO = 1e-7  # 分类时的数值零阈值（特征值、f的导数）
VALUE_TOL = 1e-10  # 判定多个全局极大值点时f值的容差
BETA_C_TOL = 1e-10  # β_c二分容差
BETA_C_BRACKET = (1e-3, 50.0)  # β_c初始区间

# 估计量配置
MPL_BRACKET = (1e-6, 50.0)  # MPL估计的求根区间
SCORE_TOL = 1e-10  # 根处得分函数的容差

# 收敛速率实验配置
RANDOM_DIRECTIONS = 32  # 半空间代理类中随机方向的数量
DIRECTION_SEED = 20240917  # 随机方向的固定种子
MIN_FIT_POINTS = 4  # 拟合速率所需的最少点数

# MCMC默认配置
DEFAULT_BURN_IN = 200  # 预烧扫描数
DEFAULT_THIN = 1  # 抽样间隔（扫描数）
DEFAULT_SAMPLES = 10**4  # 每条链的样本数
DEFAULT_REPLICATES = 4  # 独立链数

# 输出配置
FLOAT_DIGITS = 17  # 浮点输出的有效数字
FLOAT_FORMAT = f"%.{FLOAT_DIGITS}g"
CACHE_ENV_VAR = "POTTS_CACHE_DIR"  # 精确分布缓存目录的环境变量
LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"

#################################################
# 以下代码用于初始化和管理配置，通常不需要修改
#################################################

# 本地持久化配置文件
config_filename = '.cwpotts_config.json'

logger = logging.getLogger(__name__)


def setup_logging(level: str = "WARNING") -> None:
    """配置日志输出格式和级别"""
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise ConfigError(f"未知的日志级别: {level}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT)


# 精确枚举配置
class EnumerationConfig:
    CAP = ENUMERATION_CAP
    BRUTE_FORCE_CAP = BRUTE_FORCE_CAP
    CHUNK = ENUMERATION_CHUNK


# 自由能分析配置
class FreeEnergyConfig:
    GRID_POINTS = GRID_POINTS
    POLISH_TOL = POLISH_TOL
    TOL_ZERO = TOL_ZERO
    VALUE_TOL = VALUE_TOL
    BETA_C_TOL = BETA_C_TOL
    BETA_C_BRACKET = BETA_C_BRACKET


# 估计量配置
class EstimatorConfig:
    BRACKET = MPL_BRACKET
    SCORE_TOL = SCORE_TOL


# 收敛速率实验配置
class RatesConfig:
    RANDOM_DIRECTIONS = RANDOM_DIRECTIONS
    DIRECTION_SEED = DIRECTION_SEED
    MIN_FIT_POINTS = MIN_FIT_POINTS
    # 临界点条件球半径默认取极大值点最小间距的三分之一
    EPS_FRACTION = 1.0 / 3.0


# MCMC默认配置
class ChainDefaults:
    BURN_IN = DEFAULT_BURN_IN
    THIN = DEFAULT_THIN
    SAMPLES = DEFAULT_SAMPLES
    REPLICATES = DEFAULT_REPLICATES


def default_threads() -> int:
    """默认线程数：当前进程可用的物理核心数，读取不到拓扑时退回逻辑核心数"""
    try:
        cpus = sorted(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1
    cores = set()
    for cpu in cpus:
        topology = f"/sys/devices/system/cpu/cpu{cpu}/topology"
        try:
            with open(f"{topology}/physical_package_id", 'r') as f:
                package = f.read().strip()
            with open(f"{topology}/core_id", 'r') as f:
                core = f.read().strip()
        except OSError:
            return len(cpus) or 1
        cores.add((package, core))
    return len(cores) or 1


def load_persisted_config() -> Dict[str, Any]:
    """读取本地持久化的配置覆盖项"""
    try:
        with open(config_filename, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        # 如果配置文件不存在，则使用默认值
        return {}
    except json.JSONDecodeError as e:
        logger.warning("配置文件 %s 无法解析，忽略: %s", config_filename, e)
        return {}
    if not isinstance(data, dict):
        logger.warning("配置文件 %s 内容不是对象，忽略", config_filename)
        return {}
    return data


# 实验配置
@dataclass
class ExperimentConfig:
    """一次命令行实验的完整配置，先读配置文件再由命令行参数覆盖"""

    p: int = 2
    q: int = 2
    beta: float = 0.5
    h: float = 0.0
    N: Optional[int] = None
    Ns: List[int] = field(default_factory=list)
    eps: Optional[float] = None
    replicates: int = 1000
    seed: Optional[int] = None
    output: Optional[str] = None
    cap: int = ENUMERATION_CAP
    mcmc: bool = False
    threads: Optional[int] = None
    burn_in: int = DEFAULT_BURN_IN
    thin: int = DEFAULT_THIN
    samples: int = DEFAULT_SAMPLES
    chains: int = DEFAULT_REPLICATES
    tol_zero: float = TOL_ZERO
    regime: Optional[str] = None
    shape: Optional[int] = None
    scale_moment: Optional[float] = None
    x_min: float = -4.0
    x_max: float = 4.0
    points: int = 201
    beta_hi: float = BETA_C_BRACKET[1]
    dry_run: bool = False

    # 需要随机种子的命令
    STOCHASTIC_COMMANDS = ("mpl",)

    @classmethod
    def from_sources(cls, path: Optional[str] = None,
                     overrides: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        """
        组合持久化配置、JSON配置文件和命令行参数

        Args:
            path: JSON配置文件路径，可为None
            overrides: 命令行参数，值为None的项被忽略

        Returns:
            实验配置
        """
        known = {f.name for f in fields(cls)}
        values: Dict[str, Any] = {}
        for key, value in load_persisted_config().items():
            if key in known:
                values[key] = value

        if path:
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    file_values = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"无法读取配置文件 {path}: {e}") from e
            if not isinstance(file_values, dict):
                raise ConfigError(f"配置文件 {path} 必须是JSON对象")
            # 允许参数写在params子对象中
            params = file_values.pop("params", {}) or {}
            file_values.update(params)
            unknown = set(file_values) - known
            if unknown:
                raise ConfigError(f"配置文件包含未知字段: {sorted(unknown)}")
            values.update(file_values)

        for key, value in (overrides or {}).items():
            if value is not None and key in known:
                values[key] = value

        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(f"配置字段类型错误: {e}") from e

    def model_params(self):
        """构造模型参数，非法参数抛出ConfigError"""
        from model_core import ModelParams
        return ModelParams(p=self.p, q=self.q, beta=self.beta, h=self.h)

    def chain_config(self):
        """构造MCMC链配置"""
        from model_core import ChainConfig
        return ChainConfig(burn_in=self.burn_in, thin=self.thin, replicates=self.chains,
                           samples=self.samples, seed=self.seed if self.seed is not None else 0)

    def worker_count(self) -> int:
        """实际使用的线程数"""
        return self.threads if self.threads else default_threads()

    def validate(self, command: str) -> None:
        """
        在分发命令前校验配置

        Args:
            command: 子命令名称

        Raises:
            ConfigError: 配置不合法
        """
        self.model_params()
        if self.cap < 1:
            raise ConfigError("枚举上限必须为正")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("线程数必须为正")
        if self.tol_zero <= 0:
            raise ConfigError("数值零阈值必须为正")
        if command in ("exact-law", "mpl") and (self.N is None or self.N < 1):
            raise ConfigError(f"命令 {command} 需要正整数N")
        if command == "rates":
            if not self.Ns:
                raise ConfigError("命令 rates 需要非空的N网格")
            if any(n < 1 for n in self.Ns) or any(b <= a for a, b in zip(self.Ns, self.Ns[1:])):
                raise ConfigError("N网格必须为严格递增的正整数")
        if self.eps is not None and self.eps <= 0:
            raise ConfigError("eps必须为正")
        if command == "mpl" and self.replicates < 1:
            raise ConfigError("重复次数必须为正")
        if self.mcmc or command == "mpl":
            self.chain_config()
        stochastic = command in self.STOCHASTIC_COMMANDS or (
            self.mcmc and command in ("rates", "exact-law"))
        if stochastic and self.seed is None:
            raise ConfigError(f"随机命令 {command} 必须指定 --seed")
        if command == "limit-cdf":
            if self.shape not in (None, 4, 6):
                raise ConfigError("广义正态分布的形状参数只能是4或6")
            if self.shape is not None and (self.scale_moment is None or self.scale_moment <= 0):
                raise ConfigError("形状参数给定时必须提供正的scale_moment")
            if self.points < 2 or self.x_max <= self.x_min:
                raise ConfigError("CDF网格不合法")

    def to_dict(self) -> Dict[str, Any]:
        """返回配置的字典表示"""
        return asdict(self)


def get_config() -> Dict:
    """返回当前配置的字典表示"""
    return {
        "enumeration": {
            "cap": EnumerationConfig.CAP,
            "brute_force_cap": EnumerationConfig.BRUTE_FORCE_CAP,
            "chunk": EnumerationConfig.CHUNK,
        },
        "free_energy": {
            "grid_points": FreeEnergyConfig.GRID_POINTS,
            "polish_tol": FreeEnergyConfig.POLISH_TOL,
            "tol_zero": FreeEnergyConfig.TOL_ZERO,
            "value_tol": FreeEnergyConfig.VALUE_TOL,
            "beta_c_bracket": list(FreeEnergyConfig.BETA_C_BRACKET),
        },
        "estimator": {
            "bracket": list(EstimatorConfig.BRACKET),
            "score_tol": EstimatorConfig.SCORE_TOL,
        },
        "rates": {
            "random_directions": RatesConfig.RANDOM_DIRECTIONS,
            "direction_seed": RatesConfig.DIRECTION_SEED,
            "min_fit_points": RatesConfig.MIN_FIT_POINTS,
        },
        "chain": {
            "burn_in": ChainDefaults.BURN_IN,
            "thin": ChainDefaults.THIN,
            "samples": ChainDefaults.SAMPLES,
            "replicates": ChainDefaults.REPLICATES,
        },
        "output": {
            "float_digits": FLOAT_DIGITS,
            "cache_dir": os.environ.get(CACHE_ENV_VAR, ""),
        },
        "threads": default_threads(),
        "persisted": load_persisted_config(),
    }


def update_config(key: str, value: str) -> None:
    """更新配置文件中的特定键值（值按JSON解析，失败则按字符串保存）"""
    known = {f.name for f in fields(ExperimentConfig)}
    if key not in known:
        raise ConfigError(f"未知的配置键: {key}")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value

    data = load_persisted_config()
    data[key] = parsed
    with open(config_filename, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)


# 打印当前配置
def print_config():
    """打印当前配置"""
    config = get_config()
    print(json.dumps(config, indent=2, ensure_ascii=False))
