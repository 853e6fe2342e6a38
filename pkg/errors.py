"""
异常定义模块
所有库函数抛出的异常都继承自PottsError，每个异常带有命令行退出码：
0 成功，1 配置错误，2 数学上退化/无法计算，3 参数区域不匹配
"""


class PottsError(Exception):
    """所有异常的基类"""

    exit_code = 2


class ConfigError(PottsError, ValueError):
    """配置或参数不合法"""

    exit_code = 1


class MathDegenerateError(PottsError):
    """数学上退化或无法计算的情况"""

    exit_code = 2


class GridTooLargeError(MathDegenerateError):
    """组合网格超过枚举上限，应改用MCMC"""


class EmptyRestrictionError(MathDegenerateError):
    """条件限制后没有任何原子"""


class DomainBoundaryError(MathDegenerateError):
    """参数落在定义域边界上（例如某个坐标为0）"""


class AmbiguousClassificationError(MathDegenerateError):
    """特征值或四阶导数落在判定阈值附近，无法给出一致的分类"""


class BracketError(MathDegenerateError):
    """二分/求根区间两端没有变号"""


class DegenerateSampleError(MathDegenerateError):
    """样本退化（例如磁化向量为均匀向量），估计量无定义"""


class SingularDenominatorError(MathDegenerateError):
    """分母为零"""


class ShapeError(MathDegenerateError):
    """向量不具有要求的形状（例如不是x_s形式）"""


class OverlapError(MathDegenerateError):
    """条件球相互重叠"""


class DimensionError(MathDegenerateError):
    """维度不匹配"""


class RegimeMismatchError(PottsError):
    """参数点的分类与所请求的实验区域不一致"""

    exit_code = 3
