"""
异常定义

所有异常都继承自 FisheyeError(ValueError)，调用方按 ValueError 捕获同样有效。
命令行层把 ConfigError 映射为退出码 1，其余 FisheyeError 映射为退出码 2。
"""


class FisheyeError(ValueError):
    """本包所有错误的基类"""


class ConfigError(FisheyeError):
    """配置参数不合法"""


class ProjectionDomainError(FisheyeError):
    """入射角超出投影模型的定义域"""


class RadiusRangeError(FisheyeError):
    """半径超出 [0, r_max] 范围"""


class SingularProjectionError(FisheyeError):
    """θ = π/2 处 tan 的极点"""


class UltraWideError(FisheyeError):
    """需要超广角补偿但模型没有 r_180"""


class CalibrationParseError(FisheyeError):
    """标定查找表无法解析"""


class CalibrationMonotonicityError(FisheyeError):
    """标定查找表的半径列不是严格递增的"""


class FrameIOError(FisheyeError):
    """图像读写失败或位深不受支持"""


class InvalidFrameError(FisheyeError):
    """帧数据不满足约束（非二维、含非有限值或越界）"""


class DimensionMismatchError(FisheyeError):
    """两帧（或帧与几何参数）的尺寸不一致"""


class SourceCoverageError(FisheyeError):
    """合成序列时采样位置超出源图像"""


class ManifestError(FisheyeError):
    """批处理清单无效"""
