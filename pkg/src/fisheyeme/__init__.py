"""
fisheyeme - 圆形鱼眼视频的投影感知运动估计工具包

提供以下功能：
- 鱼眼投影几何（等距、等立体角、正交、体视、针孔与标定查找表）
- 全搜索块匹配运动估计（TME / EME+ / CME+）与运动补偿
- 帧率上变换（REP / LA / MCF / MCLA，含鱼眼自适应混合估计）
- 圆形有效区内的 PSNR / SSIM
- 带真值的合成鱼眼序列
"""

from fisheyeme.core.blockmatch import (
    Method,
    Metric,
    MotionField,
    MotionVector,
    SearchConfig,
    compensate,
    estimate,
    estimate_hybrid,
    estimate_projected,
    estimate_tme,
    load_motion_field,
    save_motion_field,
)
from fisheyeme.core.calibration import CalibrationTable, load_calibration, save_calibration
from fisheyeme.core.frames import CircularMask, Frame, load_frame, make_mask, save_frame, upscale
from fisheyeme.core.fruc import Adapt, FrucConfig, FrucMode, interpolate, retime_cwm
from fisheyeme.core.geometry import CameraGeometry, ProjectionKind, ProjectionModel
from fisheyeme.core.metrics import MetricReport, evaluate, psnr, ssim
from fisheyeme.core.synth import SynthSpec, generate, make_texture
from fisheyeme.errors import FisheyeError

# 方便直接访问的API
__all__ = [
    "Adapt",
    "CalibrationTable",
    "CameraGeometry",
    "CircularMask",
    "FisheyeError",
    "Frame",
    "FrucConfig",
    "FrucMode",
    "Method",
    "Metric",
    "MetricReport",
    "MotionField",
    "MotionVector",
    "ProjectionKind",
    "ProjectionModel",
    "SearchConfig",
    "SynthSpec",
    "compensate",
    "estimate",
    "estimate_hybrid",
    "estimate_projected",
    "estimate_tme",
    "evaluate",
    "generate",
    "interpolate",
    "load_calibration",
    "load_frame",
    "load_motion_field",
    "make_mask",
    "make_texture",
    "psnr",
    "retime_cwm",
    "save_calibration",
    "save_frame",
    "save_motion_field",
    "ssim",
    "upscale",
]

# 版本信息
__version__ = "1.0.0"
