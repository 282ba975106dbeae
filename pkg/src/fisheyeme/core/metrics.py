"""
质量评估模块

亮度 PSNR 与单尺度 SSIM，只统计圆形鱼眼有效区内的像素。
"""
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Union

import numpy as np
from scipy.ndimage import uniform_filter

from fisheyeme import config
from fisheyeme.core.frames import CircularMask, Frame
from fisheyeme.errors import ConfigError, DimensionMismatchError

MaskLike = Union[CircularMask, np.ndarray, None]
# 窗口完全落在掩码内的判定容差
_WINDOW_TOLERANCE = 1e-9


def _mask_array(mask: MaskLike, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    valid = mask.valid if isinstance(mask, CircularMask) else np.asarray(mask, dtype=bool)
    if valid.shape != tuple(shape):
        raise DimensionMismatchError(f"掩码形状 {valid.shape} 与帧形状 {tuple(shape)} 不一致")
    if not valid.any():
        raise ConfigError("掩码内没有像素")
    return valid


def _check_pair(a: Frame, b: Frame) -> None:
    if not a.same_shape(b):
        raise DimensionMismatchError(f"帧尺寸不一致: {a.width}x{a.height} vs {b.width}x{b.height}")


def psnr(a: Frame, b: Frame, mask: MaskLike = None) -> float:
    """掩码内的亮度 PSNR（dB），两帧相同时返回 math.inf"""
    _check_pair(a, b)
    valid = _mask_array(mask, a.shape)
    diff = a.luma[valid] - b.luma[valid]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(config.PIXEL_MAX ** 2 / mse)


def ssim(a: Frame, b: Frame, mask: MaskLike = None) -> float:
    """8×8 均匀窗口的单尺度 SSIM，只对完全落在掩码内的窗口取平均"""
    _check_pair(a, b)
    valid = _mask_array(mask, a.shape)
    size = config.SSIM_WINDOW
    c1 = (config.SSIM_K1 * config.PIXEL_MAX) ** 2
    c2 = (config.SSIM_K2 * config.PIXEL_MAX) ** 2

    x = a.luma
    y = b.luma
    window = uniform_filter(valid.astype(np.float64), size=size, mode='constant')
    inside = window >= 1.0 - _WINDOW_TOLERANCE
    if not inside.any():
        raise ConfigError(f"掩码内放不下 {size}x{size} 的 SSIM 窗口")

    mu_x = uniform_filter(x, size=size, mode='constant')
    mu_y = uniform_filter(y, size=size, mode='constant')
    var_x = uniform_filter(x * x, size=size, mode='constant') - mu_x * mu_x
    var_y = uniform_filter(y * y, size=size, mode='constant') - mu_y * mu_y
    cov = uniform_filter(x * y, size=size, mode='constant') - mu_x * mu_y

    numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(numerator[inside] / denominator[inside]))


@dataclass(frozen=True)
class MetricReport:
    """单帧评估结果，psnr_db 为 math.inf 表示两帧完全相同"""
    psnr_db: float
    ssim: float
    pixel_count: int
    mask: str = ""

    @property
    def is_identical(self) -> bool:
        return math.isinf(self.psnr_db)

    @property
    def psnr_text(self) -> str:
        return format_psnr(self.psnr_db)


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def evaluate(a: Frame, b: Frame, mask: MaskLike = None) -> MetricReport:
    valid = _mask_array(mask, a.shape)
    description = mask.describe() if isinstance(mask, CircularMask) else "full frame"
    return MetricReport(psnr_db=psnr(a, b, valid), ssim=ssim(a, b, valid),
                        pixel_count=int(np.count_nonzero(valid)), mask=description)


@dataclass(frozen=True)
class AggregateReport:
    """一组结果的平均值；PSNR 均值跳过无穷项并单独计数"""
    mean_psnr_db: Optional[float]
    inf_count: int
    mean_ssim: float
    count: int
    pixel_count: int


def aggregate(reports: Iterable[MetricReport]) -> AggregateReport:
    reports: List[MetricReport] = list(reports)
    if not reports:
        raise ConfigError("没有可汇总的评估结果")
    finite = [r.psnr_db for r in reports if not r.is_identical]
    return AggregateReport(
        mean_psnr_db=float(np.mean(finite)) if finite else None,
        inf_count=len(reports) - len(finite),
        mean_ssim=float(np.mean([r.ssim for r in reports])),
        count=len(reports),
        pixel_count=reports[0].pixel_count,
    )


def error_map(a: Frame, b: Frame, mask: MaskLike = None, gain: float = 4.0) -> Frame:
    """放大后的绝对差图，反相显示（白色 = 无误差），掩码外为白色"""
    _check_pair(a, b)
    if gain <= 0:
        raise ConfigError(f"增益必须为正: {gain}")
    valid = _mask_array(mask, a.shape)
    error = np.clip(gain * np.abs(a.luma - b.luma), 0.0, config.PIXEL_MAX)
    inverted = np.where(valid, config.PIXEL_MAX - error, config.PIXEL_MAX)
    return Frame(inverted)
