"""
帧模块

亮度帧、PNG/PGM 读写、Catmull-Rom 三次插值上采样（亚像素采样用）和圆形有效区掩码。
坐标约定: 以 (floor(W/2), floor(H/2)) 为原点的居中坐标，x 向右，y 向下。
"""
import os
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from loguru import logger
from PIL import Image, UnidentifiedImageError

from fisheyeme import config
from fisheyeme.core.geometry import CameraGeometry, CartCoord, ProjectionModel, project_theta
from fisheyeme.errors import ConfigError, FrameIOError, InvalidFrameError

SUPPORTED_SUFFIXES = ('.png', '.pgm')
# 8 位以上的模式一律拒绝
_HIGH_DEPTH_MODES = {'I', 'I;16', 'I;16B', 'I;16L', 'I;16N', 'F'}
# 上采样按行分片，限制中间数组的内存
_UPSCALE_ROW_CHUNK = 256


@dataclass(frozen=True, eq=False)
class Frame:
    """只读亮度帧

    Attributes:
        luma: (height, width) float64 数组，取值 [0, 255]
    """
    luma: np.ndarray

    def __post_init__(self):
        luma = np.array(self.luma, dtype=np.float64, copy=True)
        if luma.ndim != 2 or luma.size == 0:
            raise InvalidFrameError(f"帧必须是非空二维数组，实际形状 {luma.shape}")
        if not np.all(np.isfinite(luma)):
            raise InvalidFrameError("帧含有非有限值")
        if luma.min() < 0.0 or luma.max() > config.PIXEL_MAX:
            raise InvalidFrameError(f"帧取值超出 [0, 255]: [{luma.min()}, {luma.max()}]")
        luma.setflags(write=False)
        object.__setattr__(self, 'luma', luma)

    @property
    def height(self) -> int:
        return int(self.luma.shape[0])

    @property
    def width(self) -> int:
        return int(self.luma.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def center(self) -> Tuple[int, int]:
        """(cx, cy) = (floor(W/2), floor(H/2))"""
        return self.width // 2, self.height // 2

    @classmethod
    def zeros(cls, height: int, width: int) -> 'Frame':
        return cls(np.zeros((height, width)))

    def to_uint8(self) -> np.ndarray:
        return quantize_8bit(self.luma)

    def same_shape(self, other: 'Frame') -> bool:
        return self.shape == other.shape


def quantize_8bit(values: np.ndarray) -> np.ndarray:
    """四舍五入（远离零）并截断到 [0, 255]"""
    rounded = np.sign(values) * np.floor(np.abs(values) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def round_frame(values: np.ndarray) -> Frame:
    return Frame(quantize_8bit(values).astype(np.float64))


def load_frame(path: Union[str, os.PathLike]) -> Frame:
    """读取灰度 PNG / PGM，彩色图按 BT.601 权重转为亮度

    Raises:
        FrameIOError: 文件不存在、损坏（含截断）或位深大于 8
    """
    try:
        with Image.open(path) as img:
            # 截断文件在 load() 时才会报错
            img.load()
            mode = img.mode
            if mode in _HIGH_DEPTH_MODES:
                raise FrameIOError(f"不支持的位深（模式 {mode}）: {path}")
            if mode == 'L':
                luma = np.asarray(img, dtype=np.float64)
            elif mode == '1':
                luma = np.asarray(img.convert('L'), dtype=np.float64)
            else:
                rgb = np.asarray(img.convert('RGB'), dtype=np.int64)
                weighted = 299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2]
                luma = weighted.astype(np.float64) / 1000.0
    except FrameIOError:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as e:
        raise FrameIOError(f"无法读取图像 {path}: {e}") from e

    logger.debug(f"读取帧 {os.path.basename(str(path))}: {luma.shape[1]}x{luma.shape[0]}, 模式 {mode}")
    return Frame(luma)


def save_frame(frame: Frame, path: Union[str, os.PathLike]) -> None:
    """把帧写为 8 位 PNG 或二进制 PGM（P5）"""
    suffix = os.path.splitext(str(path))[1].lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise FrameIOError(f"不支持的输出格式 '{suffix}'，只支持 {', '.join(SUPPORTED_SUFFIXES)}")
    image = Image.fromarray(frame.to_uint8())
    try:
        parent = os.path.dirname(os.path.abspath(str(path)))
        os.makedirs(parent, exist_ok=True)
        image.save(path, format='PNG' if suffix == '.png' else 'PPM')
    except OSError as e:
        raise FrameIOError(f"无法写入图像 {path}: {e}") from e


def pad_frame(frame: Frame, height: int, width: int) -> Frame:
    """在下方和右侧补零到目标尺寸"""
    if height < frame.height or width < frame.width:
        raise ConfigError(f"目标尺寸 {width}x{height} 小于帧尺寸 {frame.width}x{frame.height}")
    padded = np.zeros((height, width), dtype=np.float64)
    padded[:frame.height, :frame.width] = frame.luma
    return Frame(padded)


def crop_frame(frame: Frame, height: int, width: int) -> Frame:
    return Frame(frame.luma[:height, :width])


def pad_to_square(frame: Frame) -> Frame:
    side = max(frame.height, frame.width)
    return pad_frame(frame, side, side)


def catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """a = −0.5 的三次卷积核权重，返回形状 (..., 4)，对应偏移 −1, 0, +1, +2"""
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    t3 = t2 * t
    return np.stack([
        (-t3 + 2.0 * t2 - t) / 2.0,
        (3.0 * t3 - 5.0 * t2 + 2.0) / 2.0,
        (-3.0 * t3 + 4.0 * t2 + t) / 2.0,
        (t3 - t2) / 2.0,
    ], axis=-1)


def _axis_taps(length: int, factor: int) -> Tuple[np.ndarray, np.ndarray]:
    """沿一个轴计算上采样网格每个节点的 4 个源索引（边缘复制）与权重"""
    nodes = np.arange((length - 1) * factor + 1)
    base = nodes // factor
    phase = (nodes % factor) / factor
    offsets = np.arange(-1, 3)
    indices = np.clip(base[:, None] + offsets[None, :], 0, length - 1)
    return indices, catmull_rom_weights(phase)


@dataclass(frozen=True, eq=False)
class UpscaledFrame:
    """1/factor 像素网格上的插值结果

    grid[j, i] 对应源坐标 (i/factor, j/factor)，形状 ((H−1)·factor+1, (W−1)·factor+1)。
    """
    factor: int
    grid: np.ndarray
    width: int
    height: int

    @property
    def center(self) -> Tuple[int, int]:
        return self.width // 2, self.height // 2

    def node(self, x: int, y: int) -> float:
        """整数像素位置 (x, y)（非居中坐标）的网格值"""
        return float(self.grid[y * self.factor, x * self.factor])


def upscale(frame: Frame, factor: int = config.DEFAULT_PRECISION) -> UpscaledFrame:
    """可分离 Catmull-Rom 三次插值上采样

    先沿纵轴再沿横轴，边缘复制；整数节点权重为 (0, 1, 0, 0)，因此原始采样精确保留。
    结果截断到 [0, 255]。
    """
    factor = int(factor)
    if factor < 1:
        raise ConfigError(f"上采样因子必须 ≥ 1: {factor}")
    if factor == 1:
        grid = np.array(frame.luma, dtype=np.float64)
        grid.setflags(write=False)
        return UpscaledFrame(1, grid, frame.width, frame.height)

    source = frame.luma
    row_idx, row_w = _axis_taps(frame.height, factor)
    col_idx, col_w = _axis_taps(frame.width, factor)

    vertical = np.empty((row_idx.shape[0], frame.width), dtype=np.float64)
    for start in range(0, row_idx.shape[0], _UPSCALE_ROW_CHUNK):
        stop = min(start + _UPSCALE_ROW_CHUNK, row_idx.shape[0])
        taps = source[row_idx[start:stop]]
        vertical[start:stop] = np.einsum('nk,nkw->nw', row_w[start:stop], taps)

    grid = np.empty((row_idx.shape[0], col_idx.shape[0]), dtype=np.float64)
    for start in range(0, vertical.shape[0], _UPSCALE_ROW_CHUNK):
        stop = min(start + _UPSCALE_ROW_CHUNK, vertical.shape[0])
        taps = vertical[start:stop][:, col_idx]
        grid[start:stop] = np.einsum('mk,nmk->nm', col_w, taps)

    np.clip(grid, 0.0, config.PIXEL_MAX, out=grid)
    grid.setflags(write=False)
    logger.debug(f"上采样 {frame.width}x{frame.height} ×{factor} → {grid.shape[1]}x{grid.shape[0]}")
    return UpscaledFrame(factor, grid, frame.width, frame.height)


def quantize_coord(values: np.ndarray, factor: int) -> np.ndarray:
    """量化到 1/factor 网格，远离零方向四舍五入，返回以 1/factor 为单位的整数（float 表示）"""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) * factor + 0.5)


def sample_many(up: UpscaledFrame, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """批量采样居中坐标 (xs, ys)；帧外坐标或 NaN 返回 0"""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    cx, cy = up.center
    finite = np.isfinite(xs) & np.isfinite(ys)
    gx = quantize_coord(np.where(finite, xs, 0.0), up.factor) + cx * up.factor
    gy = quantize_coord(np.where(finite, ys, 0.0), up.factor) + cy * up.factor
    rows, cols = up.grid.shape
    valid = finite & (gx >= 0) & (gx < cols) & (gy >= 0) & (gy < rows)
    gxi = np.where(valid, gx, 0).astype(np.intp)
    gyi = np.where(valid, gy, 0).astype(np.intp)
    return np.where(valid, up.grid[gyi, gxi], 0.0)


def sample(up: UpscaledFrame, c: CartCoord) -> float:
    """在居中坐标 c 处取上采样网格值（先量化到 1/factor），帧外返回 0"""
    return float(sample_many(up, np.array([c.x]), np.array([c.y]))[0])


def interpolate_cubic(array: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """在任意（非居中）坐标处做二维 Catmull-Rom 插值，边缘复制

    与 upscale 使用同一卷积核；调用方负责检查坐标是否在数组范围内。
    """
    array = np.asarray(array, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    height, width = array.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    wx = catmull_rom_weights(xs - x0)
    wy = catmull_rom_weights(ys - y0)
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)

    result = np.zeros(xs.shape, dtype=np.float64)
    for j in range(4):
        rows = np.clip(y0 + j - 1, 0, height - 1)
        line = np.zeros(xs.shape, dtype=np.float64)
        for i in range(4):
            cols = np.clip(x0 + i - 1, 0, width - 1)
            line += wx[..., i] * array[rows, cols]
        result += wy[..., j] * line
    return result


def centered_grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """整帧的居中坐标网格 (xs, ys)，形状 (height, width)"""
    cx, cy = width // 2, height // 2
    ys, xs = np.mgrid[0:height, 0:width]
    return (xs - cx).astype(np.float64), (ys - cy).astype(np.float64)


@dataclass(frozen=True, eq=False)
class CircularMask:
    """圆形有效区

    Attributes:
        radius_px: 半径（像素）
        valid: (height, width) 布尔数组，到中心距离 ≤ radius_px 为 True
        fov_deg: 生成该掩码所用的视场角
    """
    radius_px: float
    valid: np.ndarray
    fov_deg: float

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.valid))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.valid.shape

    def describe(self) -> str:
        return f"FOV {self.fov_deg:g}°, r = {self.radius_px:.2f}px, {self.count} px"


def make_mask(geom: CameraGeometry, model: ProjectionModel,
              fov_deg_limit: Optional[float] = None) -> CircularMask:
    """按视场角生成圆形掩码，半径为 θ = limit/2 的投影半径

    Raises:
        ConfigError: limit ≤ 0 或大于 geom.fov_deg
        ProjectionDomainError: θ 超出模型定义域
    """
    limit = geom.fov_deg if fov_deg_limit is None else float(fov_deg_limit)
    if limit <= 0:
        raise ConfigError(f"掩码视场角必须为正: {limit}")
    if limit > geom.fov_deg:
        raise ConfigError(f"掩码视场角 {limit}° 超过相机视场角 {geom.fov_deg}°")

    radius = project_theta(model, geom, np.radians(limit / 2.0))
    xs, ys = centered_grid(geom.height_px, geom.width_px)
    valid = np.hypot(xs, ys) <= radius
    valid.setflags(write=False)
    if not valid.any():
        raise ConfigError(f"掩码为空 (FOV {limit}°)")
    return CircularMask(radius_px=float(radius), valid=valid, fov_deg=limit)
