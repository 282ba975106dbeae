"""
合成序列模块

把一张大的透视源图像按投影模型映射为圆形鱼眼帧，帧间在透视域内做已知的整数平移，
为运动估计提供真值。
"""
import csv
import os
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np
from loguru import logger
from scipy.ndimage import gaussian_filter

from fisheyeme import config
from fisheyeme.core.frames import Frame, centered_grid, interpolate_cubic, round_frame, save_frame
from fisheyeme.core.geometry import CameraGeometry, ProjectionModel, r_max
from fisheyeme.errors import ConfigError, SourceCoverageError


def check_synth_fov(geom: CameraGeometry) -> None:
    """θ 接近 90° 时透视坐标发散，合成只支持不超过 MAX_SYNTH_FOV_DEG 的视场角"""
    if geom.fov_deg > config.MAX_SYNTH_FOV_DEG:
        raise ConfigError(f"合成序列的视场角不能超过 {config.MAX_SYNTH_FOV_DEG}°: {geom.fov_deg}")


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """合成参数

    Attributes:
        geom: 输出帧的相机几何，视场角不超过 175°
        model: 鱼眼投影模型
        source: 透视源图像，必须覆盖所有帧的采样位置
        truth_shift: 每帧在透视域内的平移 (dx, dy)
        frame_count: 帧数，≥ 2
    """
    geom: CameraGeometry
    model: ProjectionModel
    source: Frame
    truth_shift: Tuple[int, int] = (0, 0)
    frame_count: int = 2

    def __post_init__(self):
        check_synth_fov(self.geom)
        if self.frame_count < 2:
            raise ConfigError(f"帧数至少为 2: {self.frame_count}")
        dx, dy = self.truth_shift
        if int(dx) != dx or int(dy) != dy:
            raise ConfigError(f"真值平移必须是整数: {self.truth_shift}")
        object.__setattr__(self, 'truth_shift', (int(dx), int(dy)))


@dataclass(frozen=True, eq=False)
class SynthSequence:
    """合成结果: 帧序列与每对相邻帧的真值矢量（参考帧 k，当前帧 k+1）"""
    frames: List[Frame]
    truths: List[Tuple[int, int]]
    spec: SynthSpec


def make_texture(height: int, width: int, seed: int = 0,
                 sigma: float = config.DEFAULT_TEXTURE_SIGMA) -> Frame:
    """可复现的带限噪声纹理: 高斯滤波后的均匀噪声拉伸到 [0, 255]"""
    if height <= 0 or width <= 0:
        raise ConfigError(f"纹理尺寸必须为正: {width}x{height}")
    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.uniform(0.0, 1.0, size=(height, width)), sigma=sigma)
    low, high = noise.min(), noise.max()
    if high == low:
        return Frame(np.full((height, width), 128.0))
    return Frame((noise - low) / (high - low) * config.PIXEL_MAX)


def perspective_preimage(geom: CameraGeometry, model: ProjectionModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """每个输出像素在透视域中的坐标

    Returns:
        (inside, xp, yp): 成像圆内标记与透视坐标（圆外为 0）
    """
    xs, ys = centered_grid(geom.height_px, geom.width_px)
    radius_f = np.hypot(xs, ys)
    inside = radius_f <= r_max(model, geom)
    theta = model.theta_of(np.where(inside, radius_f, 0.0), geom)
    radius_p = geom.focal_px * np.tan(theta)
    scale = np.divide(radius_p, radius_f, out=np.zeros_like(radius_p), where=radius_f > 0)
    scale = np.where(inside, scale, 0.0)
    return inside, scale * xs, scale * ys


def required_source_size(geom: CameraGeometry, model: ProjectionModel,
                         truth_shift: Tuple[int, int], frame_count: int,
                         margin: int = 2) -> Tuple[int, int]:
    """覆盖全部帧所需的最小源图像尺寸 (height, width)，取奇数使源中心对称"""
    check_synth_fov(geom)
    inside, xp, yp = perspective_preimage(geom, model)
    steps = max(frame_count - 1, 0)
    half_w = int(np.ceil(np.abs(xp[inside]).max() + steps * abs(truth_shift[0]))) + margin
    half_h = int(np.ceil(np.abs(yp[inside]).max() + steps * abs(truth_shift[1]))) + margin
    return 2 * half_h + 1, 2 * half_w + 1


def generate(spec: SynthSpec) -> SynthSequence:
    """生成合成序列

    第 k 帧的圆内像素取源图像 (源中心 + P(p) + k·shift) 处的三次插值，圆外为 0，
    结果量化到 8 位。

    Raises:
        SourceCoverageError: 有采样位置超出源图像
    """
    geom = spec.geom
    inside, xp, yp = perspective_preimage(geom, spec.model)
    src = spec.source
    scx, scy = src.center
    dx, dy = spec.truth_shift

    xs = xp[inside] + scx
    ys = yp[inside] + scy
    last = spec.frame_count - 1
    low_x = xs.min() + min(0, last * dx)
    high_x = xs.max() + max(0, last * dx)
    low_y = ys.min() + min(0, last * dy)
    high_y = ys.max() + max(0, last * dy)
    if low_x < 0 or low_y < 0 or high_x > src.width - 1 or high_y > src.height - 1:
        raise SourceCoverageError(
            f"源图像 {src.width}x{src.height} 不够大: 需要 x ∈ [{low_x:.1f}, {high_x:.1f}], "
            f"y ∈ [{low_y:.1f}, {high_y:.1f}]"
        )

    frames = []
    for k in range(spec.frame_count):
        values = np.zeros((geom.height_px, geom.width_px), dtype=np.float64)
        values[inside] = interpolate_cubic(src.luma, xs + k * dx, ys + k * dy)
        frames.append(round_frame(values))
        logger.debug(f"[@progress] 合成序列 ({k + 1}/{spec.frame_count}) "
                     f"{int((k + 1) / spec.frame_count * 100)}%")

    truths = [spec.truth_shift] * (spec.frame_count - 1)
    logger.info(f"[#success] ✅ 已合成 {spec.frame_count} 帧 {geom.width_px}x{geom.height_px}, "
                f"FOV {geom.fov_deg:g}°, 真值 {spec.truth_shift}")
    return SynthSequence(frames=frames, truths=truths, spec=spec)


def write_sequence(sequence: SynthSequence, out_dir: Union[str, os.PathLike]) -> List[str]:
    """写出帧 PNG 与真值 CSV，返回帧文件路径列表"""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for index, frame in enumerate(sequence.frames):
        path = os.path.join(out_dir, config.FRAME_NAME_PATTERN.format(index=index))
        save_frame(frame, path)
        paths.append(path)

    truth_path = os.path.join(out_dir, config.TRUTH_FILE)
    with open(truth_path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(config.TRUTH_CSV_HEADER.split(','))
        for index, (dx, dy) in enumerate(sequence.truths):
            writer.writerow([index, dx, dy])
    logger.info(f"[#success] ✅ 序列已写入 {out_dir}（{len(paths)} 帧 + {config.TRUTH_FILE}）")
    return paths


def read_truth(path: Union[str, os.PathLike]) -> List[Tuple[int, int]]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return [(int(r['truth_dx']), int(r['truth_dy'])) for r in csv.DictReader(f)]
