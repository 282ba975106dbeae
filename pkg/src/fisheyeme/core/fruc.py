"""
帧率上变换模块

在 prev（t−1）与 next（t）之间合成 t−α 时刻的中间帧:
    - REP: 复制 prev
    - LA: α·prev + (1−α)·next
    - MCF: 后向取值 Ibw(p) = prev(p − (1−α)·m(p))
    - MCLA: (Ifw + Ibw) / 2，其中 Ifw(p) = next(p + α·m(p))

m 为前向场与取反的后向场经中心加权中值（CWM）重定时后的稠密运动场。
鱼眼自适应模式下，完全位于 hybrid_fov 圆内的块使用 EME+/CME+，其余块使用 TME。
"""
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from loguru import logger

from fisheyeme import config
from fisheyeme.core.blockmatch import (
    Method,
    MotionField,
    ProjectionPipeline,
    SearchConfig,
    block_grid,
    estimate,
    grid_shape,
)
from fisheyeme.core.frames import Frame, centered_grid, round_frame, sample_many, upscale
from fisheyeme.core.geometry import CameraGeometry, ProjectionModel, project_theta
from fisheyeme.errors import ConfigError, DimensionMismatchError

# 行分片，限制 CWM 的 38 层中间数组
_CWM_ROW_CHUNK = 128


class FrucMode(str, Enum):
    REP = "rep"
    LA = "la"
    MCF = "mcf"
    MCLA = "mcla"


class Adapt(str, Enum):
    NONE = "none"
    EQUISOLID = "equisolid"
    CALIBRATED = "calibrated"

    @property
    def method(self) -> Method:
        return {
            Adapt.NONE: Method.TME,
            Adapt.EQUISOLID: Method.EME_PLUS,
            Adapt.CALIBRATED: Method.CME_PLUS,
        }[self]


class Provenance(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    RETIMED = "retimed"


@dataclass
class FrucConfig:
    """帧率上变换配置

    Attributes:
        alpha: 中间帧到 next 的时间距离，(0, 1)
        mode: rep / la / mcf / mcla
        adapt: none / equisolid / calibrated
        hybrid_fov_deg: 自适应估计区域的视场角，必须小于相机视场角
        search: 运动估计配置（method 由 adapt 决定）
    """
    alpha: float = config.DEFAULT_ALPHA
    mode: FrucMode = FrucMode.MCLA
    adapt: Adapt = Adapt.NONE
    hybrid_fov_deg: float = config.DEFAULT_HYBRID_FOV_DEG
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        self.mode = FrucMode(self.mode)
        self.adapt = Adapt(self.adapt)
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha 必须在 (0, 1) 之间: {self.alpha}")
        if self.hybrid_fov_deg <= 0:
            raise ConfigError(f"混合区域视场角必须为正: {self.hybrid_fov_deg}")

    def validate(self, geom: Optional[CameraGeometry]) -> None:
        if self.adapt is Adapt.NONE:
            return
        if geom is None:
            raise ConfigError("鱼眼自适应模式需要几何参数")
        if self.hybrid_fov_deg >= geom.fov_deg:
            raise ConfigError(
                f"混合区域视场角 {self.hybrid_fov_deg}° 必须小于相机视场角 {geom.fov_deg}°"
            )

    @property
    def search_config(self) -> SearchConfig:
        return replace(self.search, method=self.adapt.method)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'alpha': self.alpha,
            'mode': self.mode.value,
            'adapt': self.adapt.value,
            'hybrid_fov_deg': self.hybrid_fov_deg,
            'search': self.search.to_dict(),
        }

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> 'FrucConfig':
        values = dict(config_dict)
        if 'search' in values:
            values['search'] = SearchConfig.from_dict(values['search'])
        known = {k: v for k, v in values.items() if k in cls().to_dict()}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class DenseMotionField:
    """逐像素运动场（实数分量，像素）"""
    vx: np.ndarray
    vy: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        vx = np.asarray(self.vx, dtype=np.float64)
        vy = np.asarray(self.vy, dtype=np.float64)
        if vx.shape != vy.shape or vx.ndim != 2:
            raise DimensionMismatchError(f"运动场分量形状不一致: {vx.shape} vs {vy.shape}")
        if not (np.all(np.isfinite(vx)) and np.all(np.isfinite(vy))):
            raise ConfigError("稠密运动场含有非有限值")
        object.__setattr__(self, 'vx', vx)
        object.__setattr__(self, 'vy', vy)
        object.__setattr__(self, 'provenance', Provenance(self.provenance))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.vx.shape

    @classmethod
    def constant(cls, height: int, width: int, dx: float, dy: float,
                 provenance: Provenance = Provenance.FORWARD) -> 'DenseMotionField':
        return cls(np.full((height, width), float(dx)), np.full((height, width), float(dy)), provenance)

    def negated(self) -> 'DenseMotionField':
        return DenseMotionField(-self.vx, -self.vy, self.provenance)


def densify(field_: MotionField, block_size: Optional[int] = None,
            model: Optional[ProjectionModel] = None, geom: Optional[CameraGeometry] = None,
            provenance: Provenance = Provenance.FORWARD) -> DenseMotionField:
    """块运动场 → 逐像素运动场

    TME 块内所有像素继承块矢量；投影方法的块让每个像素走一遍获胜候选的坐标流水线，
    得到鱼眼域位移。圆外、跳过或重投影落在定义域外的像素位移为 0。
    """
    if block_size is not None and block_size != field_.config.block_size:
        raise ConfigError(f"块大小 {block_size} 与运动场的块大小 {field_.config.block_size} 不一致")

    vx = np.zeros((field_.height, field_.width), dtype=np.float64)
    vy = np.zeros_like(vx)
    pipeline = None
    if any(Method(m).is_projected for m in field_.methods.flat):
        if model is None or geom is None:
            raise ConfigError("投影运动场的稠密化需要投影模型和几何参数")
        pipeline = ProjectionPipeline(model, geom, field_.config.method)

    for by, bx, block in field_.blocks():
        if field_.skipped[by, bx]:
            continue
        rows = slice(block.y0, block.y0 + block.height)
        cols = slice(block.x0, block.x0 + block.width)
        dx, dy = field_.vectors[by, bx]
        if not Method(field_.methods[by, bx]).is_projected:
            vx[rows, cols] = dx
            vy[rows, cols] = dy
            continue
        coords = pipeline.block_coords(block)
        xfm, yfm = pipeline.displace(coords, np.array([dx]), np.array([dy]))
        shift_x = np.nan_to_num(xfm[0] - coords.xf, nan=0.0)
        shift_y = np.nan_to_num(yfm[0] - coords.yf, nan=0.0)
        vx[rows, cols] = shift_x.reshape(block.height, block.width)
        vy[rows, cols] = shift_y.reshape(block.height, block.width)
    return DenseMotionField(vx, vy, provenance)


def _cross_taps(padded: np.ndarray, pad: int, rows: slice, width: int,
                block_size: int) -> list:
    """十字形 4 臂 × 3 个抽头（距离 b, 2b, 3b），帧外为 NaN"""
    taps = []
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        for k in range(1, config.CWM_TAPS_PER_ARM + 1):
            oy, ox = dy * k * block_size, dx * k * block_size
            taps.append(padded[rows.start + pad + oy:rows.stop + pad + oy,
                               pad + ox:pad + ox + width])
    return taps


def median_ignoring_nan(stack: np.ndarray) -> np.ndarray:
    """沿第 0 轴取中值，NaN 视为缺失；偶数个值取中间两个的平均，全为 NaN 时结果为 NaN"""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        return np.nanmedian(stack, axis=0)


def _cwm_component(fwd: np.ndarray, bwd_neg: np.ndarray, block_size: int) -> np.ndarray:
    height, width = fwd.shape
    pad = config.CWM_TAPS_PER_ARM * block_size
    fwd_padded = np.pad(fwd, pad, constant_values=np.nan)
    bwd_padded = np.pad(bwd_neg, pad, constant_values=np.nan)
    output = np.empty_like(fwd)
    weight = config.CWM_CENTER_WEIGHT
    for start in range(0, height, _CWM_ROW_CHUNK):
        rows = slice(start, min(start + _CWM_ROW_CHUNK, height))
        layers = [fwd[rows]] * weight + [bwd_neg[rows]] * weight
        layers += _cross_taps(fwd_padded, pad, rows, width, block_size)
        layers += _cross_taps(bwd_padded, pad, rows, width, block_size)
        output[rows] = median_ignoring_nan(np.stack(layers))
    return output


def retime_cwm(fwd: DenseMotionField, bwd: DenseMotionField,
               block_size: int = config.DEFAULT_BLOCK_SIZE) -> DenseMotionField:
    """中心加权中值重定时

    每个像素、每个分量取 38 个值的中值: 前向中心 ×7、取反后向中心 ×7，
    以及两个场在十字 4 臂上距离 b、2b、3b 的抽头各 12 个。帧外抽头从集合中去掉。
    """
    if fwd.shape != bwd.shape:
        raise DimensionMismatchError(f"前向场 {fwd.shape} 与后向场 {bwd.shape} 尺寸不一致")
    if block_size <= 0:
        raise ConfigError(f"块大小必须为正: {block_size}")
    vx = _cwm_component(fwd.vx, -bwd.vx, block_size)
    vy = _cwm_component(fwd.vy, -bwd.vy, block_size)
    return DenseMotionField(vx, vy, Provenance.RETIMED)


def hybrid_region_split(geom: CameraGeometry, model: ProjectionModel,
                        hybrid_fov_deg: float = config.DEFAULT_HYBRID_FOV_DEG,
                        block_size: int = config.DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """块的四个角都在 hybrid_fov 圆内则为自适应块（True），否则为传统块

    Returns:
        (blocks_y, blocks_x) 布尔数组
    """
    if hybrid_fov_deg >= geom.fov_deg:
        raise ConfigError(f"混合区域视场角 {hybrid_fov_deg}° 必须小于相机视场角 {geom.fov_deg}°")
    radius = project_theta(model, geom, np.radians(hybrid_fov_deg / 2.0))
    cx, cy = geom.center
    adapted = np.zeros(grid_shape(geom.height_px, geom.width_px, block_size), dtype=bool)
    for by, bx, block in block_grid(geom.height_px, geom.width_px, block_size):
        corners_x = np.array([block.x0, block.x0 + block.width - 1]) - cx
        corners_y = np.array([block.y0, block.y0 + block.height - 1]) - cy
        gx, gy = np.meshgrid(corners_x, corners_y)
        adapted[by, bx] = bool(np.all(np.hypot(gx, gy) <= radius))
    return adapted


@dataclass(frozen=True, eq=False)
class FrucResult:
    """插值结果，调试用的单侧取值与运动场一并返回"""
    frame: Frame
    backward_fetch: Optional[Frame] = None
    forward_fetch: Optional[Frame] = None
    forward_field: Optional[MotionField] = None
    backward_field: Optional[MotionField] = None
    retimed: Optional[DenseMotionField] = None


def _estimate_pair(prev: Frame, next_: Frame, cfg: FrucConfig, model: Optional[ProjectionModel],
                   geom: Optional[CameraGeometry]) -> Tuple[MotionField, MotionField]:
    """前向 (cur=prev, ref=next) 与后向 (cur=next, ref=prev) 估计并行执行"""
    search = cfg.search_config
    adapted_mask = None
    if cfg.adapt is not Adapt.NONE:
        adapted_mask = hybrid_region_split(geom, model, cfg.hybrid_fov_deg, search.block_size)
        logger.info(f"[#status] 🧭 混合估计: {int(adapted_mask.sum())}/{adapted_mask.size} 块使用 "
                    f"{search.method.value}")
    with ThreadPoolExecutor(max_workers=2) as executor:
        forward = executor.submit(estimate, prev, next_, search, model, geom, adapted_mask)
        backward = executor.submit(estimate, next_, prev, search, model, geom, adapted_mask)
        return forward.result(), backward.result()


def interpolate_detailed(prev: Frame, next_: Frame, cfg: FrucConfig,
                         model: Optional[ProjectionModel] = None,
                         geom: Optional[CameraGeometry] = None) -> FrucResult:
    """合成中间帧并返回中间结果"""
    if not prev.same_shape(next_):
        raise DimensionMismatchError(
            f"前一帧 {prev.width}x{prev.height} 与后一帧 {next_.width}x{next_.height} 尺寸不一致"
        )
    cfg.validate(geom)
    alpha = cfg.alpha

    if cfg.mode is FrucMode.REP:
        return FrucResult(frame=prev)
    if cfg.mode is FrucMode.LA:
        return FrucResult(frame=round_frame(alpha * prev.luma + (1.0 - alpha) * next_.luma))

    forward_field, backward_field = _estimate_pair(prev, next_, cfg, model, geom)
    block_size = cfg.search.block_size
    fwd = densify(forward_field, block_size, model, geom, Provenance.FORWARD)
    bwd = densify(backward_field, block_size, model, geom, Provenance.BACKWARD)
    retimed = retime_cwm(fwd, bwd, block_size)

    precision = cfg.search.precision
    xs, ys = centered_grid(prev.height, prev.width)
    backward_values = sample_many(upscale(prev, precision),
                                  xs - (1.0 - alpha) * retimed.vx, ys - (1.0 - alpha) * retimed.vy)
    backward_fetch = round_frame(backward_values)

    forward_fetch = None
    if cfg.mode is FrucMode.MCF:
        frame = backward_fetch
    else:
        forward_values = sample_many(upscale(next_, precision),
                                     xs + alpha * retimed.vx, ys + alpha * retimed.vy)
        forward_fetch = round_frame(forward_values)
        frame = round_frame((forward_values + backward_values) / 2.0)

    return FrucResult(frame=frame, backward_fetch=backward_fetch, forward_fetch=forward_fetch,
                      forward_field=forward_field, backward_field=backward_field, retimed=retimed)


def interpolate(prev: Frame, next_: Frame, cfg: FrucConfig,
                model: Optional[ProjectionModel] = None,
                geom: Optional[CameraGeometry] = None) -> Frame:
    """合成 t−α 时刻的中间帧"""
    return interpolate_detailed(prev, next_, cfg, model, geom).frame
