"""
投影几何模块

径向投影函数（针孔、等距、等立体角、正交、体视、标定查找表）、笛卡尔/极坐标互换、
鱼眼/透视坐标互换与超广角补偿。坐标原点在图像中心，单位为像素。

所有函数都是不可变输入上的纯函数，可以任意并发调用。
"""
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fisheyeme import config
from fisheyeme.core.calibration import CalibrationTable, require_coverage
from fisheyeme.errors import (
    ConfigError,
    ProjectionDomainError,
    RadiusRangeError,
    SingularProjectionError,
    UltraWideError,
)

ArrayLike = Union[float, np.ndarray]

HALF_PI = math.pi / 2
# 距离 tan 极点小于该值的 θ 视为奇异
POLE_EPS = 1e-12
# r 与 r_max 比较时的相对容差
RADIUS_RTOL = 1e-12


class ProjectionKind(str, Enum):
    PINHOLE = "pinhole"
    EQUIDISTANT = "equidistant"
    EQUISOLID = "equisolid"
    ORTHOGRAPHIC = "orthographic"
    STEREOGRAPHIC = "stereographic"
    CALIBRATED = "calibrated"


# 各解析模型的 θ 上界及是否包含上界
_THETA_LIMITS = {
    ProjectionKind.PINHOLE: (HALF_PI, False),
    ProjectionKind.ORTHOGRAPHIC: (HALF_PI, True),
    ProjectionKind.EQUISOLID: (math.pi, True),
    ProjectionKind.EQUIDISTANT: (math.inf, True),
    ProjectionKind.STEREOGRAPHIC: (math.pi, False),
}


def _analytic_radius(kind: ProjectionKind, theta: np.ndarray, focal: float) -> np.ndarray:
    if kind is ProjectionKind.PINHOLE:
        return focal * np.tan(theta)
    if kind is ProjectionKind.EQUIDISTANT:
        return focal * theta
    if kind is ProjectionKind.EQUISOLID:
        return 2.0 * focal * np.sin(theta / 2.0)
    if kind is ProjectionKind.ORTHOGRAPHIC:
        return focal * np.sin(theta)
    if kind is ProjectionKind.STEREOGRAPHIC:
        return 2.0 * focal * np.tan(theta / 2.0)
    raise ConfigError(f"不是解析投影模型: {kind}")


def _analytic_theta(kind: ProjectionKind, radius: np.ndarray, focal: float) -> np.ndarray:
    if kind is ProjectionKind.PINHOLE:
        return np.arctan(radius / focal)
    if kind is ProjectionKind.EQUIDISTANT:
        return radius / focal
    if kind is ProjectionKind.EQUISOLID:
        return 2.0 * np.arcsin(np.clip(radius / (2.0 * focal), 0.0, 1.0))
    if kind is ProjectionKind.ORTHOGRAPHIC:
        return np.arcsin(np.clip(radius / focal, 0.0, 1.0))
    if kind is ProjectionKind.STEREOGRAPHIC:
        return 2.0 * np.arctan(radius / (2.0 * focal))
    raise ConfigError(f"不是解析投影模型: {kind}")


@dataclass(frozen=True)
class CameraGeometry:
    """相机几何参数

    Attributes:
        focal_mm: 焦距（毫米）
        fov_deg: 视场角（度），(0, 360]
        sensor_mm: 方形传感器宽度（毫米）
        width_px: 图像宽度（像素）
        height_px: 图像高度（像素）
    """
    focal_mm: float = config.DEFAULT_FOCAL_MM
    fov_deg: float = config.DEFAULT_FOV_DEG
    sensor_mm: float = config.DEFAULT_SENSOR_MM
    width_px: int = config.DEFAULT_WIDTH_PX
    height_px: int = config.DEFAULT_HEIGHT_PX

    def __post_init__(self):
        if not self.focal_mm > 0:
            raise ConfigError(f"焦距必须为正: {self.focal_mm}")
        if not 0 < self.fov_deg <= 360:
            raise ConfigError(f"视场角必须在 (0, 360] 之间: {self.fov_deg}")
        if not self.sensor_mm > 0:
            raise ConfigError(f"传感器尺寸必须为正: {self.sensor_mm}")
        if int(self.width_px) <= 0 or int(self.height_px) <= 0:
            raise ConfigError(f"分辨率必须为正: {self.width_px}x{self.height_px}")

    @property
    def px_per_mm(self) -> float:
        return self.width_px / self.sensor_mm

    @property
    def focal_px(self) -> float:
        """焦距换算为像素: f_mm · width_px / sensor_mm"""
        return self.focal_mm * self.px_per_mm

    @property
    def theta_max(self) -> float:
        """最大入射角（弧度）"""
        return math.radians(self.fov_deg / 2.0)

    @property
    def center(self) -> Tuple[int, int]:
        return self.width_px // 2, self.height_px // 2

    def with_fov(self, fov_deg: float) -> 'CameraGeometry':
        return replace(self, fov_deg=float(fov_deg))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'focal_mm': self.focal_mm,
            'fov_deg': self.fov_deg,
            'sensor_mm': self.sensor_mm,
            'width_px': self.width_px,
            'height_px': self.height_px,
        }

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> 'CameraGeometry':
        known = {k: config_dict[k] for k in cls().to_dict() if k in config_dict}
        return cls(**known)


@dataclass(frozen=True)
class ProjectionModel:
    """径向投影模型，θ ↔ r 的映射

    kind 为 calibrated 时必须提供查找表，其余情况不允许提供。
    """
    kind: ProjectionKind
    table: Optional[CalibrationTable] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', ProjectionKind(self.kind))
        if self.kind is ProjectionKind.CALIBRATED and self.table is None:
            raise ConfigError("标定模型需要查找表")
        if self.kind is not ProjectionKind.CALIBRATED and self.table is not None:
            raise ConfigError(f"{self.kind.value} 模型不使用查找表")

    @classmethod
    def equisolid(cls) -> 'ProjectionModel':
        return cls(ProjectionKind.EQUISOLID)

    @classmethod
    def calibrated(cls, table: CalibrationTable) -> 'ProjectionModel':
        return cls(ProjectionKind.CALIBRATED, table)

    @property
    def is_calibrated(self) -> bool:
        return self.kind is ProjectionKind.CALIBRATED

    def in_domain(self, theta: ArrayLike) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if self.is_calibrated:
            return self.table.covers(theta)
        limit, inclusive = _THETA_LIMITS[self.kind]
        upper = theta <= limit if inclusive else theta < limit
        return (theta >= 0.0) & upper

    def radius_px(self, theta: ArrayLike, geom: CameraGeometry, strict: bool = True) -> np.ndarray:
        """θ → r（像素）

        strict 为 False 时，定义域外的 θ 返回 NaN 而不是抛出异常。
        """
        theta = np.asarray(theta, dtype=np.float64)
        valid = self.in_domain(theta)
        if strict and not np.all(valid):
            if self.is_calibrated:
                require_coverage(self.table, theta)
            bad = float(np.asarray(theta)[~valid].flat[0])
            raise ProjectionDomainError(
                f"θ = {math.degrees(bad):.6f}° 超出 {self.kind.value} 模型的定义域"
            )
        with np.errstate(invalid='ignore'):
            if self.is_calibrated:
                radius = self.table.radius_mm(theta) * geom.px_per_mm
            else:
                radius = _analytic_radius(self.kind, theta, geom.focal_px)
        if not strict:
            radius = np.where(valid, radius, np.nan)
        return radius

    def theta_of(self, radius_px: ArrayLike, geom: CameraGeometry) -> np.ndarray:
        """r（像素）→ θ，不做范围检查"""
        radius = np.asarray(radius_px, dtype=np.float64)
        if self.is_calibrated:
            return self.table.theta_rad(radius / geom.px_per_mm)
        return _analytic_theta(self.kind, radius, geom.focal_px)


def calibration_from_model(model: ProjectionModel, focal_mm: float, theta_max_deg: float,
                           step_deg: float = config.DEFAULT_LUT_STEP_DEG) -> CalibrationTable:
    """对解析模型按固定步长采样生成查找表（半径单位毫米）"""
    if model.is_calibrated:
        raise ConfigError("只能从解析模型采样查找表")
    return CalibrationTable.from_function(
        lambda theta: _analytic_radius(model.kind, theta, focal_mm), theta_max_deg, step_deg
    )


@dataclass(frozen=True)
class PolarCoord:
    """极坐标 (r, φ)，φ ∈ (−π, π]；r 只有作为鱼眼→透视变换的中间结果时才可能为负"""
    r: float
    phi: float


@dataclass(frozen=True)
class CartCoord:
    """以图像中心为原点的笛卡尔坐标（像素）"""
    x: float
    y: float


def _as_output(value: np.ndarray, like: Any):
    if np.ndim(like) == 0:
        return float(value)
    return value


def r_max(model: ProjectionModel, geom: CameraGeometry) -> float:
    """视场角边缘 θ_max 对应的最大成像半径（像素）"""
    return float(model.radius_px(geom.theta_max, geom))


def r_180(model: ProjectionModel, geom: CameraGeometry) -> Optional[float]:
    """θ = 90° 对应的半径；视场角不超过 180° 或模型无法到达 90° 时为 None"""
    if geom.fov_deg <= 180.0 or not bool(model.in_domain(HALF_PI)):
        return None
    return float(model.radius_px(HALF_PI, geom))


def project_theta(model: ProjectionModel, geom: CameraGeometry, theta: ArrayLike) -> ArrayLike:
    """入射角 θ（弧度）→ 成像半径（像素）

    Raises:
        ProjectionDomainError: θ 超出模型定义域
    """
    return _as_output(model.radius_px(theta, geom, strict=True), theta)


def unproject_radius(model: ProjectionModel, geom: CameraGeometry, r: ArrayLike) -> ArrayLike:
    """成像半径（像素）→ 入射角 θ（弧度）

    Raises:
        RadiusRangeError: r < 0 或 r > r_max
    """
    radius = np.asarray(r, dtype=np.float64)
    limit = r_max(model, geom)
    if np.any(radius < 0) or np.any(radius > limit * (1.0 + RADIUS_RTOL)):
        raise RadiusRangeError(f"半径超出 [0, r_max = {limit:.6f}] 范围")
    return _as_output(model.theta_of(radius, geom), r)


def normalize_angle(phi: ArrayLike) -> ArrayLike:
    """把角度归一化到 (−π, π]"""
    wrapped = np.mod(np.asarray(phi, dtype=np.float64) + math.pi, 2.0 * math.pi) - math.pi
    wrapped = np.where(wrapped <= -math.pi, wrapped + 2.0 * math.pi, wrapped)
    return _as_output(wrapped, phi)


def cart_to_polar(c: CartCoord) -> PolarCoord:
    """按符号分情况的笛卡尔 → 极坐标变换；原点处 φ 取 0"""
    x, y = float(c.x), float(c.y)
    r = math.hypot(x, y)
    if x > 0:
        phi = math.atan(y / x)
    elif x < 0 and y >= 0:
        phi = math.atan(y / x) + math.pi
    elif x < 0:
        phi = math.atan(y / x) - math.pi
    elif y != 0:
        phi = math.copysign(HALF_PI, y)
    else:
        phi = 0.0
    return PolarCoord(r, phi)


def polar_to_cart(p: PolarCoord) -> CartCoord:
    return CartCoord(p.r * math.cos(p.phi), p.r * math.sin(p.phi))


def fisheye_to_perspective(p: PolarCoord, model: ProjectionModel,
                           geom: CameraGeometry) -> PolarCoord:
    """鱼眼极坐标 → 透视极坐标: r_p = f·tan(θ(r_f))，φ 不变

    θ > 90° 时返回负半径。

    Raises:
        RadiusRangeError: r_f 超出 [0, r_max]
        SingularProjectionError: θ 距 π/2 小于 POLE_EPS
    """
    theta = unproject_radius(model, geom, p.r)
    if abs(theta - HALF_PI) < POLE_EPS:
        raise SingularProjectionError(f"r = {p.r} 位于 r_180 圆上，tan 无定义")
    return PolarCoord(geom.focal_px * math.tan(theta), p.phi)


def perspective_to_fisheye(p: PolarCoord, model: ProjectionModel,
                           geom: CameraGeometry) -> PolarCoord:
    """透视极坐标 → 鱼眼极坐标: r_f = r(arctan(r_p / f))，φ 不变"""
    if p.r < 0:
        raise RadiusRangeError(f"透视半径不能为负: {p.r}")
    theta = math.atan(p.r / geom.focal_px)
    return PolarCoord(project_theta(model, geom, theta), p.phi)


@dataclass(frozen=True)
class CompensatedCoord:
    """超广角补偿后单个坐标的结果

    Attributes:
        vector: 实际叠加的候选矢量（标记坐标取反）
        perspective: 叠加候选并极化后的透视坐标，φ 已做 −π 镜像
        fisheye: 重投影并做径向镜像后的鱼眼坐标
    """
    vector: Tuple[float, float]
    perspective: PolarCoord
    fisheye: PolarCoord


def ultra_wide_compensate(candidate: Tuple[float, float],
                          coords_p: Sequence[Tuple[PolarCoord, bool]],
                          model: ProjectionModel,
                          geom: CameraGeometry) -> List[CompensatedCoord]:
    """对透视域坐标应用候选矢量并执行超广角补偿

    被标记（鱼眼→透视得到负半径）的坐标: 候选矢量取反，极化后 φ' = φ − π，
    重投影后 r' = r + 2(r_180 − r)。未标记的坐标原样通过。

    Raises:
        UltraWideError: 存在标记坐标但模型没有 r_180
    """
    flagged_any = any(flag for _, flag in coords_p)
    radius_180 = r_180(model, geom)
    if flagged_any and radius_180 is None:
        raise UltraWideError("视场角不超过 180°，不应出现需要超广角补偿的坐标")

    dx, dy = candidate
    results = []
    for polar, flag in coords_p:
        vector = (-dx, -dy) if flag else (dx, dy)
        cart = polar_to_cart(polar)
        moved = cart_to_polar(CartCoord(cart.x + vector[0], cart.y + vector[1]))
        phi = normalize_angle(moved.phi - math.pi) if flag else moved.phi
        fish = perspective_to_fisheye(PolarCoord(moved.r, phi), model, geom)
        radius = fish.r + 2.0 * (radius_180 - fish.r) if flag else fish.r
        results.append(CompensatedCoord(vector, PolarCoord(moved.r, phi), PolarCoord(radius, phi)))
    return results


@dataclass(frozen=True, eq=False)
class PerspectiveCoords:
    """一组鱼眼像素坐标在透视域中的表示（按块预计算，所有候选复用）

    Attributes:
        xf, yf: 鱼眼笛卡尔坐标
        inside: 是否位于成像圆（r ≤ r_max）内
        xp, yp: 透视笛卡尔坐标，圆外为 0
        flags: 是否 θ > 90°（透视半径为负）
    """
    xf: np.ndarray
    yf: np.ndarray
    inside: np.ndarray
    xp: np.ndarray
    yp: np.ndarray
    flags: np.ndarray


def to_perspective_coords(xf: np.ndarray, yf: np.ndarray, model: ProjectionModel,
                          geom: CameraGeometry, invert_mirror: bool = False) -> PerspectiveCoords:
    """批量鱼眼 → 透视坐标变换

    成像圆外的坐标不参与变换（inside = False）。距 r_180 圆小于 POLE_EPS 的坐标
    归入 θ > 90° 一侧并标记，避免坐标缓冲区出现无穷大。

    invert_mirror 为 True 时，标记坐标的透视半径取超广角补偿径向镜像的逆:
    |r_p| = f·tan(θ(2·r_180 − r_f))，补偿流水线上的零候选精确回到 r_f。
    """
    xf = np.asarray(xf, dtype=np.float64)
    yf = np.asarray(yf, dtype=np.float64)
    radius_f = np.hypot(xf, yf)
    inside = radius_f <= r_max(model, geom) * (1.0 + RADIUS_RTOL)

    theta = model.theta_of(np.where(inside, radius_f, 0.0), geom)
    theta = np.where(np.abs(theta - HALF_PI) < POLE_EPS, HALF_PI + POLE_EPS, theta)
    flags = inside & (theta > HALF_PI)
    if flags.any() and r_180(model, geom) is None:
        raise UltraWideError("视场角不超过 180°，不应出现 θ > 90° 的坐标")
    radius_p = np.where(inside, geom.focal_px * np.tan(theta), 0.0)
    if invert_mirror and flags.any():
        radius_180 = r_180(model, geom)
        mirrored = np.maximum(2.0 * radius_180 - np.where(flags, radius_f, radius_180), 0.0)
        theta_mirror = np.minimum(model.theta_of(mirrored, geom), HALF_PI - POLE_EPS)
        radius_p = np.where(flags, -geom.focal_px * np.tan(theta_mirror), radius_p)

    # φ_p = φ_f，因此 x_p = r_p·cos φ_f = r_p·x_f / r_f
    scale = np.divide(radius_p, radius_f, out=np.zeros_like(radius_p), where=radius_f > 0)
    return PerspectiveCoords(xf=xf, yf=yf, inside=inside,
                             xp=scale * xf, yp=scale * yf, flags=flags)


def reproject_candidates(coords: PerspectiveCoords, dxs: np.ndarray, dys: np.ndarray,
                         model: ProjectionModel, geom: CameraGeometry,
                         compensate: bool) -> Tuple[np.ndarray, np.ndarray]:
    """把一组候选矢量叠加到透视坐标上并重投影回鱼眼域

    Args:
        coords: 预计算的透视坐标，长度 P
        dxs, dys: 候选矢量，长度 C
        compensate: 是否执行超广角补偿

    Returns:
        (xfm, yfm): 形状 (C, P) 的鱼眼坐标；成像圆外或超出模型定义域的位置为 NaN
    """
    dxs = np.asarray(dxs, dtype=np.float64)[:, None]
    dys = np.asarray(dys, dtype=np.float64)[:, None]
    flags = coords.flags[None, :]

    if compensate:
        sign = np.where(flags, -1.0, 1.0)
        xpm = coords.xp[None, :] + sign * dxs
        ypm = coords.yp[None, :] + sign * dys
    else:
        xpm = coords.xp[None, :] + dxs
        ypm = coords.yp[None, :] + dys

    radius_pm = np.hypot(xpm, ypm)
    radius_fm = model.radius_px(np.arctan(radius_pm / geom.focal_px), geom, strict=False)

    if compensate and coords.flags.any():
        radius_180 = r_180(model, geom)
        # φ' = φ − π 等价于方向取反
        radius_fm = np.where(flags, radius_fm + 2.0 * (radius_180 - radius_fm), radius_fm)
        radius_fm = np.where(flags, -radius_fm, radius_fm)

    scale = np.divide(radius_fm, radius_pm, out=np.zeros_like(radius_fm), where=radius_pm > 0)
    # 极点处 scale 为 0，r_fm 可能是 NaN（定义域外），需要保留
    scale = np.where(np.isnan(radius_fm), np.nan, scale)
    xfm = scale * xpm
    yfm = scale * ypm
    outside = ~coords.inside[None, :]
    xfm = np.where(outside, np.nan, xfm)
    yfm = np.where(outside, np.nan, yfm)
    return xfm, yfm
