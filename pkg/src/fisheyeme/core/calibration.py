"""
标定查找表模块

查找表按固定角度步长（默认 0.01°）记录 θ → r（毫米）。正向用线性插值，
反向在单调递增的半径列上二分查找再线性插值（np.interp）。
"""
import csv
import os
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from fisheyeme import config
from fisheyeme.errors import (
    CalibrationMonotonicityError,
    CalibrationParseError,
    ProjectionDomainError,
)

# 步长一致性检查的容差（度）
STEP_TOLERANCE_DEG = 1e-6


@dataclass(frozen=True, eq=False)
class CalibrationTable:
    """单调的 θ → r 采样表

    Attributes:
        theta_step_deg: 角度步长（度）
        theta_deg: 角度列（度），从 0 开始等间距递增
        r_mm: 半径列（毫米），严格递增
    """
    theta_step_deg: float
    theta_deg: np.ndarray
    r_mm: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta_deg, dtype=np.float64)
        radius = np.asarray(self.r_mm, dtype=np.float64)
        if theta.ndim != 1 or theta.shape != radius.shape:
            raise CalibrationParseError("角度列与半径列长度不一致")
        if theta.size < 2:
            raise CalibrationParseError("查找表至少需要两行")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(radius))):
            raise CalibrationParseError("查找表含有非有限值")
        if self.theta_step_deg <= 0:
            raise CalibrationParseError(f"角度步长必须为正: {self.theta_step_deg}")
        if theta[0] != 0.0 or radius[0] != 0.0:
            raise CalibrationParseError(
                f"第一行必须是 θ = 0, r = 0，实际为 ({theta[0]}, {radius[0]})"
            )
        steps = np.diff(theta)
        if np.any(np.abs(steps - self.theta_step_deg) > STEP_TOLERANCE_DEG):
            raise CalibrationParseError(f"角度列不是步长 {self.theta_step_deg}° 的等间距序列")
        bad = np.flatnonzero(np.diff(radius) <= 0)
        if bad.size:
            row = int(bad[0]) + 1
            raise CalibrationMonotonicityError(
                f"半径在第 {row} 行 (θ = {theta[row]:.4f}°) 不再严格递增，标定结果不可用"
            )
        theta.setflags(write=False)
        radius.setflags(write=False)
        object.__setattr__(self, 'theta_deg', theta)
        object.__setattr__(self, 'r_mm', radius)

    def __len__(self) -> int:
        return int(self.theta_deg.size)

    @property
    def entries(self) -> List[Tuple[float, float]]:
        return list(zip(self.theta_deg.tolist(), self.r_mm.tolist()))

    @property
    def theta_max_deg(self) -> float:
        return float(self.theta_deg[-1])

    @property
    def r_max_mm(self) -> float:
        return float(self.r_mm[-1])

    def covers(self, theta_rad) -> np.ndarray:
        """θ（弧度）是否落在查找表的定义域内"""
        theta_deg = np.degrees(np.asarray(theta_rad, dtype=np.float64))
        return (theta_deg >= 0.0) & (theta_deg <= self.theta_max_deg + STEP_TOLERANCE_DEG)

    def radius_mm(self, theta_rad) -> np.ndarray:
        """正向映射 θ（弧度）→ r（毫米），线性插值"""
        theta_deg = np.degrees(np.asarray(theta_rad, dtype=np.float64))
        return np.interp(theta_deg, self.theta_deg, self.r_mm)

    def theta_rad(self, r_mm) -> np.ndarray:
        """反向映射 r（毫米）→ θ（弧度），二分查找 + 线性插值"""
        r = np.asarray(r_mm, dtype=np.float64)
        return np.radians(np.interp(r, self.r_mm, self.theta_deg))

    @classmethod
    def from_function(cls, radius_of_theta: Callable[[np.ndarray], np.ndarray],
                      theta_max_deg: float,
                      step_deg: float = config.DEFAULT_LUT_STEP_DEG) -> 'CalibrationTable':
        """按固定步长对任意 θ（弧度）→ r（毫米）函数采样"""
        if theta_max_deg <= 0:
            raise CalibrationParseError(f"最大角度必须为正: {theta_max_deg}")
        count = int(round(theta_max_deg / step_deg)) + 1
        theta_deg = np.round(np.arange(count) * step_deg, 10)
        radius = np.asarray(radius_of_theta(np.radians(theta_deg)), dtype=np.float64)
        radius[0] = 0.0
        return cls(theta_step_deg=step_deg, theta_deg=theta_deg, r_mm=radius)

    @classmethod
    def from_polynomial(cls, coeffs: Sequence[float], theta_max_deg: float,
                        step_deg: float = config.DEFAULT_LUT_STEP_DEG) -> 'CalibrationTable':
        """由标定多项式 r = Σ aᵢ θⁱ（θ 为弧度，r 为毫米）生成查找表

        Args:
            coeffs: 系数 a₀, a₁, ..., aₙ（升幂）
        """
        coeffs = [float(c) for c in coeffs]
        if not coeffs:
            raise CalibrationParseError("多项式系数为空")
        # np.polyval 要求降幂
        descending = coeffs[::-1]
        return cls.from_function(lambda theta: np.polyval(descending, theta),
                                 theta_max_deg, step_deg)


def load_calibration(path: Union[str, os.PathLike]) -> CalibrationTable:
    """读取标定查找表 CSV

    文件格式: 首行为表头 "theta_deg,r_mm"，之后每行一对 "theta_deg,r"，θ 递增且等步长。

    Raises:
        CalibrationParseError: 文件不存在、为空、表头错误或数据无法解析
        CalibrationMonotonicityError: 半径不是严格递增
    """
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            records = [
                (number, [field.strip() for field in row])
                for number, row in enumerate(csv.reader(f, skipinitialspace=True), start=1)
                if any(field.strip() for field in row)
            ]
    except (OSError, csv.Error) as e:
        raise CalibrationParseError(f"无法读取标定文件 {path}: {e}") from e

    if not records:
        raise CalibrationParseError(f"标定文件为空: {path}")
    header = ','.join(field.replace(' ', '').lower() for field in records[0][1])
    if header != config.CALIBRATION_HEADER:
        raise CalibrationParseError(
            f"标定文件表头应为 '{config.CALIBRATION_HEADER}'，实际为 '{','.join(records[0][1])}'"
        )

    rows = []
    for number, fields in records[1:]:
        if len(fields) != 2:
            raise CalibrationParseError(f"{path} 第 {number} 行应有两列: {fields}")
        try:
            rows.append((float(fields[0]), float(fields[1])))
        except ValueError as e:
            raise CalibrationParseError(f"{path} 第 {number} 行无法解析: {fields}") from e
    if len(rows) < 2:
        raise CalibrationParseError(f"标定文件数据行不足: {path}")

    data = np.asarray(rows, dtype=np.float64)
    steps = np.diff(data[:, 0])
    step = float(np.round(np.median(steps), 10))
    table = CalibrationTable(theta_step_deg=step, theta_deg=data[:, 0], r_mm=data[:, 1])
    logger.info(
        f"[#status] 📐 已加载标定表 {os.path.basename(str(path))}: {len(table)} 行, "
        f"步长 {step}°, θ_max = {table.theta_max_deg}°"
    )
    return table


def save_calibration(table: CalibrationTable, path: Union[str, os.PathLike]) -> None:
    """以完整浮点精度写出标定查找表"""
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(config.CALIBRATION_HEADER + '\n')
        for theta, radius in zip(table.theta_deg.tolist(), table.r_mm.tolist()):
            f.write(f"{theta!r},{radius!r}\n")


def require_coverage(table: CalibrationTable, theta_rad) -> None:
    """θ（弧度，标量或数组）必须全部落在查找表定义域内

    Raises:
        ProjectionDomainError: 报告第一个超出范围的 θ
    """
    covered = np.asarray(table.covers(theta_rad))
    if not np.all(covered):
        bad = float(np.asarray(theta_rad, dtype=np.float64)[~covered].flat[0])
        raise ProjectionDomainError(
            f"θ = {np.degrees(bad):.4f}° 超出标定表范围 [0, {table.theta_max_deg}°]"
        )
