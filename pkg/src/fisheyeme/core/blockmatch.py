"""
块匹配运动估计模块

全搜索块匹配的三类方法:
    - TME: 传统平移运动估计，在图像域搜索整数位移
    - EME / EME+: 等立体角重投影运动估计，候选矢量加在透视域坐标上，"+" 表示超广角补偿
    - CME / CME+: 同上，但使用标定查找表代替解析投影函数

以及按运动场做运动补偿预测。块之间相互独立，可以并行，结果与调度顺序无关。
"""
import csv
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from loguru import logger
from numpy.lib.stride_tricks import sliding_window_view
from tqdm import tqdm

from fisheyeme import config
from fisheyeme.core.frames import Frame, UpscaledFrame, sample_many, upscale
from fisheyeme.core.geometry import (
    CameraGeometry,
    PerspectiveCoords,
    ProjectionModel,
    reproject_candidates,
    to_perspective_coords,
)
from fisheyeme.errors import ConfigError, DimensionMismatchError, FrameIOError


class Method(str, Enum):
    TME = "tme"
    EME = "eme"
    EME_PLUS = "eme+"
    CME = "cme"
    CME_PLUS = "cme+"

    @property
    def is_projected(self) -> bool:
        return self is not Method.TME

    @property
    def compensates(self) -> bool:
        return self in (Method.EME_PLUS, Method.CME_PLUS)

    @property
    def needs_calibration(self) -> bool:
        return self in (Method.CME, Method.CME_PLUS)


class Metric(str, Enum):
    SSD = "ssd"
    SAD = "sad"


@dataclass
class SearchConfig:
    """运动估计配置

    Attributes:
        block_size: 块大小，取 8/16/32/64
        search_range: 搜索范围 s，候选数为 (2s+1)²
        precision: 亚像素精度分母（上采样因子）
        metric: 匹配代价 SSD 或 SAD
        method: 估计方法
        max_workers: 块级并行线程数，None 表示使用 CPU 核心数
        show_progress: 是否显示 tqdm 进度条
    """
    block_size: int = config.DEFAULT_BLOCK_SIZE
    search_range: int = config.DEFAULT_SEARCH_RANGE
    precision: int = config.DEFAULT_PRECISION
    metric: Metric = Metric(config.DEFAULT_METRIC)
    method: Method = Method(config.DEFAULT_METHOD)
    max_workers: Optional[int] = None
    show_progress: bool = False

    def __post_init__(self):
        self.metric = Metric(self.metric)
        self.method = Method(self.method)
        if self.block_size not in config.ALLOWED_BLOCK_SIZES:
            raise ConfigError(f"块大小必须是 {config.ALLOWED_BLOCK_SIZES} 之一: {self.block_size}")
        if self.search_range <= 0:
            raise ConfigError(f"搜索范围必须为正: {self.search_range}")
        if self.precision < 1:
            raise ConfigError(f"亚像素精度必须 ≥ 1: {self.precision}")
        if self.max_workers is not None and self.max_workers < 1:
            raise ConfigError(f"线程数必须 ≥ 1: {self.max_workers}")

    @property
    def candidate_count(self) -> int:
        return (2 * self.search_range + 1) ** 2

    @property
    def workers(self) -> int:
        return self.max_workers or config.DEFAULT_MAX_WORKERS

    def to_dict(self) -> Dict[str, Any]:
        return {
            'block_size': self.block_size,
            'search_range': self.search_range,
            'precision': self.precision,
            'metric': self.metric.value,
            'method': self.method.value,
            'max_workers': self.max_workers,
            'show_progress': self.show_progress,
        }

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> 'SearchConfig':
        known = {k: v for k, v in config_dict.items() if k in cls().to_dict()}
        return cls(**known)


class MotionVector(NamedTuple):
    dx: int
    dy: int


class BlockCoords(NamedTuple):
    """块左上角与尺寸（图像坐标，边缘块可能不满）"""
    x0: int
    y0: int
    width: int
    height: int


def block_grid(height: int, width: int, block_size: int) -> List[Tuple[int, int, BlockCoords]]:
    """按光栅顺序返回 (by, bx, BlockCoords)，块数为 ceil(尺寸 / block_size)"""
    blocks = []
    for by in range(-(-height // block_size)):
        for bx in range(-(-width // block_size)):
            x0, y0 = bx * block_size, by * block_size
            blocks.append((by, bx, BlockCoords(x0, y0, min(block_size, width - x0),
                                               min(block_size, height - y0))))
    return blocks


def grid_shape(height: int, width: int, block_size: int) -> Tuple[int, int]:
    return -(-height // block_size), -(-width // block_size)


def method_grid(shape: Tuple[int, int], method: Union[Method, str]) -> np.ndarray:
    """每块方法网格，元素为 Method 成员

    Method 是 str 子类，np.full 会把它当作字符串标量并按 dtype 截断，这里逐格赋值。
    """
    grid = np.empty(shape, dtype=object)
    grid[...] = Method(method)
    return grid


@dataclass(frozen=True, eq=False)
class MotionField:
    """块运动场

    Attributes:
        width, height: 帧尺寸
        config: 估计时的配置
        vectors: (blocks_y, blocks_x, 2) 整数矢量 (dx, dy)；投影方法为透视域偏移
        costs: (blocks_y, blocks_x) 最优代价
        skipped: 完全位于成像圆外而跳过的块
        methods: 每块实际使用的方法（混合估计时不唯一）
    """
    width: int
    height: int
    config: SearchConfig
    vectors: np.ndarray
    costs: np.ndarray
    skipped: np.ndarray
    methods: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.methods is None:
            methods = method_grid(self.costs.shape, self.config.method)
            object.__setattr__(self, 'methods', methods)

    @property
    def blocks_y(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def blocks_x(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def method(self) -> Method:
        return self.config.method

    @property
    def is_hybrid(self) -> bool:
        return len({m for m in self.methods.flat}) > 1

    def vector(self, by: int, bx: int) -> MotionVector:
        dx, dy = self.vectors[by, bx]
        return MotionVector(int(dx), int(dy))

    def blocks(self) -> List[Tuple[int, int, BlockCoords]]:
        return block_grid(self.height, self.width, self.config.block_size)

    def same_vectors(self, other: 'MotionField') -> bool:
        return self.vectors.shape == other.vectors.shape and bool(np.all(self.vectors == other.vectors))


def _metric_cost(diff: np.ndarray, metric: Metric, axis) -> np.ndarray:
    if metric is Metric.SAD:
        return np.abs(diff).sum(axis=axis)
    return np.square(diff).sum(axis=axis)


def candidate_offsets(search_range: int) -> Tuple[np.ndarray, np.ndarray]:
    """候选矢量 (dxs, dys)，光栅顺序: dy 外层、dx 内层，均从 −s 递增"""
    side = 2 * search_range + 1
    dys, dxs = np.divmod(np.arange(side * side), side)
    return dxs - search_range, dys - search_range


def select_best(costs: np.ndarray, dxs: np.ndarray, dys: np.ndarray) -> int:
    """最小代价；并列时取 |dx|+|dy| 最小者，再并列取光栅顺序第一个"""
    best = costs.min()
    tied = np.flatnonzero(costs == best)
    l1 = np.abs(dxs[tied]) + np.abs(dys[tied])
    return int(tied[np.argmin(l1)])


class ProjectionPipeline:
    """鱼眼 → 透视 → 叠加候选 → 重投影的坐标流水线，运动估计、补偿和稠密化共用"""

    def __init__(self, model: ProjectionModel, geom: CameraGeometry, method: Method):
        method = Method(method)
        if not method.is_projected:
            raise ConfigError("TME 不需要投影流水线")
        if method.needs_calibration and not model.is_calibrated:
            raise ConfigError(f"{method.value} 需要标定模型（--calib）")
        if not method.needs_calibration and model.is_calibrated:
            raise ConfigError(f"{method.value} 使用解析模型，标定模型请选择 cme/cme+")
        self.model = model
        self.geom = geom
        self.method = method
        self.compensate = method.compensates

    def check_frame(self, frame: Frame) -> None:
        if (frame.width, frame.height) != (self.geom.width_px, self.geom.height_px):
            raise DimensionMismatchError(
                f"帧尺寸 {frame.width}x{frame.height} 与几何参数 "
                f"{self.geom.width_px}x{self.geom.height_px} 不一致"
            )

    def block_coords(self, block: BlockCoords) -> PerspectiveCoords:
        """块内像素（光栅顺序）的透视域坐标"""
        cx, cy = self.geom.center
        xs = np.arange(block.x0, block.x0 + block.width, dtype=np.float64) - cx
        ys = np.arange(block.y0, block.y0 + block.height, dtype=np.float64) - cy
        grid_x, grid_y = np.meshgrid(xs, ys)
        return to_perspective_coords(grid_x.ravel(), grid_y.ravel(), self.model, self.geom,
                                     invert_mirror=self.compensate)

    def displace(self, coords: PerspectiveCoords, dxs: np.ndarray,
                 dys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return reproject_candidates(coords, dxs, dys, self.model, self.geom, self.compensate)


def _shifted_block(luma: np.ndarray, block: BlockCoords, dx: int, dy: int) -> np.ndarray:
    """读取位移后的参考块，帧外为 0"""
    height, width = luma.shape
    ys = np.arange(block.y0, block.y0 + block.height) + dy
    xs = np.arange(block.x0, block.x0 + block.width) + dx
    valid_y = (ys >= 0) & (ys < height)
    valid_x = (xs >= 0) & (xs < width)
    out = np.zeros((block.height, block.width), dtype=np.float64)
    out[np.ix_(valid_y, valid_x)] = luma[np.ix_(ys[valid_y], xs[valid_x])]
    return out


def _current_block(cur: Frame, block: BlockCoords) -> np.ndarray:
    return cur.luma[block.y0:block.y0 + block.height, block.x0:block.x0 + block.width]


def block_cost(cur: Frame, ref_up: UpscaledFrame, block: BlockCoords,
               candidate: Tuple[int, int], metric: Union[Metric, str] = Metric.SSD,
               method: Union[Method, str] = Method.TME,
               model: Optional[ProjectionModel] = None,
               geom: Optional[CameraGeometry] = None) -> float:
    """单个候选矢量的匹配代价

    TME 在上采样网格的整数节点上取参考值；投影方法走完整的坐标流水线。
    帧外参考位置取 0。
    """
    metric = Metric(metric)
    method = Method(method)
    dx, dy = candidate
    current = _current_block(cur, block)
    if method.is_projected:
        if model is None or geom is None:
            raise ConfigError(f"{method.value} 需要投影模型和几何参数")
        pipeline = ProjectionPipeline(model, geom, method)
        coords = pipeline.block_coords(block)
        xfm, yfm = pipeline.displace(coords, np.array([dx]), np.array([dy]))
        predicted = sample_many(ref_up, xfm[0], yfm[0]).reshape(current.shape)
    else:
        cx, cy = cur.center
        xs = np.arange(block.x0, block.x0 + block.width, dtype=np.float64) - cx + dx
        ys = np.arange(block.y0, block.y0 + block.height, dtype=np.float64) - cy + dy
        grid_x, grid_y = np.meshgrid(xs, ys)
        predicted = sample_many(ref_up, grid_x, grid_y)
    return float(_metric_cost(current - predicted, metric, axis=None))


class BlockPredictor:
    """参考帧一侧的预测器：TME 直接取整数位移，投影方法在上采样网格上采样"""

    def __init__(self, ref: Frame, precision: int, pipeline: Optional[ProjectionPipeline] = None):
        self.ref = ref
        self.pipeline = pipeline
        self.ref_up = upscale(ref, precision) if pipeline is not None else None

    def predict(self, block: BlockCoords, method: Method, vector: Tuple[int, int]) -> np.ndarray:
        dx, dy = int(vector[0]), int(vector[1])
        if not Method(method).is_projected:
            return _shifted_block(self.ref.luma, block, dx, dy)
        coords = self.pipeline.block_coords(block)
        xfm, yfm = self.pipeline.displace(coords, np.array([dx]), np.array([dy]))
        return sample_many(self.ref_up, xfm[0], yfm[0]).reshape(block.height, block.width)


class BlockMatcher(BlockPredictor):
    """对一对帧执行全搜索块匹配"""

    def __init__(self, cur: Frame, ref: Frame, cfg: SearchConfig,
                 pipeline: Optional[ProjectionPipeline] = None):
        if not cur.same_shape(ref):
            raise DimensionMismatchError(
                f"当前帧 {cur.width}x{cur.height} 与参考帧 {ref.width}x{ref.height} 尺寸不一致"
            )
        if pipeline is not None:
            pipeline.check_frame(cur)
        super().__init__(ref, cfg.precision, pipeline)
        self.cur = cur
        self.cfg = cfg
        self._padded = np.pad(ref.luma, cfg.search_range)
        self._dxs, self._dys = candidate_offsets(cfg.search_range)

    def _search_tme(self, block: BlockCoords) -> Tuple[int, int, float, bool]:
        s = self.cfg.search_range
        side = 2 * s + 1
        current = _current_block(self.cur, block)
        window = self._padded[block.y0:block.y0 + block.height + 2 * s,
                              block.x0:block.x0 + block.width + 2 * s]
        view = sliding_window_view(window, (block.height, block.width))
        rows_per_chunk = max(1, config.CANDIDATE_CHUNK_ELEMENTS // (side * current.size))
        costs = np.empty((side, side), dtype=np.float64)
        for start in range(0, side, rows_per_chunk):
            stop = min(start + rows_per_chunk, side)
            costs[start:stop] = _metric_cost(view[start:stop] - current, self.cfg.metric, axis=(-2, -1))
        flat = costs.ravel()
        best = select_best(flat, self._dxs, self._dys)
        return int(self._dxs[best]), int(self._dys[best]), float(flat[best]), False

    def _search_projected(self, block: BlockCoords) -> Tuple[int, int, float, bool]:
        coords = self.pipeline.block_coords(block)
        if not coords.inside.any():
            return 0, 0, 0.0, True

        current = _current_block(self.cur, block).ravel()
        inside = coords.inside
        # 圆外像素的预测恒为 0，代价与候选无关
        outside_cost = float(_metric_cost(current[~inside], self.cfg.metric, axis=None))
        sub = PerspectiveCoords(xf=coords.xf[inside], yf=coords.yf[inside],
                                inside=inside[inside], xp=coords.xp[inside],
                                yp=coords.yp[inside], flags=coords.flags[inside])
        target = current[inside]

        count = self._dxs.size
        chunk = max(1, config.CANDIDATE_CHUNK_ELEMENTS // target.size)
        costs = np.empty(count, dtype=np.float64)
        for start in range(0, count, chunk):
            stop = min(start + chunk, count)
            xfm, yfm = self.pipeline.displace(sub, self._dxs[start:stop], self._dys[start:stop])
            predicted = sample_many(self.ref_up, xfm, yfm)
            costs[start:stop] = _metric_cost(predicted - target[None, :], self.cfg.metric, axis=1)
        costs += outside_cost
        best = select_best(costs, self._dxs, self._dys)
        return int(self._dxs[best]), int(self._dys[best]), float(costs[best]), False

    def search_block(self, block: BlockCoords, method: Method) -> Tuple[int, int, float, bool]:
        if Method(method).is_projected:
            return self._search_projected(block)
        return self._search_tme(block)

    def run(self, methods: np.ndarray) -> MotionField:
        """按块搜索，methods 为每块的方法网格"""
        blocks = block_grid(self.cur.height, self.cur.width, self.cfg.block_size)
        shape = grid_shape(self.cur.height, self.cur.width, self.cfg.block_size)
        vectors = np.zeros(shape + (2,), dtype=np.int64)
        costs = np.zeros(shape, dtype=np.float64)
        skipped = np.zeros(shape, dtype=bool)

        total = len(blocks)
        label = f"运动估计 {self.cfg.method.value}"
        logger.info(f"[#status] 🔍 {label}: {total} 块, 候选 {self.cfg.candidate_count}, "
                    f"线程数 {self.cfg.workers}")

        def store(index: int, result: Tuple[int, int, float, bool]) -> None:
            by, bx, _ = blocks[index]
            dx, dy, cost, skip = result
            vectors[by, bx] = (dx, dy)
            costs[by, bx] = cost
            skipped[by, bx] = skip

        step = max(1, total // 10)
        progress = tqdm(total=total, desc=label, disable=not self.cfg.show_progress)
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as executor:
            future_to_index = {
                executor.submit(self.search_block, block, methods[by, bx]): i
                for i, (by, bx, block) in enumerate(blocks)
            }
            for done, future in enumerate(as_completed(future_to_index), start=1):
                store(future_to_index[future], future.result())
                progress.update(1)
                if done % step == 0 or done == total:
                    logger.debug(f"[@progress] {label} ({done}/{total}) {int(done / total * 100)}%")
        progress.close()

        if skipped.any():
            logger.debug(f"[#status] 跳过成像圆外的块: {int(skipped.sum())}")
        return MotionField(width=self.cur.width, height=self.cur.height, config=self.cfg,
                           vectors=vectors, costs=costs, skipped=skipped,
                           methods=np.array(methods, dtype=object))


def _method_grid(cur: Frame, cfg: SearchConfig, method: Method) -> np.ndarray:
    shape = grid_shape(cur.height, cur.width, cfg.block_size)
    return method_grid(shape, method)


def estimate_tme(cur: Frame, ref: Frame, cfg: SearchConfig) -> MotionField:
    """传统平移全搜索"""
    cfg = replace(cfg, method=Method.TME)
    matcher = BlockMatcher(cur, ref, cfg)
    return matcher.run(_method_grid(cur, cfg, Method.TME))


def estimate_projected(cur: Frame, ref: Frame, cfg: SearchConfig, model: ProjectionModel,
                       geom: CameraGeometry) -> MotionField:
    """重投影全搜索（EME/EME+ 用解析模型，CME/CME+ 用标定模型），矢量位于透视域

    Raises:
        ConfigError: 方法为 TME 或与模型不匹配
        DimensionMismatchError: 帧尺寸与几何参数不一致
    """
    if not cfg.method.is_projected:
        raise ConfigError("estimate_projected 不支持 TME，请使用 estimate_tme")
    pipeline = ProjectionPipeline(model, geom, cfg.method)
    matcher = BlockMatcher(cur, ref, cfg, pipeline)
    return matcher.run(_method_grid(cur, cfg, cfg.method))


def estimate_hybrid(cur: Frame, ref: Frame, cfg: SearchConfig, model: ProjectionModel,
                    geom: CameraGeometry, adapted_mask: np.ndarray) -> MotionField:
    """按块混合估计：adapted_mask 为 True 的块用 cfg.method，其余用 TME"""
    if not cfg.method.is_projected:
        raise ConfigError("混合估计需要投影方法")
    shape = grid_shape(cur.height, cur.width, cfg.block_size)
    adapted_mask = np.asarray(adapted_mask, dtype=bool)
    if adapted_mask.shape != shape:
        raise DimensionMismatchError(f"块掩码形状 {adapted_mask.shape} 与块网格 {shape} 不一致")
    methods = _method_grid(cur, cfg, Method.TME)
    methods[adapted_mask] = cfg.method
    pipeline = ProjectionPipeline(model, geom, cfg.method)
    matcher = BlockMatcher(cur, ref, cfg, pipeline)
    logger.debug(f"[#status] 混合估计: {int(adapted_mask.sum())}/{adapted_mask.size} 块使用 {cfg.method.value}")
    return matcher.run(methods)


def estimate(cur: Frame, ref: Frame, cfg: SearchConfig, model: Optional[ProjectionModel] = None,
             geom: Optional[CameraGeometry] = None,
             adapted_mask: Optional[np.ndarray] = None) -> MotionField:
    """按 cfg.method 分派"""
    if not cfg.method.is_projected:
        return estimate_tme(cur, ref, cfg)
    if model is None or geom is None:
        raise ConfigError(f"{cfg.method.value} 需要投影模型和几何参数")
    if adapted_mask is not None:
        return estimate_hybrid(cur, ref, cfg, model, geom, adapted_mask)
    return estimate_projected(cur, ref, cfg, model, geom)


def compensate(ref: Frame, field: MotionField, model: Optional[ProjectionModel] = None,
               geom: Optional[CameraGeometry] = None) -> Frame:
    """按运动场从参考帧生成运动补偿预测帧

    每块按记录的方法重放获胜候选的坐标流水线；跳过的块输出 0。
    """
    if (ref.width, ref.height) != (field.width, field.height):
        raise DimensionMismatchError(
            f"参考帧 {ref.width}x{ref.height} 与运动场 {field.width}x{field.height} 尺寸不一致"
        )
    pipeline = None
    if any(Method(m).is_projected for m in field.methods.flat):
        if model is None or geom is None:
            raise ConfigError("投影运动场的补偿需要投影模型和几何参数")
        pipeline = ProjectionPipeline(model, geom, field.config.method)
        pipeline.check_frame(ref)

    predictor = BlockPredictor(ref, field.config.precision, pipeline)
    output = np.zeros((ref.height, ref.width), dtype=np.float64)
    for by, bx, block in field.blocks():
        if field.skipped[by, bx]:
            continue
        output[block.y0:block.y0 + block.height, block.x0:block.x0 + block.width] = \
            predictor.predict(block, field.methods[by, bx], field.vectors[by, bx])
    return Frame(output)


def save_motion_field(field: MotionField, path: Union[str, os.PathLike]) -> None:
    """写出运动场 CSV，每块一行"""
    cfg = field.config
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(config.MOTION_CSV_HEADER.split(','))
        for by, bx, _ in field.blocks():
            dx, dy = field.vectors[by, bx]
            writer.writerow([bx, by, int(dx), int(dy), f"{field.costs[by, bx]:.6f}",
                             int(field.skipped[by, bx]), Method(field.methods[by, bx]).value,
                             cfg.block_size, cfg.search_range, cfg.precision])
    logger.info(f"[#success] ✅ 运动场已写入 {path}")


def load_motion_field(path: Union[str, os.PathLike], width: Optional[int] = None,
                      height: Optional[int] = None,
                      metric: Union[Metric, str] = Metric.SSD) -> MotionField:
    """读取运动场 CSV

    CSV 不记录帧尺寸；未给出时取块数 × 块大小。
    """
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise FrameIOError(f"无法读取运动场 {path}: {e}") from e
    expected = config.MOTION_CSV_HEADER.split(',')
    if not rows or list(rows[0].keys()) != expected:
        raise FrameIOError(f"运动场文件格式错误: {path}")

    try:
        block, search_range, precision = (int(rows[0][k]) for k in ('block', 'range', 'precision'))
        blocks_x = max(int(r['bx']) for r in rows) + 1
        blocks_y = max(int(r['by']) for r in rows) + 1
        methods = method_grid((blocks_y, blocks_x), Method.TME)
        vectors = np.zeros((blocks_y, blocks_x, 2), dtype=np.int64)
        costs = np.zeros((blocks_y, blocks_x), dtype=np.float64)
        skipped = np.zeros((blocks_y, blocks_x), dtype=bool)
        for r in rows:
            by, bx = int(r['by']), int(r['bx'])
            vectors[by, bx] = (int(r['dx']), int(r['dy']))
            costs[by, bx] = float(r['cost'])
            skipped[by, bx] = bool(int(r['skipped']))
            methods[by, bx] = Method(r['method'])
    except (KeyError, ValueError) as e:
        raise FrameIOError(f"运动场文件数据无法解析 {path}: {e}") from e

    projected = [m for m in methods.flat if m.is_projected]
    cfg = SearchConfig(block_size=block, search_range=search_range, precision=precision,
                       metric=metric, method=projected[0] if projected else Method.TME)
    width = width if width is not None else blocks_x * block
    height = height if height is not None else blocks_y * block
    if grid_shape(height, width, block) != (blocks_y, blocks_x):
        raise DimensionMismatchError(f"帧尺寸 {width}x{height} 与运动场块网格 {blocks_x}x{blocks_y} 不符")
    return MotionField(width=width, height=height, config=cfg, vectors=vectors,
                       costs=costs, skipped=skipped, methods=methods)
