"""
fisheyeme 命令行功能实现

每个子命令返回退出码；异常由 __main__ 统一映射（ConfigError → 1，其余数据错误 → 2）。
CSV 结果写到标准输出或 -o 指定的文件，日志走标准错误。
"""
import csv
import glob
import io
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

from loguru import logger

from fisheyeme import config
from fisheyeme.core.blockmatch import (
    Method,
    Metric,
    MotionField,
    SearchConfig,
    compensate,
    estimate,
    load_motion_field,
    save_motion_field,
)
from fisheyeme.core.calibration import load_calibration
from fisheyeme.core.frames import (
    CircularMask,
    Frame,
    crop_frame,
    load_frame,
    make_mask,
    pad_to_square,
    save_frame,
)
from fisheyeme.core.fruc import Adapt, FrucConfig, FrucMode, interpolate_detailed
from fisheyeme.core.geometry import CameraGeometry, ProjectionModel
from fisheyeme.core.metrics import MetricReport, aggregate, error_map, evaluate, format_psnr
from fisheyeme.core.synth import (
    SynthSpec,
    generate,
    make_texture,
    required_source_size,
    write_sequence,
)
from fisheyeme.errors import ConfigError, FisheyeError, FrameIOError, ManifestError

FRAME_SUFFIXES = ('.png', '.pgm')
REPORT_HEADER = "pair,reference,current,psnr_db,ssim,masked_pixels,inf_count"
SEQUENCE_HEADER = "pair,psnr_db,ssim,masked_pixels,inf_count"


class Models(NamedTuple):
    """解析模型（等立体角）与可选的标定模型"""
    analytic: ProjectionModel
    calibrated: Optional[ProjectionModel]

    def for_method(self, method: Method) -> Optional[ProjectionModel]:
        if not method.is_projected:
            return None
        if method.needs_calibration:
            if self.calibrated is None:
                raise ConfigError(f"{method.value} 需要通过 --calib 提供标定查找表")
            return self.calibrated
        return self.analytic

    def for_adapt(self, adapt: Adapt) -> Optional[ProjectionModel]:
        return self.for_method(adapt.method)

    @property
    def mask_model(self) -> ProjectionModel:
        return self.calibrated or self.analytic


@dataclass
class RunManifest:
    """批处理清单: 按顺序的 (参考帧, 当前帧) 路径对与共享配置"""
    pairs: List[Tuple[str, str]]
    search: SearchConfig = field(default_factory=SearchConfig)
    calib_path: Optional[str] = None

    def __post_init__(self):
        if not self.pairs:
            raise ManifestError("清单中没有帧对")
        missing = [p for pair in self.pairs for p in pair if not os.path.isfile(p)]
        if missing:
            raise ManifestError(f"清单中的文件不存在: {', '.join(missing)}")
        if self.calib_path is not None and not os.path.isfile(self.calib_path):
            raise ManifestError(f"标定文件不存在: {self.calib_path}")


def load_manifest(path: str, search: SearchConfig, calib_path: Optional[str] = None) -> RunManifest:
    """读取清单文件，每行 "reference,current"，相对路径相对清单所在目录

    空行与 # 开头的行忽略，首行可以是表头 "reference,current"。
    """
    if not os.path.isfile(path):
        raise ManifestError(f"清单文件不存在: {path}")
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, 'r', encoding='utf-8') as f:
        for number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue
            parts = [p.strip() for p in line.split(',')]
            if len(parts) != 2:
                raise ManifestError(f"{path} 第 {number} 行应为 'reference,current': '{line}'")
            if number == 1 and [p.lower() for p in parts] == ['reference', 'current']:
                continue
            pairs.append(tuple(os.path.join(base, p) for p in parts))
    return RunManifest(pairs=pairs, search=search, calib_path=calib_path)


def _search_config(args, method: Optional[str] = None) -> SearchConfig:
    return SearchConfig(
        block_size=args.block,
        search_range=args.range,
        precision=args.precision,
        metric=Metric(args.metric),
        method=Method(method or getattr(args, 'method', config.DEFAULT_METHOD)),
        max_workers=args.jobs,
        show_progress=getattr(args, 'progress', False),
    )


def _geometry(args, frame: Frame) -> CameraGeometry:
    return CameraGeometry(focal_mm=args.focal_mm, fov_deg=args.fov, sensor_mm=args.sensor_mm,
                          width_px=frame.width, height_px=frame.height)


def _models(args) -> Models:
    calibrated = None
    if getattr(args, 'calib', None):
        calibrated = ProjectionModel.calibrated(load_calibration(args.calib))
    return Models(ProjectionModel.equisolid(), calibrated)


def _load_inputs(paths: Sequence[str], args) -> Tuple[List[Frame], Tuple[int, int]]:
    """读取帧，可选补零为正方形；返回帧与原始 (height, width)"""
    frames = [load_frame(p) for p in paths]
    original = frames[0].shape
    for path, frame in zip(paths, frames):
        if frame.shape != original:
            raise FrameIOError(f"输入帧尺寸不一致: {path} 为 {frame.width}x{frame.height}")
    if getattr(args, 'pad_square', False):
        frames = [pad_to_square(f) for f in frames]
        if frames[0].shape != original:
            logger.info(f"[#status] 补零 {original[1]}x{original[0]} → {frames[0].width}x{frames[0].height}")
    return frames, original


def _mask(args, models: Models, geom: CameraGeometry) -> CircularMask:
    return make_mask(geom, models.mask_model, args.mask_fov)


def _report_row(index, reference: str, current: str, report: MetricReport) -> List:
    return [index, reference, current, report.psnr_text, f"{report.ssim:.6f}",
            report.pixel_count, int(report.is_identical)]


def _mean_row(reports: Sequence[MetricReport], width: int) -> List:
    summary = aggregate(reports)
    psnr_text = format_psnr(summary.mean_psnr_db) if summary.mean_psnr_db is not None else "nan"
    row = ["mean", psnr_text, f"{summary.mean_ssim:.6f}", summary.pixel_count, summary.inf_count]
    # 与明细行对齐
    return row[:1] + [""] * (width - len(row)) + row[1:]


def _emit_csv(header: str, rows: Sequence[Sequence], out: Optional[str]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header.split(','))
    writer.writerows(rows)
    text = buffer.getvalue()
    if out:
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        with open(out, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        logger.info(f"[#success] ✅ 结果已写入 {out}")
    else:
        sys.stdout.write(text)


def estimate_pair(ref: Frame, cur: Frame, args, models: Models,
                  search: SearchConfig) -> Tuple[MotionField, Frame, MetricReport, CircularMask]:
    """一对帧的估计 + 补偿 + 评估，estimate 与 batch 共用"""
    geom = _geometry(args, cur)
    model = models.for_method(search.method)
    mask = _mask(args, models, geom)
    motion = estimate(cur, ref, search, model, geom)
    predicted = compensate(ref, motion, model, geom)
    return motion, predicted, evaluate(predicted, cur, mask), mask


def cmd_estimate(args) -> int:
    """运动估计: 写出运动场 CSV、补偿帧，并输出补偿帧相对当前帧的 PSNR/SSIM"""
    search = _search_config(args)
    models = _models(args)
    (ref, cur), original = _load_inputs([args.reference, args.current], args)
    logger.info(f"[#status] 🔍 {search.method.value}: {os.path.basename(args.reference)} → "
                f"{os.path.basename(args.current)}")

    motion, predicted, report, mask = estimate_pair(ref, cur, args, models, search)

    os.makedirs(args.out, exist_ok=True)
    save_motion_field(motion, os.path.join(args.out, config.MOTION_FILE))
    save_frame(crop_frame(predicted, *original), os.path.join(args.out, config.COMPENSATED_FILE))
    if args.error_map:
        save_frame(crop_frame(error_map(predicted, cur, mask), *original), args.error_map)

    logger.info(f"[#success] ✅ PSNR {report.psnr_text} dB, SSIM {report.ssim:.4f} ({mask.describe()})")
    _emit_csv(config.METRICS_CSV_HEADER,
              [[os.path.basename(args.current), report.psnr_text, f"{report.ssim:.6f}", report.pixel_count]],
              None)
    return 0


def cmd_compensate(args) -> int:
    """按已保存的运动场从参考帧生成补偿帧"""
    models = _models(args)
    (ref,), original = _load_inputs([args.reference], args)
    motion = load_motion_field(args.motion, width=ref.width, height=ref.height, metric=args.metric)
    geom = _geometry(args, ref)
    predicted = compensate(ref, motion, models.for_method(motion.method), geom)
    save_frame(crop_frame(predicted, *original), args.out)
    logger.info(f"[#success] ✅ 补偿帧已写入 {args.out}")
    return 0


def _fruc_config(args) -> FrucConfig:
    return FrucConfig(alpha=args.alpha, mode=FrucMode(args.mode), adapt=Adapt(args.adapt),
                      hybrid_fov_deg=args.hybrid_fov, search=_search_config(args, Method.TME.value))


def cmd_fruc(args) -> int:
    """帧率上变换: 写出中间帧，给出真值时输出 PSNR/SSIM"""
    cfg = _fruc_config(args)
    models = _models(args)
    paths = [args.previous, args.next] + ([args.truth] if args.truth else [])
    frames, original = _load_inputs(paths, args)
    prev, next_ = frames[0], frames[1]
    geom = _geometry(args, prev)

    result = interpolate_detailed(prev, next_, cfg, models.for_adapt(cfg.adapt), geom)
    save_frame(crop_frame(result.frame, *original), args.out)
    logger.info(f"[#success] ✅ 中间帧已写入 {args.out} (模式 {cfg.mode.value}, 自适应 {cfg.adapt.value})")

    if args.save_fetches:
        stem, suffix = os.path.splitext(args.out)
        for name, fetched in (('bw', result.backward_fetch), ('fw', result.forward_fetch)):
            if fetched is not None:
                save_frame(crop_frame(fetched, *original), f"{stem}_{name}{suffix}")

    if args.truth:
        mask = _mask(args, models, geom)
        report = evaluate(result.frame, frames[2], mask)
        _emit_csv(config.METRICS_CSV_HEADER,
                  [[os.path.basename(args.truth), report.psnr_text, f"{report.ssim:.6f}", report.pixel_count]],
                  None)
    return 0


def cmd_generate(args) -> int:
    """生成带真值的合成鱼眼序列"""
    models = _models(args)
    model = models.mask_model
    geom = CameraGeometry(focal_mm=args.focal_mm, fov_deg=args.fov, sensor_mm=args.sensor_mm,
                          width_px=args.size, height_px=args.size)
    shift = (args.shift[0], args.shift[1])
    if args.source:
        source = load_frame(args.source)
    else:
        height, width = required_source_size(geom, model, shift, args.frames)
        logger.info(f"[#status] 🎨 生成 {width}x{height} 纹理源图像 (seed {args.seed}, sigma {args.sigma})")
        source = make_texture(height, width, seed=args.seed, sigma=args.sigma)

    spec = SynthSpec(geom=geom, model=model, source=source, truth_shift=shift, frame_count=args.frames)
    write_sequence(generate(spec), args.out)
    return 0


def cmd_metrics(args) -> int:
    """计算若干测试帧相对参考帧的 PSNR/SSIM"""
    models = _models(args)
    frames, _ = _load_inputs([args.reference] + list(args.tests), args)
    reference = frames[0]
    mask = _mask(args, models, _geometry(args, reference))
    reports = [evaluate(frame, reference, mask) for frame in frames[1:]]
    rows = [[os.path.basename(p), r.psnr_text, f"{r.ssim:.6f}", r.pixel_count]
            for p, r in zip(args.tests, reports)]
    if len(reports) > 1:
        summary = aggregate(reports)
        mean = format_psnr(summary.mean_psnr_db) if summary.mean_psnr_db is not None else "nan"
        rows.append(["mean", mean, f"{summary.mean_ssim:.6f}", summary.pixel_count])
    _emit_csv(config.METRICS_CSV_HEADER, rows, args.out)
    return 0


def cmd_batch(args) -> int:
    """按清单批量估计并汇总；输出行按清单顺序排列"""
    search = _search_config(args)
    manifest = load_manifest(args.manifest, search, args.calib)
    models = _models(args)
    total = len(manifest.pairs)
    logger.info(f"[#status] 📂 批处理 {total} 对, 方法 {search.method.value}")

    def run_pair(item: Tuple[int, Tuple[str, str]]) -> MetricReport:
        index, (ref_path, cur_path) = item
        try:
            (ref, cur), _ = _load_inputs([ref_path, cur_path], args)
            _, _, report, _ = estimate_pair(ref, cur, args, models, manifest.search)
        except (FisheyeError, OSError) as e:
            error_type = type(e) if isinstance(e, FisheyeError) else FrameIOError
            raise error_type(f"第 {index} 对 ({ref_path}, {cur_path}) 处理失败: {e}") from e
        logger.info(f"[@progress] 批处理 ({index + 1}/{total}) {int((index + 1) / total * 100)}%")
        return report

    with ThreadPoolExecutor(max_workers=args.pair_jobs) as executor:
        reports = list(executor.map(run_pair, enumerate(manifest.pairs)))

    rows = [_report_row(i, os.path.basename(r), os.path.basename(c), report)
            for i, ((r, c), report) in enumerate(zip(manifest.pairs, reports))]
    rows.append(_mean_row(reports, len(REPORT_HEADER.split(','))))
    _emit_csv(REPORT_HEADER, rows, args.out)
    return 0


def _list_frames(source: str) -> List[str]:
    if os.path.isdir(source):
        paths = sorted(p for p in glob.glob(os.path.join(source, '*'))
                       if p.lower().endswith(FRAME_SUFFIXES))
    elif os.path.isfile(source):
        base = os.path.dirname(os.path.abspath(source))
        with open(source, 'r', encoding='utf-8') as f:
            paths = [os.path.join(base, line.strip()) for line in f
                     if line.strip() and not line.startswith('#')]
    else:
        raise ManifestError(f"帧序列不存在: {source}")
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise ManifestError(f"帧序列中的文件不存在: {', '.join(missing)}")
    return paths


def cmd_fruc_seq(args) -> int:
    """时间下采样后逐对插值，与被丢弃的真值帧比较"""
    cfg = _fruc_config(args)
    factor = args.factor
    offset = (1.0 - cfg.alpha) * factor
    if factor < 2 or not math.isclose(offset, round(offset)) or round(offset) in (0, factor):
        raise ConfigError(f"下采样因子 {factor} 与 alpha {cfg.alpha} 不能对应到被丢弃的整数帧")
    offset = int(round(offset))

    paths = _list_frames(args.frames)
    starts = list(range(0, len(paths) - factor, factor))
    if not starts:
        raise ManifestError(f"帧数 {len(paths)} 不足以按因子 {factor} 组成帧对")
    models = _models(args)
    model = models.for_adapt(cfg.adapt)

    reports = []
    for done, start in enumerate(starts, start=1):
        (prev, next_, truth), _ = _load_inputs(
            [paths[start], paths[start + factor], paths[start + offset]], args)
        geom = _geometry(args, prev)
        frame = interpolate_detailed(prev, next_, cfg, model, geom).frame
        reports.append(evaluate(frame, truth, _mask(args, models, geom)))
        logger.info(f"[@progress] 序列插值 ({done}/{len(starts)}) {int(done / len(starts) * 100)}%")

    rows = [[os.path.basename(paths[start + offset]), r.psnr_text, f"{r.ssim:.6f}",
             r.pixel_count, int(r.is_identical)] for start, r in zip(starts, reports)]
    rows.append(_mean_row(reports, len(SEQUENCE_HEADER.split(','))))
    _emit_csv(SEQUENCE_HEADER, rows, args.out)
    return 0


def _add_geometry_args(parser) -> None:
    group = parser.add_argument_group('相机几何')
    group.add_argument('--fov', type=float, default=config.DEFAULT_FOV_DEG, help='视场角（度）')
    group.add_argument('--focal-mm', type=float, default=config.DEFAULT_FOCAL_MM, help='焦距（毫米）')
    group.add_argument('--sensor-mm', type=float, default=config.DEFAULT_SENSOR_MM, help='传感器宽度（毫米）')
    group.add_argument('--calib', help='标定查找表 CSV（theta_deg,r_mm）')
    group.add_argument('--mask-fov', type=float, default=None, help='评估掩码视场角，默认等于 --fov')
    group.add_argument('--pad-square', action='store_true', help='处理前把输入补零为正方形')


def _add_search_args(parser, with_method: bool = True) -> None:
    group = parser.add_argument_group('运动估计')
    if with_method:
        group.add_argument('--method', choices=[m.value for m in Method], default=config.DEFAULT_METHOD,
                           help='估计方法')
    group.add_argument('--block', type=int, choices=config.ALLOWED_BLOCK_SIZES,
                       default=config.DEFAULT_BLOCK_SIZE, help='块大小')
    group.add_argument('--range', type=int, default=config.DEFAULT_SEARCH_RANGE, help='搜索范围 s')
    group.add_argument('--precision', type=int, default=config.DEFAULT_PRECISION, help='亚像素精度分母')
    group.add_argument('--metric', choices=[m.value for m in Metric], default=config.DEFAULT_METRIC,
                       help='匹配代价')
    group.add_argument('--jobs', type=int, default=None, help='块级并行线程数，默认 CPU 核心数')
    group.add_argument('--progress', action='store_true', help='显示块级进度条')


def _add_fruc_args(parser) -> None:
    group = parser.add_argument_group('帧率上变换')
    group.add_argument('--mode', choices=[m.value for m in FrucMode], default=FrucMode.MCLA.value,
                       help='插值模式')
    group.add_argument('--adapt', choices=[a.value for a in Adapt], default=Adapt.NONE.value,
                       help='鱼眼自适应运动估计')
    group.add_argument('--alpha', type=float, default=config.DEFAULT_ALPHA, help='中间帧到后一帧的时间距离')
    group.add_argument('--hybrid-fov', type=float, default=config.DEFAULT_HYBRID_FOV_DEG,
                       help='使用鱼眼运动估计的区域视场角')


def setup_parser(parser) -> None:
    """设置命令行参数"""
    parser.add_argument('--no-log-file', action='store_true', help='不写日志文件')
    parser.add_argument('-v', '--verbose', action='store_true', help='输出调试日志')
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')

    p = subparsers.add_parser('estimate', help='运动估计并输出补偿帧与评估')
    p.add_argument('reference', help='参考帧（帧对的第一帧）')
    p.add_argument('current', help='当前帧（被预测的帧）')
    p.add_argument('-o', '--out', default='out', help='输出目录')
    p.add_argument('--error-map', help='写出误差图（PNG/PGM）')
    _add_search_args(p)
    _add_geometry_args(p)
    p.set_defaults(func=cmd_estimate)

    p = subparsers.add_parser('compensate', help='按运动场 CSV 生成补偿帧')
    p.add_argument('reference', help='参考帧')
    p.add_argument('motion', help='运动场 CSV')
    p.add_argument('-o', '--out', default=config.COMPENSATED_FILE, help='输出帧')
    p.add_argument('--metric', choices=[m.value for m in Metric], default=config.DEFAULT_METRIC,
                   help='运动场的匹配代价')
    _add_geometry_args(p)
    p.set_defaults(func=cmd_compensate)

    p = subparsers.add_parser('fruc', help='帧率上变换，合成中间帧')
    p.add_argument('previous', help='前一帧 (t−1)')
    p.add_argument('next', help='后一帧 (t)')
    p.add_argument('-o', '--out', default='interpolated.png', help='输出帧')
    p.add_argument('--truth', help='真值中间帧，给出时输出 PSNR/SSIM')
    p.add_argument('--save-fetches', action='store_true', help='同时写出单侧取值帧 *_bw / *_fw')
    _add_fruc_args(p)
    _add_search_args(p, with_method=False)
    _add_geometry_args(p)
    p.set_defaults(func=cmd_fruc)

    p = subparsers.add_parser('generate', help='生成合成鱼眼序列')
    p.add_argument('-o', '--out', default='synth', help='输出目录')
    p.add_argument('--source', help='透视源图像，缺省时生成噪声纹理')
    p.add_argument('--size', type=int, default=512, help='输出帧边长（像素）')
    p.add_argument('--shift', type=int, nargs=2, default=(4, 0), metavar=('DX', 'DY'),
                   help='每帧透视域平移')
    p.add_argument('--frames', type=int, default=2, help='帧数')
    p.add_argument('--seed', type=int, default=0, help='纹理随机种子')
    p.add_argument('--sigma', type=float, default=config.DEFAULT_TEXTURE_SIGMA, help='纹理平滑尺度')
    _add_geometry_args(p)
    p.set_defaults(func=cmd_generate, fov=170.0)

    p = subparsers.add_parser('metrics', help='计算 PSNR/SSIM')
    p.add_argument('reference', help='参考帧')
    p.add_argument('tests', nargs='+', help='待评估帧')
    p.add_argument('-o', '--out', help='输出 CSV，默认标准输出')
    _add_geometry_args(p)
    p.set_defaults(func=cmd_metrics)

    p = subparsers.add_parser('batch', help='按清单批量估计')
    p.add_argument('manifest', help='清单文件，每行 reference,current')
    p.add_argument('-o', '--out', help='输出 CSV，默认标准输出')
    p.add_argument('--pair-jobs', type=int, default=1, help='并行处理的帧对数')
    _add_search_args(p)
    _add_geometry_args(p)
    p.set_defaults(func=cmd_batch)

    p = subparsers.add_parser('fruc-seq', help='时间下采样序列的插值评估')
    p.add_argument('frames', help='帧目录或帧列表文件')
    p.add_argument('--factor', type=int, default=2, help='时间下采样因子')
    p.add_argument('-o', '--out', help='输出 CSV，默认标准输出')
    _add_fruc_args(p)
    _add_search_args(p, with_method=False)
    _add_geometry_args(p)
    p.set_defaults(func=cmd_fruc_seq)
