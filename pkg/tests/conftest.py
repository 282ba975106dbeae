"""
共享测试夹具
"""
import numpy as np
import pytest
from loguru import logger

from fisheyeme.core.calibration import CalibrationTable
from fisheyeme.core.frames import Frame
from fisheyeme.core.geometry import (
    CameraGeometry,
    ProjectionKind,
    ProjectionModel,
    calibration_from_model,
)
from fisheyeme.core.synth import SynthSpec, generate, make_texture, required_source_size


@pytest.fixture(autouse=True)
def quiet_logger():
    """测试期间只保留 WARNING 以上的日志"""
    logger.remove()
    logger.add(lambda message: None, level="WARNING")
    yield
    # 命令行测试会经 setup_logger 重新配置 handler
    logger.remove()


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def equisolid():
    return ProjectionModel.equisolid()


@pytest.fixture
def rig_geom():
    """采集系统参数: 1.8mm / 185° / 5.2mm / 1088×1088"""
    return CameraGeometry()


@pytest.fixture
def small_geom():
    """64×64 的小几何，焦距换算后约 22 像素"""
    return CameraGeometry(fov_deg=170.0, width_px=64, height_px=64)


@pytest.fixture
def make_random_frame(rng):
    """整数取值的随机帧工厂"""
    def _make(height=64, width=64) -> Frame:
        return Frame(rng.integers(0, 256, size=(height, width)).astype(np.float64))
    return _make


@pytest.fixture(scope="session")
def equisolid_table() -> CalibrationTable:
    """从等立体角函数按 0.01° 采样到 92.5° 的查找表（f = 1.8mm）"""
    return calibration_from_model(ProjectionModel(ProjectionKind.EQUISOLID), 1.8, 92.5, 0.01)


@pytest.fixture(scope="session")
def synth_pair():
    """512×512、FOV 170° 的合成帧对，透视域真值 (4, 0)

    返回 (ref, cur, geom, model)，ref 为第 0 帧，cur 为第 1 帧。
    """
    geom = CameraGeometry(fov_deg=170.0, width_px=512, height_px=512)
    model = ProjectionModel.equisolid()
    height, width = required_source_size(geom, model, (4, 0), 2)
    source = make_texture(height, width, seed=7, sigma=5.0)
    sequence = generate(SynthSpec(geom=geom, model=model, source=source,
                                  truth_shift=(4, 0), frame_count=2))
    ref, cur = sequence.frames
    return ref, cur, geom, model
