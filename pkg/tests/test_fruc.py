"""
帧率上变换测试
"""
import warnings

import numpy as np
import pytest

from fisheyeme.core.blockmatch import Method, MotionField, SearchConfig
from fisheyeme.core.frames import Frame, make_mask
from fisheyeme.core.fruc import (
    Adapt,
    DenseMotionField,
    FrucConfig,
    FrucMode,
    Provenance,
    densify,
    hybrid_region_split,
    interpolate,
    interpolate_detailed,
    median_ignoring_nan,
    retime_cwm,
)
from fisheyeme.core.geometry import CameraGeometry, ProjectionModel
from fisheyeme.core.metrics import psnr
from fisheyeme.core.synth import SynthSpec, generate, make_texture, required_source_size
from fisheyeme.errors import ConfigError, DimensionMismatchError


def _field(vx, vy, provenance=Provenance.FORWARD):
    return DenseMotionField(np.asarray(vx, dtype=np.float64), np.asarray(vy, dtype=np.float64), provenance)


def _cwm_oracle(fwd: np.ndarray, bwd_neg: np.ndarray, y: int, x: int, b: int) -> float:
    """逐像素收集 38 个值后排序取中值"""
    height, width = fwd.shape
    values = [fwd[y, x]] * 7 + [bwd_neg[y, x]] * 7
    for source in (fwd, bwd_neg):
        for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            for k in (1, 2, 3):
                ty, tx = y + dy * k * b, x + dx * k * b
                if 0 <= ty < height and 0 <= tx < width:
                    values.append(source[ty, tx])
    ordered = sorted(values)
    n = len(ordered)
    return (ordered[(n - 1) // 2] + ordered[n // 2]) / 2.0


@pytest.fixture
def shift_triple(rng):
    """全局水平平移 4 像素的三帧: prev、真实中间帧（平移 2）、next"""
    base = rng.integers(0, 256, size=(64, 80)).astype(np.float64)
    prev = Frame(base[:, 8:72])
    middle = Frame(base[:, 6:70])
    next_ = Frame(base[:, 4:68])
    return prev, middle, next_


class TestFrucConfig:
    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.5, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ConfigError):
            FrucConfig(alpha=alpha)

    def test_hybrid_fov_below_camera_fov(self, rig_geom):
        cfg = FrucConfig(adapt="equisolid", hybrid_fov_deg=190.0)
        with pytest.raises(ConfigError):
            cfg.validate(rig_geom)
        FrucConfig(adapt="none", hybrid_fov_deg=190.0).validate(rig_geom)

    def test_adapt_selects_method(self):
        assert FrucConfig(adapt="equisolid").search_config.method is Method.EME_PLUS
        assert FrucConfig(adapt="calibrated").search_config.method is Method.CME_PLUS
        assert FrucConfig(adapt=Adapt.EQUISOLID).adapt is Adapt.EQUISOLID
        assert FrucConfig().search_config.method is Method.TME

    def test_dict_round_trip(self):
        cfg = FrucConfig(alpha=0.25, mode="mcf", adapt="equisolid",
                         search=SearchConfig(block_size=8, search_range=4))
        assert FrucConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


class TestDensify:
    def test_uniform_tme_field(self):
        cfg = SearchConfig(block_size=8, search_range=4)
        vectors = np.zeros((3, 4, 2), dtype=np.int64)
        vectors[...] = (2, 0)
        field = MotionField(width=30, height=20, config=cfg, vectors=vectors,
                            costs=np.zeros((3, 4)), skipped=np.zeros((3, 4), dtype=bool))
        dense = densify(field)
        assert dense.shape == (20, 30)
        assert np.all(dense.vx == 2.0) and np.all(dense.vy == 0.0)

    def test_zero_projected_field(self, small_geom, equisolid):
        cfg = SearchConfig(block_size=16, search_range=2, method="eme+")
        field = MotionField(width=64, height=64, config=cfg, vectors=np.zeros((4, 4, 2), dtype=np.int64),
                            costs=np.zeros((4, 4)), skipped=np.zeros((4, 4), dtype=bool))
        dense = densify(field, 16, equisolid, small_geom)
        np.testing.assert_allclose(dense.vx, 0.0, atol=1e-9)
        np.testing.assert_allclose(dense.vy, 0.0, atol=1e-9)

    def test_projected_field_bends_toward_periphery(self, small_geom, equisolid):
        """透视域的同一矢量在鱼眼边缘对应更小的位移"""
        cfg = SearchConfig(block_size=16, search_range=2, method="eme+")
        vectors = np.zeros((4, 4, 2), dtype=np.int64)
        vectors[...] = (2, 0)
        field = MotionField(width=64, height=64, config=cfg, vectors=vectors,
                            costs=np.zeros((4, 4)), skipped=np.zeros((4, 4), dtype=bool))
        dense = densify(field, 16, equisolid, small_geom)
        assert dense.vx[32, 32] == pytest.approx(2.0, abs=0.05)
        assert 0.0 < dense.vx[32, 52] < dense.vx[32, 32]

    def test_block_size_mismatch(self):
        cfg = SearchConfig(block_size=8, search_range=1)
        field = MotionField(width=8, height=8, config=cfg, vectors=np.zeros((1, 1, 2), dtype=np.int64),
                            costs=np.zeros((1, 1)), skipped=np.zeros((1, 1), dtype=bool))
        with pytest.raises(ConfigError):
            densify(field, 16)


class TestRetimeCwm:
    def test_constant_fields(self):
        fwd = _field(np.full((20, 20), 3.0), np.full((20, 20), -1.0))
        bwd = fwd.negated()
        retimed = retime_cwm(fwd, bwd, block_size=4)
        assert np.all(retimed.vx == 3.0) and np.all(retimed.vy == -1.0)
        assert retimed.provenance is Provenance.RETIMED

    def test_center_outlier_rejected(self):
        """中心离群值占 7 票，少于 24 个零值"""
        vx = np.zeros((40, 40))
        vx[20, 20] = 100.0
        fwd = _field(vx, vx.copy())
        bwd = _field(np.zeros((40, 40)), np.zeros((40, 40)))
        retimed = retime_cwm(fwd, bwd, block_size=4)
        assert retimed.vx[20, 20] == 0.0 and retimed.vy[20, 20] == 0.0

    def test_matches_sort_oracle(self, rng):
        b = 2
        fwd = _field(rng.normal(size=(48, 48)), rng.normal(size=(48, 48)))
        bwd = _field(rng.normal(size=(48, 48)), rng.normal(size=(48, 48)))
        retimed = retime_cwm(fwd, bwd, block_size=b)
        # 内部 36×36 = 1296 个像素有完整的 38 个值，另取四角检查缺失抽头
        points = [(y, x) for y in range(6, 42) for x in range(6, 42)]
        points += [(0, 0), (0, 47), (47, 0), (47, 47), (3, 20)]
        for y, x in points:
            assert retimed.vx[y, x] == _cwm_oracle(fwd.vx, -bwd.vx, y, x, b)
            assert retimed.vy[y, x] == _cwm_oracle(fwd.vy, -bwd.vy, y, x, b)

    def test_swap_negates_when_antisymmetric(self, rng):
        vx = rng.normal(size=(24, 24))
        vy = rng.normal(size=(24, 24))
        fwd = _field(vx, vy)
        bwd = fwd.negated()
        forward = retime_cwm(fwd, bwd, 4)
        swapped = retime_cwm(bwd, fwd, 4)
        np.testing.assert_array_equal(swapped.vx, -forward.vx)
        np.testing.assert_array_equal(swapped.vy, -forward.vy)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            retime_cwm(DenseMotionField.constant(4, 4, 0, 0), DenseMotionField.constant(4, 5, 0, 0))

    def test_median_ignoring_nan_even_count(self):
        stack = np.array([[1.0], [np.nan], [4.0], [2.0], [10.0]])
        assert median_ignoring_nan(stack).tolist() == [3.0]

    def test_median_ignoring_nan_all_missing_column(self):
        stack = np.array([[np.nan, 5.0], [np.nan, 1.0], [np.nan, np.nan]])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            result = median_ignoring_nan(stack)
        assert np.isnan(result[0])
        assert result[1] == 3.0


class TestHybridRegionSplit:
    def test_center_adapted_corner_conventional(self, rig_geom, equisolid):
        adapted = hybrid_region_split(rig_geom, equisolid, 170.0, 16)
        assert adapted.shape == (68, 68)
        assert adapted[34, 34]
        assert not adapted[0, 0]
        assert not adapted[0, 34]
        assert np.array_equal(adapted, adapted.T)

    def test_rejects_hybrid_fov_above_camera(self, small_geom, equisolid):
        with pytest.raises(ConfigError):
            hybrid_region_split(small_geom, equisolid, 170.0, 16)

    def test_smaller_fov_fewer_blocks(self, rig_geom, equisolid):
        wide = hybrid_region_split(rig_geom, equisolid, 170.0, 16)
        narrow = hybrid_region_split(rig_geom, equisolid, 90.0, 16)
        assert narrow.sum() < wide.sum()
        assert not np.any(narrow & ~wide)


class TestInterpolate:
    @pytest.mark.parametrize("mode", list(FrucMode))
    def test_identical_frames(self, mode, make_random_frame):
        frame = make_random_frame(32, 32)
        cfg = FrucConfig(mode=mode, search=SearchConfig(block_size=8, search_range=2))
        np.testing.assert_array_equal(interpolate(frame, frame, cfg).luma, frame.luma)

    @pytest.mark.parametrize("mode", [FrucMode.MCF, FrucMode.MCLA])
    def test_identical_frames_adapted(self, mode, small_geom, equisolid, make_random_frame):
        frame = make_random_frame(64, 64)
        cfg = FrucConfig(mode=mode, adapt="equisolid", hybrid_fov_deg=120.0,
                         search=SearchConfig(block_size=16, search_range=2))
        np.testing.assert_array_equal(interpolate(frame, frame, cfg, equisolid, small_geom).luma, frame.luma)

    def test_rep_returns_prev(self, make_random_frame):
        prev, next_ = make_random_frame(16, 16), make_random_frame(16, 16)
        out = interpolate(prev, next_, FrucConfig(mode="rep"))
        np.testing.assert_array_equal(out.luma, prev.luma)

    def test_linear_average(self):
        prev = Frame(np.full((4, 4), 10.0))
        next_ = Frame(np.full((4, 4), 20.0))
        assert np.all(interpolate(prev, next_, FrucConfig(mode="la")).luma == 15.0)
        assert np.all(interpolate(prev, next_, FrucConfig(mode="la", alpha=0.25)).luma == 18.0)

    def test_size_mismatch(self, make_random_frame):
        with pytest.raises(DimensionMismatchError):
            interpolate(make_random_frame(16, 16), make_random_frame(16, 20), FrucConfig(mode="la"))

    def test_adapted_requires_geometry(self, make_random_frame):
        frame = make_random_frame(16, 16)
        with pytest.raises(ConfigError):
            interpolate(frame, frame, FrucConfig(mode="mcla", adapt="equisolid"))

    def test_global_shift_reconstructs_middle(self, shift_triple):
        prev, middle, next_ = shift_triple
        cfg = FrucConfig(mode="mcla", search=SearchConfig(block_size=8, search_range=6))
        result = interpolate_detailed(prev, next_, cfg)
        assert np.all(result.retimed.vx[8:56, 8:56] == 4.0)
        assert np.all(result.retimed.vy == 0.0)
        np.testing.assert_array_equal(result.frame.luma[:, 4:60], middle.luma[:, 4:60])
        assert result.forward_field.vector(4, 4) == (4, 0)
        assert result.backward_field.vector(4, 4) == (-4, 0)

    def test_mcla_not_worse_than_mcf(self, shift_triple):
        prev, middle, next_ = shift_triple
        search = SearchConfig(block_size=8, search_range=6)
        mcf = interpolate(prev, next_, FrucConfig(mode="mcf", search=search))
        mcla = interpolate(prev, next_, FrucConfig(mode="mcla", search=search))
        assert psnr(mcla, middle) >= psnr(mcf, middle)

    def test_detailed_exposes_fetches(self, shift_triple):
        prev, _, next_ = shift_triple
        search = SearchConfig(block_size=8, search_range=6)
        mcf = interpolate_detailed(prev, next_, FrucConfig(mode="mcf", search=search))
        assert mcf.forward_fetch is None
        np.testing.assert_array_equal(mcf.frame.luma, mcf.backward_fetch.luma)
        mcla = interpolate_detailed(prev, next_, FrucConfig(mode="mcla", search=search))
        assert mcla.forward_fetch is not None


@pytest.mark.slow
def test_adapted_mcla_beats_conventional_on_fisheye():
    """鱼眼合成三帧: 自适应 MCLA 的 PSNR 不低于传统 MCLA，也不低于 MCF"""
    geom = CameraGeometry(fov_deg=170.0, width_px=192, height_px=192)
    model = ProjectionModel.equisolid()
    height, width = required_source_size(geom, model, (2, 0), 3)
    source = make_texture(height, width, seed=11, sigma=4.0)
    prev, middle, next_ = generate(SynthSpec(geom=geom, model=model, source=source,
                                             truth_shift=(2, 0), frame_count=3)).frames
    mask = make_mask(geom, model, 170.0)
    search = SearchConfig(block_size=16, search_range=8)

    conventional = interpolate(prev, next_, FrucConfig(mode="mcla", search=search))
    adapted_cfg = FrucConfig(mode="mcla", adapt="equisolid", hybrid_fov_deg=150.0, search=search)
    adapted = interpolate(prev, next_, adapted_cfg, model, geom)
    adapted_mcf = interpolate(prev, next_, FrucConfig(mode="mcf", adapt="equisolid",
                                                      hybrid_fov_deg=150.0, search=search), model, geom)

    assert psnr(adapted, middle, mask) >= psnr(conventional, middle, mask)
    assert psnr(adapted, middle, mask) >= psnr(adapted_mcf, middle, mask)
