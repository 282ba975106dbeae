"""
投影几何测试
"""
import math

import numpy as np
import pytest

from fisheyeme.core.geometry import (
    CameraGeometry,
    CartCoord,
    PolarCoord,
    ProjectionKind,
    ProjectionModel,
    cart_to_polar,
    fisheye_to_perspective,
    normalize_angle,
    perspective_to_fisheye,
    polar_to_cart,
    project_theta,
    r_180,
    r_max,
    reproject_candidates,
    to_perspective_coords,
    ultra_wide_compensate,
    unproject_radius,
)
from fisheyeme.errors import (
    ConfigError,
    ProjectionDomainError,
    RadiusRangeError,
    SingularProjectionError,
    UltraWideError,
)

FISHEYE_KINDS = [
    ProjectionKind.EQUIDISTANT,
    ProjectionKind.EQUISOLID,
    ProjectionKind.ORTHOGRAPHIC,
    ProjectionKind.STEREOGRAPHIC,
]

# 各模型定义域内用于单调性检查的采样
DOMAIN_SAMPLES = {
    ProjectionKind.PINHOLE: np.linspace(0.0, math.pi / 2, 1000, endpoint=False),
    ProjectionKind.EQUIDISTANT: np.linspace(0.0, math.pi, 1000),
    ProjectionKind.EQUISOLID: np.linspace(0.0, math.pi, 1000),
    ProjectionKind.ORTHOGRAPHIC: np.linspace(0.0, math.pi / 2, 1000),
    ProjectionKind.STEREOGRAPHIC: np.linspace(0.0, math.pi, 1000, endpoint=False),
}


@pytest.fixture
def unit_geom():
    """焦距恰好 1 像素、视场角 210° 的几何"""
    return CameraGeometry(focal_mm=1.0, fov_deg=210.0, sensor_mm=10.0, width_px=10, height_px=10)


def test_camera_geometry_derived_values(rig_geom):
    """焦距换算与最大入射角"""
    assert rig_geom.focal_px == pytest.approx(1.8 * 1088 / 5.2)
    assert rig_geom.theta_max == pytest.approx(math.radians(92.5))
    assert rig_geom.center == (544, 544)


@pytest.mark.parametrize("kwargs", [
    {'focal_mm': 0.0},
    {'fov_deg': 0.0},
    {'fov_deg': 361.0},
    {'sensor_mm': -1.0},
    {'width_px': 0},
])
def test_camera_geometry_rejects_invalid(kwargs):
    with pytest.raises(ConfigError):
        CameraGeometry(**kwargs)


def test_camera_geometry_dict_round_trip(rig_geom):
    assert CameraGeometry.from_dict(rig_geom.to_dict()) == rig_geom


def test_projection_model_table_required_iff_calibrated(equisolid_table):
    with pytest.raises(ConfigError):
        ProjectionModel(ProjectionKind.CALIBRATED)
    with pytest.raises(ConfigError):
        ProjectionModel(ProjectionKind.EQUISOLID, equisolid_table)
    assert ProjectionModel("calibrated", equisolid_table).is_calibrated


def test_equisolid_r_max_matches_capture_rig(rig_geom, equisolid):
    """92.5° 处的半径约 2.6mm"""
    radius_mm = project_theta(equisolid, rig_geom, math.radians(92.5)) / rig_geom.px_per_mm
    assert 2.59 <= radius_mm <= 2.61
    assert r_max(equisolid, rig_geom) / rig_geom.px_per_mm == pytest.approx(radius_mm)


@pytest.mark.parametrize("kind", list(ProjectionKind)[:-1])
def test_project_theta_zero_is_zero(kind, rig_geom):
    assert project_theta(ProjectionModel(kind), rig_geom, 0.0) == 0.0


def test_project_theta_closed_forms(rig_geom, equisolid):
    f = rig_geom.focal_px
    pinhole = ProjectionModel(ProjectionKind.PINHOLE)
    assert project_theta(pinhole, rig_geom, math.pi / 4) == pytest.approx(f, rel=1e-12)
    assert project_theta(equisolid, rig_geom, math.pi / 2) == pytest.approx(math.sqrt(2) * f, rel=1e-12)
    assert project_theta(ProjectionModel(ProjectionKind.EQUIDISTANT), rig_geom, 1.0) == pytest.approx(f)
    assert project_theta(ProjectionModel(ProjectionKind.ORTHOGRAPHIC), rig_geom, math.pi / 6) == \
        pytest.approx(f / 2)
    assert project_theta(ProjectionModel(ProjectionKind.STEREOGRAPHIC), rig_geom, math.pi / 2) == \
        pytest.approx(2 * f)


@pytest.mark.parametrize("kind, theta", [
    (ProjectionKind.PINHOLE, math.pi / 2),
    (ProjectionKind.ORTHOGRAPHIC, math.pi / 2 + 0.01),
    (ProjectionKind.STEREOGRAPHIC, math.pi),
    (ProjectionKind.EQUISOLID, -0.1),
])
def test_project_theta_outside_domain_raises(kind, theta, rig_geom):
    with pytest.raises(ProjectionDomainError):
        project_theta(ProjectionModel(kind), rig_geom, theta)


@pytest.mark.parametrize("kind", list(DOMAIN_SAMPLES))
def test_project_theta_strictly_increasing(kind, rig_geom):
    radii = project_theta(ProjectionModel(kind), rig_geom, DOMAIN_SAMPLES[kind])
    assert np.all(np.diff(radii) > 0)


def test_equisolid_below_perspective(rig_geom, equisolid):
    """相同焦距下，(0, π/2) 内等立体角半径小于透视半径"""
    theta = np.linspace(0.01, math.pi / 2 - 0.01, 500)
    pinhole = ProjectionModel(ProjectionKind.PINHOLE)
    assert np.all(project_theta(equisolid, rig_geom, theta) < project_theta(pinhole, rig_geom, theta))


def test_unproject_radius_examples(rig_geom, equisolid):
    f = rig_geom.focal_px
    assert unproject_radius(equisolid, rig_geom, math.sqrt(2) * f) == pytest.approx(math.pi / 2)
    assert unproject_radius(equisolid, rig_geom, 0.0) == 0.0


def test_unproject_radius_range_errors(rig_geom, equisolid):
    limit = r_max(equisolid, rig_geom)
    with pytest.raises(RadiusRangeError):
        unproject_radius(equisolid, rig_geom, limit * 1.001)
    with pytest.raises(RadiusRangeError):
        unproject_radius(equisolid, rig_geom, -1.0)


def test_unproject_calibrated_matches_analytic_inverse(rig_geom, equisolid, equisolid_table):
    calibrated = ProjectionModel.calibrated(equisolid_table)
    radius = project_theta(equisolid, rig_geom, 0.7)
    assert unproject_radius(calibrated, rig_geom, radius) == pytest.approx(0.7, abs=2e-4)


def test_r_180_exists_only_beyond_180(rig_geom, equisolid):
    assert r_180(equisolid, rig_geom) == pytest.approx(math.sqrt(2) * rig_geom.focal_px)
    assert r_180(equisolid, rig_geom.with_fov(170.0)) is None
    assert r_180(equisolid, rig_geom.with_fov(180.0)) is None


@pytest.mark.parametrize("cart, expected", [
    ((0.0, 5.0), (5.0, math.pi / 2)),
    ((0.0, -5.0), (5.0, -math.pi / 2)),
    ((0.0, 0.0), (0.0, 0.0)),
    ((-3.0, 4.0), (5.0, math.atan(4 / -3) + math.pi)),
    ((-3.0, -4.0), (5.0, math.atan(-4 / -3) - math.pi)),
    ((3.0, 4.0), (5.0, math.atan(4 / 3))),
    ((-2.0, 0.0), (2.0, math.pi)),
])
def test_cart_to_polar_cases(cart, expected):
    polar = cart_to_polar(CartCoord(*cart))
    assert polar.r == pytest.approx(expected[0])
    assert polar.phi == pytest.approx(expected[1])
    assert -math.pi < polar.phi <= math.pi


def test_cart_to_polar_example_value():
    assert cart_to_polar(CartCoord(-3.0, 4.0)).phi == pytest.approx(2.2142974355881813, abs=1e-12)


def test_polar_to_cart_examples():
    cart = polar_to_cart(PolarCoord(5.0, math.pi / 2))
    assert cart.x == pytest.approx(0.0, abs=1e-12) and cart.y == pytest.approx(5.0)
    origin = polar_to_cart(PolarCoord(0.0, 1.234))
    assert (origin.x, origin.y) == (0.0, 0.0)


def test_negative_radius_convention():
    """负半径指向相反方向，再极化得到正半径与 π"""
    cart = polar_to_cart(PolarCoord(-2.0, 0.0))
    assert cart.x == -2.0 and cart.y == pytest.approx(0.0, abs=1e-15)
    polar = cart_to_polar(cart)
    assert polar.r == pytest.approx(2.0)
    assert polar.phi == pytest.approx(math.pi)


def test_polar_round_trip(rng):
    for x, y in rng.uniform(-100, 100, size=(200, 2)):
        back = polar_to_cart(cart_to_polar(CartCoord(x, y)))
        assert back.x == pytest.approx(x, abs=1e-9)
        assert back.y == pytest.approx(y, abs=1e-9)


@pytest.mark.parametrize("phi, expected", [
    (-math.pi, math.pi),
    (3 * math.pi, math.pi),
    (0.0, 0.0),
    (-math.pi / 2, -math.pi / 2),
    (2 * math.pi + 0.5, 0.5),
])
def test_normalize_angle(phi, expected):
    assert normalize_angle(phi) == pytest.approx(expected)


def test_fisheye_to_perspective_examples(rig_geom, equisolid):
    f = rig_geom.focal_px
    radius_45 = 2 * f * math.sin(math.radians(22.5))
    out = fisheye_to_perspective(PolarCoord(radius_45, 0.3), equisolid, rig_geom)
    assert out.r == pytest.approx(f, rel=1e-9)
    assert out.phi == 0.3

    origin = fisheye_to_perspective(PolarCoord(0.0, -1.1), equisolid, rig_geom)
    assert origin.r == 0.0 and origin.phi == -1.1


def test_fisheye_to_perspective_negative_beyond_90(equisolid):
    """θ = 135° 时透视半径为 −f"""
    geom = CameraGeometry(fov_deg=280.0)
    f = geom.focal_px
    radius_135 = 2 * f * math.sin(math.radians(67.5))
    out = fisheye_to_perspective(PolarCoord(radius_135, 1.0), equisolid, geom)
    assert out.r == pytest.approx(-f, rel=1e-9)


def test_fisheye_to_perspective_singular_at_r_180(rig_geom, equisolid):
    with pytest.raises(SingularProjectionError):
        fisheye_to_perspective(PolarCoord(math.sqrt(2) * rig_geom.focal_px, 0.0), equisolid, rig_geom)


def test_perspective_to_fisheye_examples(rig_geom, equisolid):
    f = rig_geom.focal_px
    out = perspective_to_fisheye(PolarCoord(f, 0.7), equisolid, rig_geom)
    assert out.r == pytest.approx(2 * f * math.sin(math.radians(22.5)))
    assert out.phi == 0.7
    assert perspective_to_fisheye(PolarCoord(0.0, 0.0), equisolid, rig_geom).r == 0.0
    with pytest.raises(RadiusRangeError):
        perspective_to_fisheye(PolarCoord(-1.0, 0.0), equisolid, rig_geom)


def test_perspective_to_fisheye_limit(rig_geom, equisolid):
    """r_p → ∞ 时等立体角半径趋于 √2·f"""
    f_mm = rig_geom.focal_mm
    out = perspective_to_fisheye(PolarCoord(1e12 * rig_geom.focal_px, 0.0), equisolid, rig_geom)
    assert abs(out.r / rig_geom.px_per_mm - math.sqrt(2) * f_mm) < 1e-6


@pytest.mark.parametrize("kind", FISHEYE_KINDS)
def test_domain_round_trip(kind, rng):
    """10⁴ 个随机半径在 [0, 0.999·r_180] 上往返"""
    geom = CameraGeometry(fov_deg=180.0)
    model = ProjectionModel(kind)
    radius_180 = project_theta(model, geom, math.pi / 2)
    worst = 0.0
    for radius in rng.uniform(0.0, 0.999 * radius_180, size=10_000):
        polar = PolarCoord(float(radius), 0.25)
        back = perspective_to_fisheye(fisheye_to_perspective(polar, model, geom), model, geom)
        worst = max(worst, abs(back.r - radius) / radius_180)
        assert back.phi == 0.25
    assert worst < 1e-6


def test_calibrated_round_trip(rig_geom, equisolid_table):
    model = ProjectionModel.calibrated(equisolid_table)
    radius_180 = project_theta(model, rig_geom, math.pi / 2)
    for radius in np.linspace(1.0, 0.999 * radius_180, 300):
        back = perspective_to_fisheye(fisheye_to_perspective(PolarCoord(radius, 0.0), model, rig_geom),
                                      model, rig_geom)
        assert back.r == pytest.approx(radius, rel=1e-3)


def test_calibrated_agrees_with_analytic(rig_geom, equisolid, equisolid_table):
    calibrated = ProjectionModel.calibrated(equisolid_table)
    theta = np.linspace(0.0, math.radians(92.5), 2000)
    analytic_r = project_theta(equisolid, rig_geom, theta)
    calibrated_r = project_theta(calibrated, rig_geom, theta)
    assert np.max(np.abs(analytic_r - calibrated_r)) < 1e-6 * rig_geom.focal_px
    radii = np.linspace(0.0, r_max(equisolid, rig_geom), 2000)
    step = math.radians(0.01)
    assert np.max(np.abs(calibrated.theta_of(radii, rig_geom) - equisolid.theta_of(radii, rig_geom))) < step


def test_calibrated_outside_table_raises(rig_geom, equisolid_table):
    calibrated = ProjectionModel.calibrated(equisolid_table)
    with pytest.raises(ProjectionDomainError, match="标定表范围"):
        project_theta(calibrated, rig_geom, math.radians(95.0))
    with pytest.raises(ProjectionDomainError, match="95.0000"):
        calibrated.radius_px(np.radians([10.0, 95.0, 120.0]), rig_geom)
    assert np.isnan(calibrated.radius_px(math.radians(95.0), rig_geom, strict=False))


def test_ultra_wide_unflagged_is_identity(rig_geom, equisolid):
    polar = fisheye_to_perspective(PolarCoord(200.0, 0.4), equisolid, rig_geom)
    result = ultra_wide_compensate((0, 0), [(polar, False)], equisolid, rig_geom)[0]
    assert result.vector == (0, 0)
    assert result.fisheye.r == pytest.approx(200.0, rel=1e-9)
    assert result.fisheye.phi == pytest.approx(0.4)


def test_ultra_wide_inverts_candidate(unit_geom, equisolid):
    polar = fisheye_to_perspective(PolarCoord(2 * math.sin(math.radians(50.0)), 0.0), equisolid, unit_geom)
    result = ultra_wide_compensate((3, -4), [(polar, True)], equisolid, unit_geom)[0]
    assert result.vector == (-3, 4)


def test_ultra_wide_mirror_is_approximate(unit_geom, equisolid):
    """θ = 100°、零候选时镜像后的半径为 2√2 − 2·sin 40°，与真实半径 2·sin 50° 有偏差"""
    polar = fisheye_to_perspective(PolarCoord(2 * math.sin(math.radians(50.0)), 0.9), equisolid, unit_geom)
    assert polar.r < 0
    result = ultra_wide_compensate((0, 0), [(polar, True)], equisolid, unit_geom)[0]
    expected = 2 * math.sqrt(2) - 2 * math.sin(math.radians(40.0))
    assert result.fisheye.r == pytest.approx(expected, rel=1e-9)
    assert result.fisheye.r == pytest.approx(1.543, abs=1e-3)
    assert abs(result.fisheye.r - 2 * math.sin(math.radians(50.0))) > 0.01
    assert result.fisheye.phi == pytest.approx(0.9)


def test_ultra_wide_requires_r_180(equisolid):
    geom = CameraGeometry(fov_deg=170.0)
    with pytest.raises(UltraWideError):
        ultra_wide_compensate((1, 1), [(PolarCoord(-5.0, 0.0), True)], equisolid, geom)


def test_reproject_zero_candidate_is_identity(rig_geom, equisolid, rng):
    """零候选在 90° 以内往返回原位置"""
    radius_limit = 0.95 * math.sqrt(2) * rig_geom.focal_px
    xs = rng.uniform(-radius_limit, radius_limit, 500) / math.sqrt(2)
    ys = rng.uniform(-radius_limit, radius_limit, 500) / math.sqrt(2)
    coords = to_perspective_coords(xs, ys, equisolid, rig_geom)
    assert not coords.flags.any()
    xfm, yfm = reproject_candidates(coords, np.array([0.0]), np.array([0.0]), equisolid, rig_geom, True)
    np.testing.assert_allclose(xfm[0], xs, atol=1e-9)
    np.testing.assert_allclose(yfm[0], ys, atol=1e-9)


def test_reproject_matches_scalar_compensation(rig_geom, equisolid):
    """批量重投影与逐点的超广角补偿一致"""
    radius = r_max(equisolid, rig_geom) * 0.999
    phi = 0.6
    xs = np.array([radius * math.cos(phi)])
    ys = np.array([radius * math.sin(phi)])
    coords = to_perspective_coords(xs, ys, equisolid, rig_geom)
    assert coords.flags[0]
    xfm, yfm = reproject_candidates(coords, np.array([2.0]), np.array([-3.0]), equisolid, rig_geom, True)

    polar = fisheye_to_perspective(PolarCoord(radius, phi), equisolid, rig_geom)
    expected = ultra_wide_compensate((2.0, -3.0), [(polar, True)], equisolid, rig_geom)[0].fisheye
    cart = polar_to_cart(expected)
    assert xfm[0, 0] == pytest.approx(cart.x, abs=1e-6)
    assert yfm[0, 0] == pytest.approx(cart.y, abs=1e-6)


def test_reproject_outside_circle_is_nan(rig_geom, equisolid):
    coords = to_perspective_coords(np.array([600.0]), np.array([600.0]), equisolid, rig_geom)
    assert not coords.inside[0]
    xfm, _ = reproject_candidates(coords, np.array([0.0]), np.array([0.0]), equisolid, rig_geom, True)
    assert np.isnan(xfm[0, 0])


def _ring_pixels(geom, model):
    """位于 r_180 与 r_max 之间的整数像素（居中坐标）"""
    cx, cy = geom.center
    xs, ys = np.meshgrid(np.arange(geom.width_px) - cx, np.arange(geom.height_px) - cy)
    radius = np.hypot(xs, ys)
    ring = (radius > r_180(model, geom) + 0.5) & (radius <= r_max(model, geom))
    return xs[ring].astype(np.float64), ys[ring].astype(np.float64)


def test_inverted_mirror_zero_candidate_is_exact(rig_geom, equisolid):
    """185° 采集系统: 补偿流水线上零候选把 θ > 90° 的像素送回原位"""
    xs, ys = _ring_pixels(rig_geom, equisolid)
    assert xs.size > 1000
    coords = to_perspective_coords(xs, ys, equisolid, rig_geom, invert_mirror=True)
    assert coords.flags.all()
    xfm, yfm = reproject_candidates(coords, np.array([0.0]), np.array([0.0]), equisolid, rig_geom, True)
    np.testing.assert_allclose(xfm[0], xs, atol=1e-6)
    np.testing.assert_allclose(yfm[0], ys, atol=1e-6)


def test_tan_backprojection_drifts_on_ring(rig_geom, equisolid):
    """直接用 f·tan θ 反投影时，镜像的近似误差在环带上超过 1/8 像素"""
    xs, ys = _ring_pixels(rig_geom, equisolid)
    coords = to_perspective_coords(xs, ys, equisolid, rig_geom)
    xfm, yfm = reproject_candidates(coords, np.array([0.0]), np.array([0.0]), equisolid, rig_geom, True)
    assert np.max(np.hypot(xfm[0] - xs, yfm[0] - ys)) > 0.125


def test_inverted_mirror_leaves_unflagged_pixels(rig_geom, equisolid, rng):
    xs = rng.uniform(-300.0, 300.0, 200)
    ys = rng.uniform(-300.0, 300.0, 200)
    plain = to_perspective_coords(xs, ys, equisolid, rig_geom)
    inverted = to_perspective_coords(xs, ys, equisolid, rig_geom, invert_mirror=True)
    assert not plain.flags.any()
    np.testing.assert_array_equal(plain.xp, inverted.xp)
    np.testing.assert_array_equal(plain.yp, inverted.yp)


def test_inverted_mirror_feeds_scalar_compensation(rig_geom, equisolid):
    """反镜像得到的透视坐标经逐点超广角补偿后与批量重投影一致"""
    radius = r_max(equisolid, rig_geom) * 0.999
    phi = -2.1
    xs = np.array([radius * math.cos(phi)])
    ys = np.array([radius * math.sin(phi)])
    coords = to_perspective_coords(xs, ys, equisolid, rig_geom, invert_mirror=True)
    xfm, yfm = reproject_candidates(coords, np.array([1.0]), np.array([2.0]), equisolid, rig_geom, True)

    polar = cart_to_polar(CartCoord(float(coords.xp[0]), float(coords.yp[0])))
    polar = PolarCoord(-polar.r, normalize_angle(polar.phi + math.pi))
    expected = polar_to_cart(ultra_wide_compensate((1.0, 2.0), [(polar, True)], equisolid, rig_geom)[0].fisheye)
    assert xfm[0, 0] == pytest.approx(expected.x, abs=1e-6)
    assert yfm[0, 0] == pytest.approx(expected.y, abs=1e-6)
