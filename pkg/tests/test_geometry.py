import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from egomap.errors import BehindCamera
from egomap.geometry import (
    CameraIntrinsics,
    GridSpec,
    Pose,
    bilinear_sample,
    camera_center,
    pose_to_camera_transform,
    project_point,
    project_points,
    relative_rotation,
    rot_y,
    trilinear_sample,
    wrap_degrees,
)

finite = st.floats(-50, 50, allow_nan=False)
azimuths = st.floats(0, 359.999)
elevations = st.floats(-85, 85)


def _intr(f, cx, cy, size=64):
    return CameraIntrinsics(f, cx, cy, size, size)


# -- intrinsics and poses ---------------------------------------------------------


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1, 1, 4, 4)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 4, 1, 4, 4)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1, 1, 0, 4)
    intr = CameraIntrinsics.from_fov(90.0, 64, 48)
    assert intr.f == pytest.approx(32.0)
    assert (intr.cx, intr.cy) == (31.5, 23.5)


def test_pose_validation_and_json():
    with pytest.raises(ValueError):
        Pose(0, 0, 0)
    with pytest.raises(ValueError):
        Pose(0, 91, 4)
    p = Pose(370.0, 20.0, 4.0)
    assert p.azimuth_deg == pytest.approx(10.0)
    assert Pose.from_dict(p.to_dict()) == p
    g = GridSpec()
    assert g.shape == (32, 32, 32)
    assert GridSpec.from_dict(g.to_dict()) == g
    with pytest.raises(ValueError):
        GridSpec(w=1)


# -- projection ---------------------------------------------------------------------


def test_project_point_on_axis():
    assert project_point((0, 0, 5), _intr(35, 32, 32)) == (32, 32)


def test_project_point_unit_example():
    assert project_point((1, 0, 1), _intr(35, 0, 0)) == (35, 0)


def test_project_point_direct_evaluation():
    x, y = project_point((2, 3, 4), _intr(10, 32, 32))
    assert x == pytest.approx(37.0)
    assert y == pytest.approx(39.5)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_project_point_behind_camera(z):
    with pytest.raises(BehindCamera):
        project_point((1, 1, z), _intr(10, 32, 32))


@given(finite, finite, st.floats(0.1, 50), st.floats(0.01, 100))
def test_project_point_homogeneous(x, y, z, lam):
    intr = _intr(17.0, 31.5, 31.5)
    a = project_point((x, y, z), intr)
    b = project_point((lam * x, lam * y, lam * z), intr)
    assert a == pytest.approx(b, abs=1e-9, rel=1e-12)


def test_project_points_matches_scalar_and_flags_behind():
    intr = _intr(20.0, 10.0, 12.0)
    pts = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0], [1.0, 1.0, -1.0]])
    x, y = project_points(pts, intr)
    for i in range(2):
        assert (x[i], y[i]) == pytest.approx(project_point(pts[i], intr))
    assert np.isnan(x[2]) and np.isnan(y[2])


# -- viewing-sphere transform ----------------------------------------------------------


def _look_at_oracle(pose):
    """World-to-camera (R, t) built directly from spherical coordinates and a look-at frame."""
    az, el, r = math.radians(pose.azimuth_deg), math.radians(pose.elevation_deg), pose.radius
    c = r * np.array([-math.cos(el) * math.sin(az), math.sin(el), -math.cos(el) * math.cos(az)])
    z = -c / np.linalg.norm(c)
    x = np.cross(z, [0.0, 1.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return rot, -rot @ c, c


def test_pose_origin_maps_to_optical_axis():
    tf = pose_to_camera_transform(Pose(0, 0, 4))
    np.testing.assert_allclose(tf.apply([0.0, 0.0, 0.0]), [0, 0, 4], atol=1e-12)


def test_pose_point_toward_camera():
    tf = pose_to_camera_transform(Pose(0, 0, 4))
    assert tf.apply([0.0, 0.0, -1.0])[2] == pytest.approx(3.0)


def test_pose_azimuth_is_world_yaw():
    t0 = pose_to_camera_transform(Pose(0, 0, 4))
    t90 = pose_to_camera_transform(Pose(90, 0, 4))
    # camera at az 90 sees the world as camera at az 0 sees it after undoing a 90 degree yaw
    np.testing.assert_allclose(t90.rotation, t0.rotation @ rot_y(90).T, atol=1e-12)
    pts = np.random.default_rng(0).normal(size=(10, 3))
    np.testing.assert_allclose(t90.apply(pts), t0.apply(pts @ rot_y(90)), atol=1e-12)


@given(azimuths, elevations, st.floats(0.5, 10))
def test_pose_matches_look_at_oracle(az, el, r):
    pose = Pose(az, el, r)
    tf = pose_to_camera_transform(pose)
    rot, t, c = _look_at_oracle(pose)
    np.testing.assert_allclose(tf.rotation, rot, atol=1e-9)
    np.testing.assert_allclose(tf.translation, t, atol=1e-9)
    np.testing.assert_allclose(camera_center(pose), c, atol=1e-9)


@given(azimuths, elevations, st.floats(0.5, 10))
def test_pose_transform_orthonormal_and_invertible(az, el, r):
    tf = pose_to_camera_transform(Pose(az, el, r))
    np.testing.assert_allclose(tf.rotation.T @ tf.rotation, np.eye(3), atol=1e-9)
    ident = tf.compose(tf.inverse())
    np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(ident.translation, 0.0, atol=1e-9)
    # zero roll: camera x axis stays horizontal
    assert abs(tf.rotation[0, 1]) < 1e-9


# -- relative rotation ---------------------------------------------------------------


def test_relative_rotation_examples():
    assert relative_rotation(Pose(30, 20, 4), Pose(30, 20, 4)) == (0.0, 0.0)
    assert relative_rotation(Pose(350, 0, 4), Pose(10, 0, 4))[0] == pytest.approx(-20.0)
    assert relative_rotation(Pose(40, 60, 4), Pose(20, 20, 4)) == pytest.approx((20.0, 40.0))


def test_wrap_degrees_range():
    assert wrap_degrees(180.0) == 180.0
    assert wrap_degrees(-180.0) == 180.0
    assert wrap_degrees(540.0) == 180.0
    assert wrap_degrees(-190.0) == pytest.approx(170.0)
    np.testing.assert_allclose(wrap_degrees(np.array([0.0, 370.0])), [0.0, 10.0])


@given(azimuths, elevations, azimuths, elevations)
def test_relative_rotation_antisymmetric(az1, el1, az2, el2):
    a, b = Pose(az1, el1, 4), Pose(az2, el2, 4)
    ab, ba = relative_rotation(a, b), relative_rotation(b, a)
    assert -180 < ab[0] <= 180
    assert wrap_degrees(ab[0] + ba[0]) == pytest.approx(0.0, abs=1e-9)
    assert ab[1] == pytest.approx(-ba[1])


# -- interpolation ------------------------------------------------------------------


def test_bilinear_examples():
    img = np.arange(48, dtype=float).reshape(6, 8)
    assert bilinear_sample(img, 3, 5) == img[5, 3]
    ramp = np.tile(np.arange(8, dtype=float), (6, 1))
    assert bilinear_sample(ramp, 1.5, 2.0) == pytest.approx(1.5)
    assert bilinear_sample(np.array([[0.0, 1.0], [2.0, 3.0]]), 0.5, 0.5) == pytest.approx(1.5)


def test_bilinear_out_of_bounds_is_zero():
    img = np.ones((4, 5, 3))
    out = bilinear_sample(img, np.array([-0.01, 4.01, 2.0, 2.0]), np.array([1.0, 1.0, -0.5, 3.5]))
    np.testing.assert_array_equal(out, 0.0)
    np.testing.assert_array_equal(bilinear_sample(img, 4.0, 3.0), [1, 1, 1])


def test_trilinear_examples():
    vol = np.random.default_rng(1).normal(size=(5, 6, 7))
    assert trilinear_sample(vol, 2, 3, 4) == vol[2, 3, 4]
    zramp = np.broadcast_to(np.arange(7, dtype=float), (5, 6, 7))
    assert trilinear_sample(zramp, 1.0, 2.0, 2.25) == pytest.approx(2.25)
    corners = np.arange(8, dtype=float).reshape(2, 2, 2)
    assert trilinear_sample(corners, 0.5, 0.5, 0.5) == pytest.approx(3.5)


def test_trilinear_out_of_bounds_is_zero():
    vol = np.ones((4, 4, 4, 2))
    out = trilinear_sample(vol, np.array([-0.1, 3.1, 1.0]), np.array([1.0, 1.0, 1.0]), np.array([1.0, 1.0, 3.5]))
    np.testing.assert_array_equal(out, 0.0)


coef = st.floats(-3, 3)


@given(coef, coef, coef, st.integers(0, 10_000))
def test_bilinear_exact_on_affine(a, b, c, seed):
    ys, xs = np.mgrid[0:9, 0:11].astype(float)
    img = a * xs + b * ys + c
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 10, 50), rng.uniform(0, 8, 50)
    assert np.max(np.abs(bilinear_sample(img, x, y) - (a * x + b * y + c))) < 1e-5


@given(coef, coef, coef, coef, st.integers(0, 10_000))
def test_trilinear_exact_on_affine(a, b, c, e, seed):
    X, Y, Z = np.meshgrid(np.arange(6.0), np.arange(7.0), np.arange(8.0), indexing="ij")
    vol = a * X + b * Y + c * Z + e
    rng = np.random.default_rng(seed)
    x, y, z = rng.uniform(0, 5, 50), rng.uniform(0, 6, 50), rng.uniform(0, 7, 50)
    got = trilinear_sample(vol, x, y, z)
    assert np.max(np.abs(got - (a * x + b * y + c * z + e))) < 1e-5


@given(st.integers(0, 10_000))
def test_trilinear_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    vol = rng.normal(size=(6, 7, 5))
    pts = rng.uniform(0, 1, size=(3, 200)) * (np.array(vol.shape)[:, None] - 1)
    ours = trilinear_sample(vol, *pts)
    ref = ndimage.map_coordinates(vol, pts, order=1, mode="nearest")
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_trilinear_skip_empty_is_exact():
    rng = np.random.default_rng(3)
    vol = np.zeros((10, 10, 10, 2))
    vol[4:6, 3:5, 6:8] = rng.normal(size=(2, 2, 2, 2))
    pts = rng.uniform(-1, 10, size=(3, 500))
    np.testing.assert_array_equal(trilinear_sample(vol, *pts), trilinear_sample(vol, *pts, skip_empty=True))
