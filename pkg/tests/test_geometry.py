import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowdepth import (
    CameraIntrinsics,
    DepthMap,
    RigidTransform,
    bilinear_sample,
    make_plane_scene,
    project,
    transform_point,
    unproject,
    unproject_depth_map,
)
from flowdepth.errors import InvalidDepthError, NonProjectableError, ValidationError
from tests.oracles import random_rotation

K128 = CameraIntrinsics(100.0, 100.0, 64.0, 64.0, 128, 128)


def test_project_principal_point():
    np.testing.assert_array_equal(project([0.0, 0.0, 2.0], K128), [64.0, 64.0])


def test_project_pinhole_arithmetic():
    np.testing.assert_allclose(project([0.5, 0.0, 1.0], K128), [114.0, 64.0], atol=0, rtol=0)


def test_project_behind_camera_raises():
    with pytest.raises(NonProjectableError):
        project([0.0, 0.0, 0.0], K128)
    with pytest.raises(NonProjectableError):
        project([0.0, 0.0, -1.0], K128)


def test_unproject_examples():
    np.testing.assert_allclose(unproject([64.0, 64.0], 3.0, K128), [0.0, 0.0, 3.0])
    np.testing.assert_allclose(unproject([164.0, 64.0], 1.0, K128), [1.0, 0.0, 1.0])


def test_unproject_rejects_non_positive_depth():
    with pytest.raises(InvalidDepthError):
        unproject([1.0, 1.0], 0.0, K128)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-50, 200),
    st.floats(-50, 200),
    st.floats(1e-3, 1e3),
)
def test_project_unproject_round_trip(x, y, d):
    u = project(unproject([x, y], d, K128), K128)
    np.testing.assert_allclose(u, [x, y], atol=1e-9, rtol=0)


def test_plane_unprojection_has_constant_z():
    scene = make_plane_scene(depth=2.0)
    pts, valid = unproject_depth_map(scene.depth_gt[0], scene.K)
    assert valid.all()
    np.testing.assert_allclose(pts[..., 2], 2.0, atol=1e-9, rtol=0)


def test_invalid_pixels_unproject_to_nan():
    d = DepthMap(np.array([[1.0, 0.0], [np.nan, 2.0]]))
    pts, valid = unproject_depth_map(d, CameraIntrinsics(10, 10, 0.5, 0.5, 2, 2))
    np.testing.assert_array_equal(valid, [[True, False], [False, True]])
    assert np.isnan(pts[0, 1]).all() and np.isnan(pts[1, 0]).all()


def test_transform_identity_inverse_and_composition():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = rng.normal(size=3)
        t1 = RigidTransform(random_rotation(rng, 1.0), rng.normal(size=3))
        t2 = RigidTransform(random_rotation(rng, 1.0), rng.normal(size=3))
        np.testing.assert_array_equal(transform_point(p, RigidTransform.identity()), p)
        np.testing.assert_allclose(transform_point(transform_point(p, t1), t1.inverse()), p, atol=1e-9)
        np.testing.assert_allclose(
            transform_point(p, t2 @ t1), transform_point(transform_point(p, t1), t2), atol=1e-9
        )


def test_rotation_repair_and_rejection():
    r = np.eye(3)
    r[0, 1] = 5e-7  # slightly off, repaired onto SO(3)
    fixed = RigidTransform(r, np.zeros(3))
    np.testing.assert_allclose(fixed.rotation.T @ fixed.rotation, np.eye(3), atol=1e-12)
    r[0, 1] = 1e-3
    with pytest.raises(ValidationError) as info:
        RigidTransform(r, np.zeros(3))
    assert "rotation" in str(info.value)
    with pytest.raises(ValidationError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_intrinsics_validation_names_field():
    with pytest.raises(ValidationError) as info:
        CameraIntrinsics(0.0, 1.0, 0, 0, 4, 4)
    assert info.value.field == "fx"


def test_bilinear_examples():
    raster = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])
    v, ok = bilinear_sample(raster, 1.0, 1.0)
    assert v == 4.0 and ok
    v, ok = bilinear_sample(raster, 0.5, 0.0)
    assert v == 0.5 and ok
    _, ok = bilinear_sample(raster, -0.5, 0.0)
    assert not ok


def test_bilinear_far_edge_is_exact_and_in_bounds():
    raster = np.arange(12.0).reshape(3, 4)
    v, ok = bilinear_sample(raster, 3.0, 2.0)
    assert ok and v == 11.0
    _, ok = bilinear_sample(raster, 3.0 + 1e-9, 2.0)
    assert not ok


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 4), st.floats(0, 3))
def test_bilinear_reproduces_affine_fields(x, y):
    ys, xs = np.mgrid[0:4, 0:5].astype(float)
    field = 2.0 * xs - 3.0 * ys + 1.0
    v, ok = bilinear_sample(field, x, y)
    assert ok
    assert abs(v - (2.0 * x - 3.0 * y + 1.0)) < 1e-12
