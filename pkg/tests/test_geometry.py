import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from endodepth.geometry import (Intrinsics, RigidTransform, back_project, bilinear_sample,
                                bilinear_sample_grad, bilinear_sample_many, depth_to_pointcloud,
                                pixel_grid, project, project_points, synthesize_view)

K = Intrinsics(fx=120.0, fy=110.0, cx=63.5, cy=47.5, width=128, height=96)


def homogeneous_oracle(p, d, K, M):
    """[K | 0] T [d K^-1 p~; 1], dehomogenized, written with 4x4 matrices only."""
    Kh = np.hstack([K.matrix, np.zeros((3, 1))])
    ray = np.linalg.inv(K.matrix) @ np.array([p[0], p[1], 1.0])
    X = np.append(d * ray, 1.0)
    q = Kh @ M.matrix @ X
    return q[0] / q[2], q[1] / q[2], q[2]


def scalar_bilinear(img, x, y):
    H, W = img.shape
    x = min(max(x, 0.0), W - 1.0)
    y = min(max(y, 0.0), H - 1.0)
    x0 = min(int(np.floor(x)), W - 2)
    y0 = min(int(np.floor(y)), H - 2)
    ax, ay = x - x0, y - y0
    return ((1 - ax) * (1 - ay) * img[y0, x0] + ax * (1 - ay) * img[y0, x0 + 1]
            + (1 - ax) * ay * img[y0 + 1, x0] + ax * ay * img[y0 + 1, x0 + 1])


# -- types ----------------------------------------------------------------------

def test_intrinsics_matrix_and_inverse():
    assert np.allclose(K.matrix @ K.inverse, np.eye(3), atol=1e-15)


def test_from_fov_centers_principal_point():
    k = Intrinsics.from_fov(64, 48, 90.0)
    assert (k.cx, k.cy) == (31.5, 23.5)
    assert k.fx == pytest.approx(31.5)


@pytest.mark.parametrize("kw", [dict(fx=0), dict(fy=-1), dict(cx=200), dict(cy=-0.5),
                                dict(fx=float("nan"))])
def test_intrinsics_validation(kw):
    args = dict(fx=100.0, fy=100.0, cx=10.0, cy=10.0, width=32, height=32)
    args.update(kw)
    with pytest.raises(ValueError):
        Intrinsics(**args)


def test_rigid_transform_rejects_reflection_and_skew():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        RigidTransform(np.eye(3) * 1.001, np.zeros(3))


def test_rigid_transform_algebra():
    rng = np.random.default_rng(0)
    A = RigidTransform.from_axis_angle(rng.normal(size=3), rng.normal(size=3))
    B = RigidTransform.from_axis_angle(rng.normal(size=3), rng.normal(size=3))
    assert (A @ A.inverse()).allclose(RigidTransform.identity())
    assert np.allclose((A @ B).matrix, A.matrix @ B.matrix, atol=1e-12)
    X = rng.normal(size=(5, 3))
    assert np.allclose((A @ B).apply(X), A.apply(B.apply(X)), atol=1e-12)
    assert RigidTransform.from_matrix(A.matrix).allclose(A)


def test_large_angle_rotation_stays_orthonormal():
    R = RigidTransform.from_axis_angle([3.0, -2.0, 1.0]).rotation
    assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-12
    assert np.linalg.det(R) == pytest.approx(1.0)


# -- projection -----------------------------------------------------------------

def test_project_matches_homogeneous_oracle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        M = RigidTransform.from_axis_angle(rng.normal(0, 0.1, 3), rng.normal(0, 5, 3))
        p = rng.uniform([0, 0], [K.width - 1, K.height - 1])
        d = rng.uniform(40, 150)
        pr = project(p, d, K, M)
        x, y, z = homogeneous_oracle(p, d, K, M)
        assert pr.in_front
        assert abs(pr.x - x) < 1e-9 and abs(pr.y - y) < 1e-9 and abs(pr.depth - z) < 1e-9


def test_identity_projection_is_identity():
    p = np.array([12.25, 40.5])
    pr = project(p, 77.0, K, RigidTransform.identity())
    assert (pr.x, pr.y, pr.depth) == pytest.approx((12.25, 40.5, 77.0), abs=1e-12)


def test_back_project_then_project_round_trip():
    p = np.array([100.0, 3.0])
    X = back_project(p, 55.0, K)
    assert X[2] == 55.0
    pr = project(p, 55.0, K, RigidTransform.identity())
    assert np.allclose([pr.x, pr.y], p, atol=1e-12)


def test_behind_camera_is_flagged():
    M = RigidTransform(np.eye(3), [0.0, 0.0, -200.0])
    pr = project([10.0, 10.0], 100.0, K, M)
    assert not pr.in_front and np.isnan(pr.x)
    coords, z, front = project_points(np.array([[10.0, 10.0]]), np.array([100.0]), K, M)
    assert not front[0] and np.isnan(coords[0]).all() and z[0] < 0


@pytest.mark.parametrize("p,d", [([5.0, 5.0], 0.0), ([5.0, 5.0], -3.0), ([float("nan"), 1.0], 50.0),
                                 ([5.0, 5.0], float("inf")), ([128.0, 5.0], 50.0), ([-0.1, 0.0], 50.0)])
def test_project_preconditions(p, d):
    with pytest.raises(ValueError):
        project(p, d, K, RigidTransform.identity())


def test_project_points_agrees_with_scalar_project():
    rng = np.random.default_rng(2)
    M = RigidTransform.from_axis_angle([0.02, -0.01, 0.03], [4.0, -1.0, 2.0])
    P = rng.uniform([0, 0], [K.width - 1, K.height - 1], size=(50, 2))
    d = rng.uniform(40, 150, 50)
    coords, z, front = project_points(P, d, K, M)
    for i in range(50):
        pr = project(P[i], d[i], K, M)
        assert np.allclose(coords[i], [pr.x, pr.y], atol=1e-12) and z[i] == pytest.approx(pr.depth)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0, 127), y=st.floats(0, 95), d=st.floats(1.0, 500.0),
       w=st.tuples(*[st.floats(-0.3, 0.3)] * 3), t=st.tuples(*[st.floats(-20, 20)] * 3))
def test_round_trip_through_inverse_pose(x, y, d, w, t):
    M = RigidTransform.from_axis_angle(w, t)
    pr = project([x, y], d, K, M)
    if not pr.in_front:
        return
    X = np.array([(pr.x - K.cx) / K.fx, (pr.y - K.cy) / K.fy, 1.0]) * pr.depth
    back = M.inverse().apply(X)
    assert np.allclose(back, back_project([x, y], d, K), atol=1e-9 * max(1.0, d))


# -- sampling -------------------------------------------------------------------

def test_bilinear_matches_scalar_oracle_including_clamp():
    rng = np.random.default_rng(3)
    img = rng.random((9, 11))
    coords = rng.uniform([-2, -2], [12, 10], size=(300, 2))
    vals, inb = bilinear_sample_many(img, coords)
    for (x, y), v, ok in zip(coords, vals[:, 0], inb):
        assert v == pytest.approx(scalar_bilinear(img, x, y), abs=1e-14)
        assert ok == (0 <= x <= 10 and 0 <= y <= 8)


def test_bilinear_at_integer_returns_pixel():
    img = np.arange(20.0).reshape(4, 5)
    for y in range(4):
        for x in range(5):
            assert bilinear_sample(img, (x, y)) == (img[y, x], True)


def test_bilinear_nan_coordinate_is_out_of_bounds():
    _, inb = bilinear_sample_many(np.ones((3, 3)), np.array([[np.nan, 1.0]]))
    assert not inb[0]


def test_bilinear_gradient_matches_finite_difference():
    rng = np.random.default_rng(4)
    img = rng.random((10, 12, 2))
    q = rng.uniform(0.5, 8.5, size=(100, 2)) + 0.137
    _, dx, dy, _ = bilinear_sample_grad(img, q)
    h = 1e-6
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    fdx = (bilinear_sample_many(img, q + ex)[0] - bilinear_sample_many(img, q - ex)[0]) / (2 * h)
    fdy = (bilinear_sample_many(img, q + ey)[0] - bilinear_sample_many(img, q - ey)[0]) / (2 * h)
    assert np.allclose(dx, fdx, atol=1e-8) and np.allclose(dy, fdy, atol=1e-8)


def test_bilinear_gradient_is_zero_where_clamped():
    _, dx, dy, inb = bilinear_sample_grad(np.random.default_rng(0).random((5, 5)),
                                          np.array([[-1.0, 2.5], [2.5, 7.0]]))
    assert dx[0, 0] == 0.0 and dy[1, 0] == 0.0 and not inb.any()


# -- warping and point clouds ---------------------------------------------------

def test_synthesize_view_identity_pose_reproduces_source():
    img = np.random.default_rng(5).random((96, 128, 3))
    warped, mask = synthesize_view(np.full((96, 128), 80.0), img, K, RigidTransform.identity())
    assert mask.all()
    assert np.allclose(warped, img, atol=1e-12)


def test_synthesize_view_pure_translation_shifts_by_disparity():
    img = np.random.default_rng(6).random((96, 128))
    b, d = 6.0, 90.0
    M = RigidTransform(np.eye(3), [-b, 0.0, 0.0])
    warped, mask = synthesize_view(np.full((96, 128), d), img, K, M)
    shift = K.fx * b / d
    x = np.arange(128.0) - shift
    expected = np.array([[scalar_bilinear(img, xi, y) for xi in x] for y in range(96)])
    assert np.allclose(warped[mask], expected[mask], atol=1e-12)
    assert not mask[:, 0].any() and mask[:, -1].all()


def test_pointcloud_reprojects_onto_pixel_grid():
    """Rasterize the cloud back through the camera: every point lands on its own pixel."""
    rng = np.random.default_rng(7)
    D = rng.uniform(40, 150, (96, 128))
    pts, cols = depth_to_pointcloud(D, K)
    assert cols is None and pts.shape == (96 * 128, 3)
    u = K.fx * pts[:, 0] / pts[:, 2] + K.cx
    v = K.fy * pts[:, 1] / pts[:, 2] + K.cy
    grid = pixel_grid(96, 128).reshape(-1, 2)
    assert np.allclose(np.stack([u, v], axis=1), grid, atol=1e-9)
    raster = np.zeros((96, 128))
    raster[np.rint(v).astype(int), np.rint(u).astype(int)] = pts[:, 2]
    assert np.array_equal(raster, D)


def test_pointcloud_colors_follow_row_major_order():
    img = np.random.default_rng(8).random((96, 128, 3))
    _, cols = depth_to_pointcloud(np.full((96, 128), 50.0), K, img)
    assert np.array_equal(cols[130], img[1, 2])


def test_pointcloud_rejects_non_positive_depth():
    with pytest.raises(ValueError):
        depth_to_pointcloud(np.zeros((4, 4)), Intrinsics.from_fov(4, 4, 60))
