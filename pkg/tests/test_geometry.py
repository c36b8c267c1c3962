import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latentdepth import geometry as g
from latentdepth.geometry import Intrinsics, PosedView, RigidTransform

INTR = Intrinsics(50.0, 52.0, 15.5, 11.5)


def random_pose(rng, scale=0.5):
    axis = rng.normal(size=3)
    return RigidTransform(g.rotation_about(axis, rng.uniform(-0.4, 0.4)), rng.normal(size=3) * scale)


def test_intrinsics_grid_is_inverse_k():
    Q = INTR.normalized_grid(24, 32)
    u, v = INTR.to_pixels(Q)
    np.testing.assert_allclose(u, np.tile(np.arange(32.0), (24, 1)), atol=1e-12)
    np.testing.assert_allclose(v, np.tile(np.arange(24.0)[:, None], (1, 32)), atol=1e-12)
    pix = np.array([7.0, 3.0, 1.0])
    np.testing.assert_allclose(np.linalg.solve(INTR.K, pix)[:2], Q[3, 7])


def test_posed_view_rejects_bad_rotation():
    with pytest.raises(ValueError):
        PosedView(np.zeros((4, 4)), RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3)), INTR)
    v = PosedView(np.zeros((4, 5)), RigidTransform.identity(), INTR)
    assert v.image.shape == (4, 5, 1) and v.Q.shape == (4, 5, 2)


def test_relative_transform_identities():
    rng = np.random.default_rng(0)
    a, b = random_pose(rng), random_pose(rng)
    Tii = g.relative_transform(a, a)
    np.testing.assert_allclose(Tii.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(Tii.translation, 0, atol=1e-12)
    round_trip = g.relative_transform(b, a).compose(g.relative_transform(a, b))
    np.testing.assert_allclose(round_trip.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(round_trip.translation, 0, atol=1e-9)


def test_relative_transform_maps_camera_points():
    rng = np.random.default_rng(1)
    a, b = random_pose(rng), random_pose(rng)
    Xw = rng.normal(size=(10, 3))
    np.testing.assert_allclose(g.relative_transform(a, b).apply(a.apply(Xw)), b.apply(Xw), atol=1e-12)
    np.testing.assert_allclose(a.apply(a.center[None])[0], 0, atol=1e-12)


def test_backproject_examples():
    assert g.backproject(np.zeros((1, 1, 2)), np.full((1, 1), 5.0))[0, 0].tolist() == [0, 0, 5]
    X = g.backproject(INTR.normalized_grid(3, 3), np.zeros((3, 3)))
    assert np.all(X == 0)
    with pytest.raises(ValueError):
        g.backproject(np.zeros((2, 2, 2)), np.zeros((3, 2)))


def test_backproject_reproject_round_trip():
    rng = np.random.default_rng(2)
    Q = INTR.normalized_grid(24, 32)
    D = rng.uniform(0.5, 20, size=(24, 32))
    q, depth, chir = g.warp(g.backproject(Q, D), RigidTransform.identity())
    u, v = INTR.to_pixels(q)
    np.testing.assert_allclose(u, np.arange(32.0)[None].repeat(24, 0), atol=1e-9)
    np.testing.assert_allclose(v, np.arange(24.0)[:, None].repeat(32, 1), atol=1e-9)
    np.testing.assert_allclose(q, Q, atol=1e-9)
    np.testing.assert_allclose(depth, D, atol=1e-9)
    assert chir.all()


def test_pure_translation_adds_depth():
    D = np.full((4, 4), 3.0)
    _, depth, _ = g.warp(g.backproject(INTR.normalized_grid(4, 4), D),
                         RigidTransform(np.eye(3), [0, 0, 1.5]))
    np.testing.assert_allclose(depth, 4.5)


def test_rotation_to_zero_depth():
    R = np.array([[1.0, 0, 0], [0, 0, -1], [0, 1, 0]])  # exact 90 deg about x
    np.testing.assert_allclose(g.rotation_about((1, 0, 0), np.pi / 2), R, atol=1e-15)
    q, depth, chir = g.warp(np.array([[0.0, 0.0, 5.0]]), RigidTransform(R, np.zeros(3)))
    np.testing.assert_allclose(R @ [0, 0, 5.0], [0, -5, 0], atol=1e-12)
    assert not chir[0]
    assert depth[0] == 0.0 and np.isnan(q).all()


def test_exact_zero_depth_flagged():
    q, depth, chir = g.warp(np.array([[1.0, 2.0, 0.0]]), RigidTransform.identity())
    assert np.isnan(q).all() and not chir[0]


def test_warp_composition():
    rng = np.random.default_rng(3)
    a, b, c = random_pose(rng, 0.2), random_pose(rng, 0.2), random_pose(rng, 0.2)
    X = g.backproject(INTR.normalized_grid(8, 8), rng.uniform(3, 6, size=(8, 8)))
    Tij, Tjk, Tik = g.relative_transform(a, b), g.relative_transform(b, c), g.relative_transform(a, c)
    q1, d1, ch1 = g.warp(X, Tjk.compose(Tij))
    q2, d2, ch2 = g.warp(X, Tik)
    np.testing.assert_array_equal(ch1, ch2)
    np.testing.assert_allclose(q1[ch1], q2[ch1], atol=1e-7)
    np.testing.assert_allclose(d1[ch1], d2[ch1], atol=1e-7)


def test_sample_bilinear_examples():
    rng = np.random.default_rng(4)
    grid = rng.normal(size=(6, 7, 2))
    ys, xs = np.mgrid[0:6, 0:7]
    vals, ok = g.sample_bilinear(grid, np.stack([xs, ys], -1).astype(float))
    assert ok.all()
    np.testing.assert_allclose(vals, grid, atol=1e-15)
    flat = np.full((3, 3), 4.0)
    v, ok = g.sample_bilinear(flat, np.array([[0.5, 0.5], [1.5, 1.5]]))
    np.testing.assert_allclose(v, 4.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-5, 5))
def test_bilinear_exact_on_ramp(a, b, c):
    h, w = 9, 11
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    grid = a * xs + b * ys + c
    rng = np.random.default_rng(0)
    pts = np.stack([rng.uniform(0, w - 1, 200), rng.uniform(0, h - 1, 200)], -1)
    pts[0] = [w - 1, h - 1]
    v, ok = g.sample_bilinear(grid, pts)
    assert ok.all()
    np.testing.assert_allclose(v, a * pts[:, 0] + b * pts[:, 1] + c, atol=1e-9)


def test_out_of_bounds_is_zero_and_flagged():
    grid = np.ones((4, 4))
    pts = np.array([[-0.1, 1.0], [1.0, 3.01], [np.nan, 1.0], [3.0, 3.0]])
    v, ok = g.sample_bilinear(grid, pts)
    assert ok.tolist() == [False, False, False, True]
    assert v.tolist() == [0.0, 0.0, 0.0, 1.0]


def test_normals_fronto_parallel():
    X = g.backproject(INTR.normalized_grid(8, 9), np.full((8, 9), 4.0))
    n, valid = g.estimate_normals(X)
    assert valid.all()
    np.testing.assert_allclose(n, np.broadcast_to([0, 0, -1.0], n.shape), atol=1e-12)


def test_normals_steep_plane_exceeds_85_degrees():
    from latentdepth.masking import viewing_angles
    # plane Z = x tan(85.1 deg) + c; intersect each pixel ray analytically
    k, c = np.tan(np.radians(85.1)), 5.0
    Q = Intrinsics(50, 50, 4, 4).normalized_grid(9, 9)
    D = c / (1 - k * Q[..., 0])
    X = g.backproject(Q, D)
    n, valid = g.estimate_normals(X)
    ang = viewing_angles(n, X)
    assert valid[4, 4] and ang[4, 4] > 85.0


def test_normals_sphere_patch():
    center, r = np.array([0.0, 0.0, 6.0]), 2.0
    Q = Intrinsics(60, 60, 10, 10).normalized_grid(21, 21)
    d = np.concatenate([Q, np.ones(Q.shape[:2] + (1,))], -1)
    a = np.sum(d * d, -1)
    bq = -2 * d @ center
    cq = center @ center - r * r
    D = (-bq - np.sqrt(bq * bq - 4 * a * cq)) / (2 * a)
    X = g.backproject(Q, D)
    n, valid = g.estimate_normals(X)
    truth = (X - center) / r
    inner = (slice(1, -1), slice(1, -1))
    cosang = np.sum(n[inner] * truth[inner], -1)
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).max() < 1.0


def test_normals_degenerate_flagged_and_small_grid_rejected():
    X = np.zeros((4, 4, 3))
    _, valid = g.estimate_normals(X)
    assert not valid.any()
    with pytest.raises(ValueError):
        g.estimate_normals(np.zeros((2, 5, 3)))


def test_look_at_points_camera_at_target():
    pose = g.look_at([1.0, 0.5, 0.0], [0.0, 0.0, 5.0])
    assert pose.is_rotation_valid()
    p = pose.apply(np.array([0.0, 0.0, 5.0]))
    np.testing.assert_allclose(p[:2], 0, atol=1e-12)
    assert p[2] > 0
    np.testing.assert_allclose(pose.center, [1.0, 0.5, 0.0], atol=1e-12)
