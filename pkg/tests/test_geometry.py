import numpy as np
import pytest
from conftest import CAL_DIST, random_distortion, wide_camera

from rigsplat import geometry as geo
from rigsplat.errors import ConfigInvalid, NoConvergence, PointBehindCamera


def small_camera(dist):
    return geo.CameraModel(160, 120, 120.0, 120.0, 80.0, 60.0, dist)


def radial_inverse_map(dist):
    """Independent radial-profile inversion by dense monotone interpolation.

    Only valid for purely radial coefficient sets (p1 = p2 = 0); used as
    a non-circular oracle for the Newton-based undistortion.
    """
    r = np.linspace(0.0, geo.R_MAX, 200001)
    s = r * r
    num = 1.0 + s * (dist[0] + s * (dist[1] + s * dist[2]))
    den = 1.0 + s * (dist[3] + s * (dist[4] + s * dist[5]))
    profile = r * num / den
    keep = np.concatenate([[True], np.diff(profile) > 0])
    profile, r = profile[keep], r[keep]

    def invert(xy_d):
        rd = np.linalg.norm(xy_d, axis=-1)
        ru = np.interp(rd, profile, r)
        scale = np.where(rd > 0, ru / np.where(rd > 0, rd, 1.0), 1.0)
        return xy_d * scale[..., None]

    return invert


# -- distort ------------------------------------------------------------------


def test_distort_identity_with_zero_coeffs():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-2.0, 2.0, (50, 2))
    np.testing.assert_array_equal(geo.distort(pts, np.zeros(8)), pts)


def test_distort_center_is_fixed_point():
    rng = np.random.default_rng(1)
    for _ in range(10):
        dist = random_distortion(rng)
        np.testing.assert_array_equal(geo.distort(np.zeros((1, 2)), dist), np.zeros((1, 2)))


def test_distort_tangential_hand_values():
    dist = np.zeros(8)
    dist[6] = 0.01
    out = geo.distort(np.array([[0.2, 0.1]]), dist)
    np.testing.assert_allclose(out, [[0.2004, 0.1007]], atol=1e-15)


def test_distortion_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(5):
        dist = random_distortion(rng)
        pts = rng.uniform(-1.5, 1.5, (40, 2))
        jac = geo.distortion_jacobian(pts, dist)
        for axis in range(2):
            step = np.zeros(2)
            step[axis] = h
            fd = (geo.distort(pts + step, dist) - geo.distort(pts - step, dist)) / (2 * h)
            np.testing.assert_allclose(jac[:, :, axis], fd, rtol=1e-5, atol=1e-8)


# -- undistort ----------------------------------------------------------------


def test_undistort_identity_with_zero_coeffs():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-2.0, 2.0, (50, 2))
    np.testing.assert_allclose(geo.undistort(pts, np.zeros(8)), pts, atol=1e-12)


def test_undistort_center_is_fixed_point():
    rng = np.random.default_rng(4)
    for _ in range(10):
        dist = random_distortion(rng)
        out = geo.undistort(np.zeros((1, 2)), dist)
        np.testing.assert_array_equal(out, np.zeros((1, 2)))


def test_undistort_round_trip_property():
    rng = np.random.default_rng(5)
    for _ in range(5):
        dist = random_distortion(rng)
        limit = geo.radial_validity_limit(dist)
        radius = rng.uniform(0.0, 0.95 * limit, 400)
        angle = rng.uniform(0.0, 2 * np.pi, 400)
        pts = radius[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        np.testing.assert_allclose(geo.undistort(geo.distort(pts, dist), dist), pts, atol=1e-10)
        # Opposite direction, sampling the distorted plane.
        bound = 0.95 * geo.distorted_radius_limit(dist)
        pts_d = pts / np.maximum(np.linalg.norm(pts, axis=1, keepdims=True), 1e-9)
        pts_d = pts_d * rng.uniform(0.0, bound, 400)[:, None]
        np.testing.assert_allclose(geo.distort(geo.undistort(pts_d, dist), dist), pts_d, atol=1e-10)


def test_undistort_matches_radial_profile_oracle():
    dist = np.array([-0.15, 0.01, 0.0, -0.02, 0.0, 0.0, 0.0, 0.0])
    invert = radial_inverse_map(dist)
    rng = np.random.default_rng(6)
    pts_d = rng.uniform(-0.6, 0.6, (200, 2))
    np.testing.assert_allclose(geo.undistort(pts_d, dist), invert(pts_d), atol=1e-7)


def test_undistort_rejects_points_outside_invertible_region():
    dist = np.zeros(8)
    dist[0] = -0.5
    # Radial profile folds at r = sqrt(2/3); beyond its image there is
    # no preimage to find.
    with pytest.raises(NoConvergence) as info:
        geo.undistort(np.array([[0.9, 0.0]]), dist)
    assert info.value.residual >= 0.0


def test_radial_validity_limit():
    assert geo.radial_validity_limit(np.zeros(8)) == geo.R_MAX
    dist = np.zeros(8)
    dist[0] = -0.5
    assert abs(geo.radial_validity_limit(dist) - np.sqrt(2.0 / 3.0)) < 3e-3
    assert geo.radial_validity_limit(CAL_DIST) == geo.R_MAX


# -- projection ---------------------------------------------------------------


def test_project_principal_point():
    cam = wide_camera()
    out = geo.project(np.array([[0.0, 0.0, 1.0]]), geo.Pose.identity(), cam)
    np.testing.assert_allclose(out, [[960.0, 540.0]], atol=1e-12)


def test_project_hand_value_with_k1():
    dist = np.zeros(8)
    dist[0] = 0.1
    cam = wide_camera(dist)
    out = geo.project(np.array([[0.1, 0.0, 1.0]]), geo.Pose.identity(), cam)
    np.testing.assert_allclose(out, [[1010.05, 540.0]], atol=1e-9)


def test_project_equals_pinhole_without_distortion():
    rng = np.random.default_rng(7)
    cam = wide_camera()
    pose = geo.Pose(rng.normal(size=4), rng.normal(size=3) * 0.1)
    pts = rng.uniform(-0.5, 0.5, (100, 3)) + [0.0, 0.0, 3.0]
    pc = pose.apply(pts)
    expected = np.stack(
        [cam.fx * pc[:, 0] / pc[:, 2] + cam.cx, cam.fy * pc[:, 1] / pc[:, 2] + cam.cy],
        axis=1,
    )
    np.testing.assert_allclose(geo.project(pts, pose, cam), expected, atol=1e-10)


def test_project_raises_behind_camera():
    cam = wide_camera()
    with pytest.raises(PointBehindCamera):
        geo.project(np.array([[0.0, 0.0, -1.0]]), geo.Pose.identity(), cam)
    with pytest.raises(PointBehindCamera):
        geo.project(np.array([[0.0, 0.0, 0.0]]), geo.Pose.identity(), cam)


def test_project_finite_across_fov():
    cam = wide_camera(CAL_DIST)
    angles = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)
    rays = np.stack(
        [geo.R_MAX * np.cos(angles), geo.R_MAX * np.sin(angles), np.ones_like(angles)],
        axis=1,
    )
    out = geo.project(rays, geo.Pose.identity(), cam)
    assert np.all(np.isfinite(out))


# -- poses --------------------------------------------------------------------


def test_pose_identity_and_inverse():
    ident = geo.Pose.identity()
    np.testing.assert_allclose(ident.inverse().q, ident.q)
    np.testing.assert_allclose(ident.inverse().t, ident.t)
    pts = np.random.default_rng(8).normal(size=(10, 3))
    np.testing.assert_array_equal(ident.apply(pts), pts)


def test_pose_compose_translations():
    first = geo.Pose.identity()
    first.t[:] = [1.0, 0.0, 0.0]
    second = geo.Pose.identity()
    second.t[:] = [0.0, 1.0, 0.0]
    combined = second.compose(first)
    np.testing.assert_allclose(combined.apply(np.zeros(3)), [1.0, 1.0, 0.0], atol=1e-15)


def test_pose_group_laws():
    rng = np.random.default_rng(9)
    for _ in range(20):
        pose = geo.Pose(rng.normal(size=4), rng.normal(size=3))
        round_trip = pose.compose(pose.inverse())
        np.testing.assert_allclose(np.abs(round_trip.q[0]), 1.0, atol=1e-9)
        np.testing.assert_allclose(round_trip.t, 0.0, atol=1e-9)
        pts = rng.normal(size=(5, 3))
        np.testing.assert_allclose(pose.inverse().apply(pose.apply(pts)), pts, atol=1e-9)


def test_pose_compose_associative():
    rng = np.random.default_rng(10)
    for _ in range(10):
        a, b, c = (geo.Pose(rng.normal(size=4), rng.normal(size=3)) for _ in range(3))
        pts = rng.normal(size=(5, 3))
        left = a.compose(b).compose(c).apply(pts)
        right = a.compose(b.compose(c)).apply(pts)
        np.testing.assert_allclose(left, right, atol=1e-9)


def test_pose_center():
    pose = geo.Pose.identity()
    pose.t[:] = [1.0, 2.0, 3.0]
    np.testing.assert_allclose(pose.center(), [-1.0, -2.0, -3.0])


def test_quaternion_matrix_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(50):
        q = geo.quat_normalize(rng.normal(size=4))
        np.testing.assert_allclose(
            geo.quat_to_matrix(geo.matrix_to_quat(geo.quat_to_matrix(q))),
            geo.quat_to_matrix(q),
            atol=1e-9,
        )
    # Near-pi rotations exercise every branch of the matrix conversion.
    for axis in np.eye(3):
        w = axis * (np.pi - 1e-3)
        rot = geo.quat_to_matrix(geo.quat_from_axis_angle(w))
        np.testing.assert_allclose(geo.quat_to_matrix(geo.matrix_to_quat(rot)), rot, atol=1e-9)


def test_axis_angle_round_trip():
    rng = np.random.default_rng(12)
    for _ in range(50):
        w = rng.normal(size=3)
        w *= rng.uniform(0.0, np.pi - 0.1) / np.linalg.norm(w)
        back = geo.axis_angle_from_quat(geo.quat_from_axis_angle(w))
        np.testing.assert_allclose(back, w, atol=1e-9)
    tiny = np.array([1e-13, -2e-13, 5e-14])
    np.testing.assert_allclose(geo.axis_angle_from_quat(geo.quat_from_axis_angle(tiny)), tiny, atol=1e-15)


def test_rotation_matches_quaternion_rotation():
    rng = np.random.default_rng(13)
    pose = geo.Pose(rng.normal(size=4), np.zeros(3))
    pts = rng.normal(size=(20, 3))
    np.testing.assert_allclose(pose.apply(pts), pts @ geo.quat_to_matrix(pose.q).T, atol=1e-12)


# -- camera model -------------------------------------------------------------


def test_camera_serialization_round_trip(tmp_path):
    cam = wide_camera(CAL_DIST)
    path = tmp_path / "camera.json"
    cam.save(path)
    loaded = geo.CameraModel.load(path)
    assert loaded.width == cam.width and loaded.height == cam.height
    np.testing.assert_array_equal(loaded.dist, cam.dist)
    assert loaded.fx == cam.fx and loaded.cy == cam.cy
    doc = cam.to_dict()
    assert set(doc) == {"model", "width", "height", "fx", "fy", "cx", "cy", *geo.DIST_KEYS}


def test_camera_document_validation():
    doc = wide_camera().to_dict()
    bad = dict(doc, model="pinhole")
    with pytest.raises(ConfigInvalid):
        geo.CameraModel.from_dict(bad)
    missing = dict(doc)
    del missing["k4"]
    with pytest.raises(ConfigInvalid):
        geo.CameraModel.from_dict(missing)
    with pytest.raises(ConfigInvalid):
        geo.CameraModel.from_dict(dict(doc, fx=-1.0))
    with pytest.raises(ConfigInvalid):
        geo.CameraModel.from_dict(dict(doc, cx=5000.0))


# -- image rectification --------------------------------------------------------


def test_undistort_image_identity_with_zero_coeffs():
    rng = np.random.default_rng(14)
    cam = small_camera(np.zeros(8))
    img = rng.random((cam.height, cam.width))
    np.testing.assert_allclose(geo.undistort_image(img, cam), img, atol=1e-12)


def _distorted_render(cam, ideal_fn):
    """Render what the distorted camera sees of an ideal-pixel-space scene."""
    invert = radial_inverse_map(cam.dist)
    u, v = np.meshgrid(np.arange(cam.width, dtype=float), np.arange(cam.height, dtype=float))
    xy_d = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy], axis=-1)
    xy = invert(xy_d)
    return ideal_fn(cam.fx * xy[..., 0] + cam.cx, cam.fy * xy[..., 1] + cam.cy)


def test_undistort_image_straightens_lines():
    dist = np.array([-0.15, 0.01, 0.0, -0.02, 0.0, 0.0, 0.0, 0.0])
    cam = small_camera(dist)

    def line_scene(u, v):
        d = (u - 0.3 * v - 40.0) / np.sqrt(1.09)
        return np.exp(-0.5 * (d / 2.0) ** 2)

    rectified = geo.undistort_image(_distorted_render(cam, line_scene), cam)
    ridge = []
    rows = np.arange(20, 100)
    for v in rows:
        u = int(np.argmax(rectified[v]))
        prev, here, nxt = rectified[v, u - 1 : u + 2]
        denom = prev - 2.0 * here + nxt
        ridge.append(u + 0.5 * (prev - nxt) / denom)
    ridge = np.array(ridge)
    coeffs = np.polyfit(rows, ridge, 1)
    residual = ridge - np.polyval(coeffs, rows)
    assert np.abs(residual).max() < 0.5
    # The fitted line is the one that was drawn.
    np.testing.assert_allclose(coeffs, [0.3, 40.0], atol=0.2)


def test_undistort_image_restores_checkerboard_corners():
    cam = small_camera(np.array([-0.12, 0.008, 0.0, -0.015, 0.0, 0.0, 0.0, 0.0]))
    period = 24.0

    def board_scene(u, v):
        pattern = np.tanh(2.0 * np.sin(2 * np.pi * u / period)) * np.tanh(
            2.0 * np.sin(2 * np.pi * v / period)
        )
        return 0.5 + 0.45 * pattern

    rectified = geo.undistort_image(_distorted_render(cam, board_scene), cam)

    def saddle(img, cu, cv):
        # Quadratic surface fit over a 5x5 patch; the corner is its
        # stationary point.
        ys, xs = np.mgrid[-2:3, -2:3]
        patch = img[cv - 2 : cv + 3, cu - 2 : cu + 3].ravel()
        cols = np.stack(
            [np.ones(25), xs.ravel(), ys.ravel(), xs.ravel() ** 2, (xs * ys).ravel(), ys.ravel() ** 2],
            axis=1,
        )
        c = np.linalg.lstsq(cols, patch, rcond=None)[0]
        shift = np.linalg.solve([[2 * c[3], c[4]], [c[4], 2 * c[5]]], [-c[1], -c[2]])
        return cu + shift[0], cv + shift[1]

    # Saddle points of the pattern sit at multiples of half the period.
    for cu in (36, 60, 84, 108):
        for cv in (36, 60, 84):
            found = saddle(rectified, cu, cv)
            assert np.hypot(found[0] - cu, found[1] - cv) < 0.3


def test_undistort_image_blanks_unseen_pixels():
    dist = np.zeros(8)
    dist[0] = 0.1
    cam = small_camera(dist)
    img = np.ones((cam.height, cam.width))
    out = geo.undistort_image(img, cam)
    assert out[0, 0] == 0.0 and out[-1, -1] == 0.0
    assert out[cam.height // 2, cam.width // 2] == 1.0


def test_undistort_image_accepts_new_intrinsics():
    rng = np.random.default_rng(15)
    cam = small_camera(np.array([-0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    img = rng.random((cam.height, cam.width))
    wider = geo.CameraModel(200, 150, 60.0, 60.0, 100.0, 75.0)
    out = geo.undistort_image(img, cam, wider)
    assert out.shape == (150, 200)
    # The optical axis is a fixed point of the remap.
    np.testing.assert_allclose(out[75, 100], img[60, 80], atol=1e-12)
