"""Board-view generation, frame curation, and the calibration solver."""

import numpy as np
import pytest

from conftest import band_limited_texture

from rigsplat import geometry as geo
from rigsplat import imaging
from rigsplat.errors import ConfigInvalid, RankDeficient
from rigsplat.sfm.calibration import BoardView, calibrate, frame_curation
from rigsplat.synth.board import BoardGeometry, generate_board_views, _euler_rotation

CAL_DIST = np.array([-0.02, 1.5e-3, -2e-5, -0.01, 8e-4, -1e-5, 5e-4, -3e-4])


def true_camera() -> geo.CameraModel:
    f = 960.0 / geo.R_MAX
    return geo.CameraModel(
        width=1920,
        height=1080,
        fx=f,
        fy=1.01 * f,
        cx=955.0,
        cy=545.0,
        dist=CAL_DIST.copy(),
    )


def init_camera() -> geo.CameraModel:
    return geo.CameraModel(
        width=1920,
        height=1080,
        fx=180.0,
        fy=180.0,
        cx=960.0,
        cy=540.0,
        dist=np.zeros(8),
    )


def identical_views(camera, n=6, noise=0.05):
    board = BoardGeometry()
    rng = np.random.default_rng(0)
    rot = _euler_rotation(np.array([3.0, -2.0, 1.0]))
    corners = board.corner_points()
    t = np.array([0.0, 0.0, 0.6]) - rot @ board.center()
    pc = corners @ rot.T + t
    xy = pc[:, :2] / pc[:, 2:]
    px = geo.distort(xy, camera.dist) * [camera.fx, camera.fy] + [camera.cx, camera.cy]
    return [
        BoardView(
            frame_id=i,
            corner_ids=np.arange(len(corners)),
            board_points=corners,
            pixels=px + rng.normal(0.0, noise, px.shape),
        )
        for i in range(n)
    ]


class TestBoardGeometry:
    def test_default_board_corner_grid(self):
        board = BoardGeometry()
        pts = board.corner_points()
        assert pts.shape == (52 * 36, 3)
        ratio = pts[:, :2] / 0.022
        np.testing.assert_allclose(ratio, np.round(ratio), atol=1e-12)
        assert np.all(pts[:, 2] == 0.0)

    def test_rejects_degenerate_board(self):
        with pytest.raises(ConfigInvalid):
            BoardGeometry(squares_x=2, squares_y=9, square_size=0.02)


class TestGenerateBoardViews:
    def test_rotation_span_covers_forty_degrees(self):
        views, poses = generate_board_views(BoardGeometry(), true_camera(), 8, 0.0, 3)
        rotvecs = np.array([np.degrees(geo.axis_angle_from_quat(p.q)) for p in poses])
        span = rotvecs.max(axis=0) - rotvecs.min(axis=0)
        assert np.all(span >= 40.0)

    def test_distance_range_and_corner_bounds(self):
        board = BoardGeometry()
        camera = true_camera()
        views, poses = generate_board_views(board, camera, 10, 0.0, 4)
        for view, pose in zip(views, poses):
            depth = pose.apply(board.center())[2]
            assert 0.30 <= depth <= 1.20
            assert len(view.corner_ids) >= 20
            assert np.all(view.pixels[:, 0] >= 0)
            assert np.all(view.pixels[:, 0] <= camera.width - 1)
            assert np.all(view.pixels[:, 1] >= 0)
            assert np.all(view.pixels[:, 1] <= camera.height - 1)

    def test_noise_sigma_is_rms_displacement(self):
        board = BoardGeometry()
        camera = true_camera()
        clean, _ = generate_board_views(board, camera, 6, 0.0, 9)
        noisy, _ = generate_board_views(board, camera, 6, 0.5, 9)
        deltas = []
        for cv, nv in zip(clean, noisy):
            common, ci, ni = np.intersect1d(
                cv.corner_ids, nv.corner_ids, return_indices=True
            )
            deltas.append(nv.pixels[ni] - cv.pixels[ci])
        rms = np.sqrt(np.mean(np.concatenate(deltas) ** 2) * 2.0)
        assert abs(rms - 0.5) < 0.02

    def test_deterministic_per_seed(self):
        a, _ = generate_board_views(BoardGeometry(), true_camera(), 5, 0.3, 21)
        b, _ = generate_board_views(BoardGeometry(), true_camera(), 5, 0.3, 21)
        for va, vb in zip(a, b):
            np.testing.assert_array_equal(va.pixels, vb.pixels)
            np.testing.assert_array_equal(va.corner_ids, vb.corner_ids)

    def test_too_few_views_rejected(self):
        with pytest.raises(ConfigInvalid):
            generate_board_views(BoardGeometry(), true_camera(), 3, 0.0, 0)


class TestCalibrate:
    def test_exact_recovery_from_clean_corners(self):
        camera = true_camera()
        views, tposes = generate_board_views(BoardGeometry(), camera, 12, 0.0, 7)
        res = calibrate(views, init_camera(), gtol=1e-10)
        assert res.rms < 1e-6
        for name in ("fx", "fy", "cx", "cy"):
            rec, tru = getattr(res.camera, name), getattr(camera, name)
            assert abs(rec - tru) / abs(tru) < 1e-6
        # The rational coefficients are only identifiable through the map
        # they define on the observed radii, so compare maps, not vectors.
        rmax = 0.0
        for view, pose in zip(views, tposes):
            pc = pose.apply(view.board_points)
            xy = pc[:, :2] / pc[:, 2:]
            rmax = max(rmax, np.linalg.norm(xy, axis=1).max())
        rng = np.random.default_rng(5)
        ang = rng.uniform(0.0, 2.0 * np.pi, 400)
        rad = rng.uniform(0.0, 0.95 * rmax, 400)
        pts = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        err = np.abs(geo.distort(pts, res.camera.dist) - geo.distort(pts, camera.dist))
        assert err.max() < 1e-6
        # Board poses come back too.
        for rec, tru in zip(res.poses, tposes):
            assert np.linalg.norm(rec.t - tru.t) < 1e-6

    def test_noise_band_quarter_pixel(self):
        # The full board: a small one leaves the rational coefficients
        # under-constrained and LM crawls a flat valley without settling.
        camera = true_camera()
        views, _ = generate_board_views(BoardGeometry(), camera, 8, 0.25, 11)
        res = calibrate(views, init_camera())
        assert 0.15 <= res.rms <= 0.40
        assert abs(res.camera.fx - camera.fx) / camera.fx < 0.005

    def test_rms_tracks_injected_noise(self):
        camera = true_camera()
        views, _ = generate_board_views(BoardGeometry(), camera, 6, 0.75, 13)
        res = calibrate(views, init_camera())
        assert abs(res.rms - 0.75) < 0.15

    def test_cost_monotone_and_gradient_small(self):
        views, _ = generate_board_views(BoardGeometry(), true_camera(), 6, 0.25, 17)
        res = calibrate(views, init_camera())
        assert np.all(np.diff(res.cost_history) <= 0.0)
        assert res.gradient_norm < 1e-6

    def test_near_identical_views_rank_deficient(self):
        with pytest.raises(RankDeficient):
            calibrate(identical_views(true_camera()), init_camera())

    def test_too_few_views(self):
        views, _ = generate_board_views(BoardGeometry(), true_camera(), 4, 0.0, 1)
        with pytest.raises(ConfigInvalid):
            calibrate(views[:3], init_camera())

    def test_too_few_corners_per_view(self):
        views, _ = generate_board_views(BoardGeometry(), true_camera(), 4, 0.0, 1)
        starved = views[0]
        views[0] = BoardView(
            frame_id=starved.frame_id,
            corner_ids=starved.corner_ids[:19],
            board_points=starved.board_points[:19],
            pixels=starved.pixels[:19],
        )
        with pytest.raises(ConfigInvalid):
            calibrate(views, init_camera())


class TestFrameCuration:
    def test_single_sharp_frame_wins(self):
        rng = np.random.default_rng(2)
        sharp = band_limited_texture(rng, 48, 64)
        frames = [imaging.gaussian_blur(sharp, 3.0) for _ in range(10)]
        frames[6] = sharp
        assert frame_curation(frames, window=10) == [6]

    def test_alternating_sequence_keeps_sharp(self):
        rng = np.random.default_rng(3)
        sharp = band_limited_texture(rng, 48, 64)
        blurred = imaging.gaussian_blur(sharp, 3.0)
        frames = [sharp if i % 2 == 0 else blurred for i in range(30)]
        kept = frame_curation(frames, window=10)
        assert len(kept) == 3
        assert all(k % 2 == 0 for k in kept)

    def test_output_size_is_ceil(self):
        rng = np.random.default_rng(4)
        frames = [rng.random((16, 16)) for _ in range(25)]
        assert len(frame_curation(frames, window=10)) == 3

    def test_bad_window(self):
        with pytest.raises(ConfigInvalid):
            frame_curation([np.zeros((4, 4))], window=0)
