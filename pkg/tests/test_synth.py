import numpy as np
import pytest

from rigsplat import imaging, sync
from rigsplat.errors import ConfigInvalid
from rigsplat.matching import ImagePair
from rigsplat.synth import (
    Plane,
    RigScenario,
    default_camera,
    generate_frames,
    generate_tracks,
    render_targets,
    surface_cloud,
    value_noise,
)


def small_camera():
    return default_camera(width=240, height=136)


def track_camera():
    return default_camera(width=960, height=540)


class TestRigScenario:
    def test_defaults_are_valid(self):
        scn = RigScenario()
        assert scn.fps == 120.0
        assert scn.plane.height == scn.height_range[1]

    def test_fps_must_be_positive(self):
        with pytest.raises(ConfigInvalid):
            RigScenario(fps=0.0)

    def test_height_range_bounds(self):
        with pytest.raises(ConfigInvalid):
            RigScenario(height_range=(0.01, 0.30))
        with pytest.raises(ConfigInvalid):
            RigScenario(height_range=(0.12, 1.5))
        with pytest.raises(ConfigInvalid):
            RigScenario(height_range=(0.30, 0.12))

    def test_offsets_capped(self):
        with pytest.raises(ConfigInvalid):
            RigScenario(offsets=(61, 0))
        with pytest.raises(ConfigInvalid):
            RigScenario(offsets=(0, -61))

    def test_negative_speed_rejected(self):
        with pytest.raises(ConfigInvalid):
            RigScenario(speed=-1.0)

    def test_outlier_rate_bounds(self):
        with pytest.raises(ConfigInvalid):
            RigScenario(outlier_rate=1.0)

    def test_primitive_outside_height_range_rejected(self):
        prims = [Plane(height=0.5)]
        with pytest.raises(ConfigInvalid):
            RigScenario(height_range=(0.12, 0.30), primitives=prims)

    def test_rig_positions_respect_baselines(self):
        scn = RigScenario()
        c = scn.rig_position("C", 0.0)
        l = scn.rig_position("L", 0.0)
        r = scn.rig_position("R", 0.0)
        np.testing.assert_allclose(l - c, [-0.31, 0.0, 0.0])
        np.testing.assert_allclose(r - c, [0.31, 0.0, 0.0])
        with pytest.raises(ConfigInvalid):
            scn.rig_position("X", 0.0)

    def test_travel_distance_matches_nominal_speed(self):
        # The wobble integrates to a bounded excursion around speed * t.
        scn = RigScenario(speed=1.5, travel=3.0)
        duration = scn.travel / scn.speed
        ts = np.linspace(0.0, duration, 50)
        ys = np.array([scn.travel_distance(t) for t in ts])
        assert abs(ys[-1] - scn.travel) < 0.25 * scn.travel
        assert np.all(np.diff(ys) > 0.0)

    def test_speed_zero_means_no_motion(self):
        scn = RigScenario(speed=0.0)
        assert scn.travel_distance(5.0) == 0.0

    def test_rectified_camera_drops_distortion(self):
        scn = RigScenario()
        rect = scn.rectified_camera()
        assert np.all(rect.dist == 0.0)
        assert rect.fx == scn.camera.fx
        assert rect.width == scn.camera.width


class TestValueNoise:
    def test_range_and_shape(self):
        rng = np.random.default_rng(0)
        tex = value_noise(rng, 64, 96)
        assert tex.shape == (64, 96)
        assert tex.min() >= 0.0 and tex.max() <= 1.0

    def test_deterministic(self):
        a = value_noise(np.random.default_rng(5), 32, 32)
        b = value_noise(np.random.default_rng(5), 32, 32)
        np.testing.assert_array_equal(a, b)


class TestGenerateTracks:
    def test_rejects_too_few_triplets(self):
        with pytest.raises(ConfigInvalid):
            generate_tracks(RigScenario(camera=track_camera()), 1, seed=0)

    def test_zero_noise_reprojects_exactly(self):
        scn = RigScenario(camera=track_camera())
        ts = generate_tracks(scn, 10, seed=4, n_points=800)
        errs = ts.reprojection_errors()
        assert errs.size > 0
        assert errs.max() == 0.0

    def test_noise_magnitude_recovered(self):
        # Per-axis sigma in both pixel axes puts the mean error norm at
        # sigma * sqrt(pi / 2).
        sigma = 0.3
        scn = RigScenario(camera=track_camera(), noise_sigma=sigma)
        ts = generate_tracks(scn, 20, seed=4, n_points=1500)
        errs = ts.reprojection_errors()
        expected = sigma * np.sqrt(np.pi / 2.0)
        assert abs(errs.mean() / expected - 1.0) < 0.05

    def test_deterministic(self):
        scn = RigScenario(camera=track_camera(), noise_sigma=0.2, outlier_rate=0.1)
        a = generate_tracks(scn, 8, seed=9, n_points=600)
        b = generate_tracks(scn, 8, seed=9, n_points=600)
        assert set(a.observations) == set(b.observations)
        for key in a.observations:
            np.testing.assert_array_equal(
                a.observations[key].pixels, b.observations[key].pixels
            )
            np.testing.assert_array_equal(
                a.observations[key].outlier_mask, b.observations[key].outlier_mask
            )

    def test_outlier_rate_and_match_labels(self):
        rate = 0.2
        scn = RigScenario(camera=track_camera(), outlier_rate=rate)
        ts = generate_tracks(scn, 15, seed=2, n_points=1200)
        flags = np.concatenate(
            [obs.outlier_mask for obs in ts.observations.values()]
        )
        assert abs(flags.mean() - rate) < 0.02

        provider = ts.match_provider()
        pair = ImagePair(("C", 0), ("C", 1), "intra")
        labels = provider.match_labels(pair)
        # A match is true only when both endpoints survived.
        assert abs(labels.mean() - (1.0 - rate) ** 2) < 0.05

    def test_match_provider_interop(self):
        scn = RigScenario(camera=track_camera())
        ts = generate_tracks(scn, 6, seed=3, n_points=500)
        provider = ts.match_provider()
        kp = provider.keypoints(("L", 0))
        assert kp.shape[1] == 3
        matches, scores = provider.matches(ImagePair(("L", 0), ("C", 0), "cross_LC"))
        assert matches.shape[1] == 2
        assert scores.shape == (len(matches),)
        assert matches[:, 0].max() < len(kp)

    def test_tracks_have_min_length_two(self):
        scn = RigScenario(camera=track_camera())
        ts = generate_tracks(scn, 6, seed=3, n_points=500)
        assert all(len(t) >= 2 for t in ts.tracks.tracks)


class TestGenerateFrames:
    def test_rejects_too_few_frames(self, tmp_path):
        with pytest.raises(ConfigInvalid):
            generate_frames(RigScenario(camera=small_camera()), 1, seed=0, out_dir=tmp_path)

    def test_speed_zero_gives_zero_shifts(self, tmp_path):
        scn = RigScenario(camera=small_camera(), speed=0.0)
        man = generate_frames(scn, 8, seed=3, out_dir=tmp_path)
        frames = [imaging.load_image(tmp_path / p) for p in man["frames"]["C"]]
        sig = sync.build_shift_signal(frames, camera_id="C", fps=scn.fps)
        assert np.abs(sig.shifts).max() < 1e-9

    @pytest.mark.parametrize("offsets", [(10, -5), (-35, 22)])
    def test_injected_offsets_recovered(self, tmp_path, offsets):
        # Width sets both the shift amplitude (through the focal length)
        # and the phase-correlation noise floor; 480 px keeps the basin
        # around the true offset comfortably above that floor.
        scn = RigScenario(
            camera=default_camera(width=480, height=272),
            speed=3.0,
            offsets=offsets,
            travel=3.5,
            height_range=(0.10, 0.20),
        )
        man = generate_frames(scn, 140, seed=3, out_dir=tmp_path)
        frames = {
            c: [imaging.load_image(tmp_path / p) for p in man["frames"][c]]
            for c in "LCR"
        }
        sigs = {
            c: sync.build_shift_signal(frames[c], camera_id=c, fps=scn.fps)
            for c in "LCR"
        }
        res = sync.synchronize_three(sigs["L"], sigs["C"], sigs["R"])
        assert (res.offset_left, res.offset_right) == offsets

    def test_blurred_frames_score_lower(self, tmp_path):
        blur = [5, 14, 23]
        scn = RigScenario(camera=small_camera(), speed=3.0, travel=2.3)
        man = generate_frames(
            scn, 30, seed=7, out_dir=tmp_path, blur_frames={"C": blur}
        )
        assert man["blurred"]["C"] == blur
        scores = [
            imaging.laplacian_variance(imaging.load_image(tmp_path / p))
            for p in man["frames"]["C"]
        ]
        for b in blur:
            assert scores[b] < scores[b - 1]
            assert scores[b] < scores[b + 1]

    def test_manifest_schema_and_files(self, tmp_path):
        scn = RigScenario(camera=small_camera(), speed=3.0, offsets=(4, -2), travel=2.3)
        man = generate_frames(scn, 6, seed=1, out_dir=tmp_path)
        assert man["fps"] == scn.fps
        assert man["offsets"] == {"L": 4, "C": 0, "R": -2}
        assert man["n_frames"] == 6
        for cam in "LCR":
            assert len(man["frames"][cam]) == 6
            for rel in man["frames"][cam]:
                assert (tmp_path / rel).exists()
        assert (tmp_path / "truth.json").exists()

    def test_deterministic_bytes(self, tmp_path):
        scn = RigScenario(camera=small_camera(), speed=3.0, travel=2.3)
        d1 = tmp_path / "a"
        d2 = tmp_path / "b"
        m1 = generate_frames(scn, 5, seed=7, out_dir=d1)
        m2 = generate_frames(scn, 5, seed=7, out_dir=d2)
        for cam in "LCR":
            for r1, r2 in zip(m1["frames"][cam], m2["frames"][cam]):
                assert (d1 / r1).read_bytes() == (d2 / r2).read_bytes()


class TestSurfaceCloud:
    def test_count_and_ranges(self):
        scn = RigScenario(camera=small_camera())
        cloud = surface_cloud(scn, 800, seed=0)
        cloud.check()
        assert len(cloud) == 800
        lo, hi = scn.height_range
        z = cloud.mu[:, 2]
        assert z.min() >= lo - 1e-9
        assert z.max() <= hi + 1e-9
        assert cloud.colors.min() >= 0.0 and cloud.colors.max() <= 1.0

    def test_scales_follow_point_density(self):
        scn = RigScenario(camera=small_camera())
        sparse = surface_cloud(scn, 200, seed=0)
        dense = surface_cloud(scn, 3200, seed=0)
        # 16x the points over the same area shrinks spacing about 4x.
        ratio = np.median(sparse.scales) / np.median(dense.scales)
        assert 2.5 < ratio < 6.0

    def test_deterministic_in_seed(self):
        scn = RigScenario(camera=small_camera())
        a = surface_cloud(scn, 300, seed=5)
        b = surface_cloud(scn, 300, seed=5)
        c = surface_cloud(scn, 300, seed=6)
        assert np.array_equal(a.mu, b.mu)
        assert np.array_equal(a.colors, b.colors)
        assert not np.array_equal(a.mu, c.mu)

    def test_rejects_empty_cloud(self):
        with pytest.raises(ConfigInvalid):
            surface_cloud(RigScenario(camera=small_camera()), 0)


class TestRenderTargets:
    def test_renders_every_pose_in_rig_order(self):
        cam = small_camera()
        scn = RigScenario(camera=cam)
        scene = generate_tracks(scn, 2, seed=0, n_points=50)
        cloud = surface_cloud(scn, 400, seed=0)
        images = render_targets(cloud, scene.poses, scene.camera)
        assert list(images) == [
            ("L", 0), ("C", 0), ("R", 0),
            ("L", 1), ("C", 1), ("R", 1),
        ]
        for img in images.values():
            assert img.shape == (cam.height, cam.width, 3)
            # The floor fills the view, so most pixels carry surface color.
            assert img.std() > 0.01
            assert img.min() >= 0.0 and img.max() <= 1.0
