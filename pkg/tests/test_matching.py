import json

import numpy as np
import pytest

from rigsplat import geometry as geo
from rigsplat import matching
from rigsplat.errors import (
    ConfigInvalid,
    DegenerateConfiguration,
    DuplicateMatch,
    IndexOutOfRange,
    InsufficientFrames,
    UnknownImage,
)
from rigsplat.imaging import gaussian_blur
from rigsplat.matching import (
    FileMatchProvider,
    FrameTriplet,
    ImagePair,
    MatchSet,
    TrackSet,
    build_tracks,
    ingest_matches,
    pair_counts,
    schedule_pairs,
    schedule_pairs_exhaustive,
    select_triplets,
    verify_pair,
    write_match_document,
)

from conftest import band_limited_texture


def rect_camera():
    return geo.CameraModel(1920, 1080, 800.0, 800.0, 960.0, 540.0, np.zeros(8))


def two_view_matches(rng, n=250, outlier_rate=0.0):
    """Pinhole two-view scene with labeled uniform-random outliers."""
    cam = rect_camera()
    pose_a = geo.Pose.identity()
    q = geo.quat_from_axis_angle(np.array([0.0, 0.12, 0.0]))
    pose_b = geo.Pose(q, np.array([-0.4, 0.03, 0.08]))
    pts = rng.uniform([-1.5, -0.9, 2.0], [1.5, 0.9, 4.0], (n, 3))
    ua = geo.project(pts, pose_a, cam)
    ub = geo.project(pts, pose_b, cam)
    ok = (
        (ua >= 0).all(axis=1)
        & (ua < [cam.width, cam.height]).all(axis=1)
        & (ub >= 0).all(axis=1)
        & (ub < [cam.width, cam.height]).all(axis=1)
    )
    ua, ub = ua[ok], ub[ok]
    m = len(ua)
    is_outlier = np.zeros(m, dtype=bool)
    n_out = int(round(outlier_rate * m))
    if n_out:
        sel = rng.choice(m, size=n_out, replace=False)
        ub[sel] = rng.uniform([0, 0], [cam.width, cam.height], (n_out, 2))
        is_outlier[sel] = True
    kps_a = np.column_stack([ua, np.ones(m)])
    kps_b = np.column_stack([ub, np.ones(m)])
    pair = ImagePair(("L", 0), ("C", 0), "cross_LC")
    ms = MatchSet(pair, np.column_stack([np.arange(m), np.arange(m)]), np.ones(m))
    return ms, kps_a, kps_b, cam, is_outlier


class TestSelectTriplets:
    def _manifest(self, store):
        rows = []
        indices = sorted({ref[1] for ref in store})
        for i in indices:
            rows.append({"index": i, "L": ("L", i), "C": ("C", i), "R": ("R", i)})
        return rows

    def test_k_equals_length_selects_all(self):
        rng = np.random.default_rng(0)
        store = {
            (cam, i): band_limited_texture(rng, 32, 32)
            for cam in "LCR"
            for i in range(6)
        }
        rows = self._manifest(store)
        out = select_triplets(rows, 6, loader=store.__getitem__)
        assert [t.manifest_index for t in out] == list(range(6))
        assert [t.index for t in out] == list(range(6))

    def test_constructed_bin_maxima(self):
        rng = np.random.default_rng(1)
        base = band_limited_texture(rng, 32, 32)
        amp = np.ones(10)
        amp[3] = 3.0
        amp[9] = 4.0
        store = {
            (cam, i): base * amp[i] for cam in "LCR" for i in range(10)
        }
        out = select_triplets(self._manifest(store), 2, loader=store.__getitem__)
        assert [t.manifest_index for t in out] == [3, 9]
        assert out[0].score < out[1].score

    def test_blurred_triplets_avoided(self):
        rng = np.random.default_rng(2)
        blurred_rows = set(rng.choice(40, size=12, replace=False).tolist())
        store = {}
        for i in range(40):
            for cam in "LCR":
                img = band_limited_texture(rng, 48, 48, sigma=1.0)
                if i in blurred_rows:
                    img = gaussian_blur(img, 3.0)
                store[(cam, i)] = img
        out = select_triplets(self._manifest(store), 8, loader=store.__getitem__)
        hit = sum(1 for t in out if t.manifest_index in blurred_rows)
        assert hit / len(out) <= 0.05

    def test_brightness_offset_invariance(self):
        rng = np.random.default_rng(3)
        store = {
            (cam, i): band_limited_texture(rng, 32, 32)
            for cam in "LCR"
            for i in range(12)
        }
        rows = self._manifest(store)
        plain = select_triplets(rows, 4, loader=store.__getitem__)
        shifted = select_triplets(rows, 4, loader=lambda r: store[r] + 0.3)
        assert [t.manifest_index for t in plain] == [t.manifest_index for t in shifted]

    def test_insufficient_frames(self):
        rng = np.random.default_rng(4)
        store = {(cam, 0): band_limited_texture(rng, 16, 16) for cam in "LCR"}
        with pytest.raises(InsufficientFrames):
            select_triplets(self._manifest(store), 2, loader=store.__getitem__)

    def test_triplet_requires_all_cameras(self):
        with pytest.raises(ConfigInvalid):
            FrameTriplet(index=0, frames={"L": "a", "C": "b"}, score=1.0)


class TestSchedulePairs:
    def test_single_triplet_boundary(self):
        pairs = schedule_pairs([None], window=5)
        got = {(p.a, p.b) for p in pairs}
        assert got == {(("L", 0), ("C", 0)), (("C", 0), ("R", 0))}

    def test_middle_index_intra_count(self):
        pairs = schedule_pairs([None] * 11, window=5)
        at_c5 = [
            p
            for p in pairs
            if p.kind == "intra" and p.a[0] == "C" and ("C", 5) in (p.a, p.b)
        ]
        assert len(at_c5) == 10

    def test_no_left_right_pairs(self):
        pairs = schedule_pairs([None] * 30, window=5)
        assert all({p.a[0], p.b[0]} != {"L", "R"} for p in pairs)

    def test_counts_match_closed_form(self):
        for n, w in ((1, 5), (4, 5), (11, 5), (40, 3), (250, 5)):
            pairs = schedule_pairs([None] * n, window=w)
            assert len(pairs) == len(set(pairs)) == pair_counts(n, w)["total"]

    def test_full_capture_count(self):
        counts = pair_counts(250, 5)
        assert counts["intra"] == 3 * 1235
        assert counts["cross_LC"] == counts["cross_CR"] == 2720
        assert counts["total"] == 9145

    def test_class_construction_rules(self):
        with pytest.raises(ConfigInvalid):
            ImagePair(("L", 0), ("R", 0), "intra")
        with pytest.raises(ConfigInvalid):
            ImagePair(("C", 0), ("L", 0), "cross_LC")


class TestSchedulePairsExhaustive:
    def test_uncapped_enumeration(self):
        n = 6
        pairs = schedule_pairs_exhaustive(n, cap=10_000)
        # 3 per-camera cliques plus every ordered cross combination for
        # each of the three camera pairings.
        assert len(pairs) == 3 * (n * (n - 1) // 2) + 3 * n * n
        assert len(set(pairs)) == len(pairs)
        kinds = {p.kind for p in pairs}
        assert kinds == {"intra", "cross_LC", "cross_CR", "cross_LR"}

    def test_lifts_left_right_restriction(self):
        pairs = schedule_pairs_exhaustive(4, cap=10_000)
        lr = [p for p in pairs if p.kind == "cross_LR"]
        assert len(lr) == 16
        assert all(p.a[0] == "L" and p.b[0] == "R" for p in lr)

    def test_cap_subsamples_without_repeats(self):
        full = schedule_pairs_exhaustive(30, cap=10**9)
        capped = schedule_pairs_exhaustive(30, cap=500)
        assert len(capped) == 500
        assert len(set(capped)) == 500
        # Endpoints of the enumeration survive the strided subsample.
        assert capped[0] == full[0]
        assert capped[-1] == full[-1]
        assert set(capped) <= set(full)

    def test_pure_function_of_inputs(self):
        assert schedule_pairs_exhaustive(25, cap=300) == schedule_pairs_exhaustive(
            25, cap=300
        )

    def test_rejects_bad_arguments(self):
        with pytest.raises(ConfigInvalid):
            schedule_pairs_exhaustive(0)
        with pytest.raises(ConfigInvalid):
            schedule_pairs_exhaustive(5, cap=0)


class _DictProvider:
    def __init__(self, keypoints, matches):
        self._kp = keypoints
        self._m = matches

    def keypoints(self, key):
        return self._kp[key]

    def matches(self, pair):
        return self._m.get(
            (pair.a, pair.b), (np.empty((0, 2), dtype=int), np.empty(0))
        )


class TestIngestMatches:
    def _pair(self):
        return ImagePair(("L", 0), ("C", 0), "cross_LC")

    def test_empty_matches_accepted(self):
        pair = self._pair()
        prov = _DictProvider(
            {pair.a: np.zeros((4, 3)), pair.b: np.zeros((4, 3))}, {}
        )
        kps, sets = ingest_matches([pair], prov)
        assert len(sets) == 1 and len(sets[0]) == 0

    def test_unknown_image(self):
        pair = self._pair()
        prov = _DictProvider({pair.a: np.zeros((4, 3))}, {})
        with pytest.raises(UnknownImage):
            ingest_matches([pair], prov)

    def test_index_out_of_range(self):
        pair = self._pair()
        prov = _DictProvider(
            {pair.a: np.zeros((4, 3)), pair.b: np.zeros((4, 3))},
            {(pair.a, pair.b): (np.array([[0, 4]]), np.array([0.9]))},
        )
        with pytest.raises(IndexOutOfRange):
            ingest_matches([pair], prov)

    def test_duplicate_match(self):
        pair = self._pair()
        prov = _DictProvider(
            {pair.a: np.zeros((4, 3)), pair.b: np.zeros((4, 3))},
            {
                (pair.a, pair.b): (
                    np.array([[0, 1], [0, 2]]),
                    np.array([0.9, 0.8]),
                )
            },
        )
        with pytest.raises(DuplicateMatch):
            ingest_matches([pair], prov)

    def test_keypoint_budget_trims_and_remaps(self):
        pair = self._pair()
        # scores 0..9; budget 5 keeps indices 5..9, remapped to 0..4
        kp = np.column_stack([np.arange(10), np.arange(10), np.arange(10)])
        prov = _DictProvider(
            {pair.a: kp.astype(float), pair.b: np.zeros((4, 3))},
            {
                (pair.a, pair.b): (
                    np.array([[2, 0], [7, 1], [9, 2]]),
                    np.array([0.5, 0.6, 0.7]),
                )
            },
        )
        kps, sets = ingest_matches([pair], prov, max_keypoints=5)
        assert len(kps[pair.a]) == 5
        np.testing.assert_array_equal(kps[pair.a][:, 2], [5, 6, 7, 8, 9])
        np.testing.assert_array_equal(sets[0].indices, [[2, 1], [4, 2]])
        np.testing.assert_allclose(sets[0].confidence, [0.6, 0.7])

    def test_file_provider_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        ms, kps_a, kps_b, cam, _ = two_view_matches(rng, n=40)
        doc = tmp_path / "pair0.json"
        write_match_document(doc, ms.pair, kps_a, kps_b, ms.indices, ms.confidence)
        manifest = tmp_path / "matches.json"
        manifest.write_text(json.dumps(["pair0.json"]))
        prov = FileMatchProvider(manifest)
        kps, sets = ingest_matches([ms.pair], prov)
        np.testing.assert_allclose(kps[ms.pair.a], kps_a)
        np.testing.assert_array_equal(sets[0].indices, ms.indices)

    def test_file_provider_rejects_inconsistent_keypoints(self, tmp_path):
        pair_a = ImagePair(("L", 0), ("C", 0), "cross_LC")
        pair_b = ImagePair(("C", 0), ("R", 0), "cross_CR")
        kp = np.ones((3, 3))
        write_match_document(
            tmp_path / "a.json", pair_a, kp, kp, np.empty((0, 2)), np.empty(0)
        )
        write_match_document(
            tmp_path / "b.json", pair_b, kp * 2, kp, np.empty((0, 2)), np.empty(0)
        )
        manifest = tmp_path / "matches.json"
        manifest.write_text(json.dumps(["a.json", "b.json"]))
        with pytest.raises(ConfigInvalid):
            FileMatchProvider(manifest)


class TestVerifyPair:
    def test_noise_free_all_retained(self):
        rng = np.random.default_rng(6)
        ms, kps_a, kps_b, cam, _ = two_view_matches(rng)
        out = verify_pair(ms, kps_a, kps_b, cam, seed=1)
        assert len(out) == len(ms)
        assert out.inlier_ratio == 1.0

    def test_outlier_classification(self):
        rng = np.random.default_rng(7)
        tp = fp = fn = 0
        for trial in range(10):
            ms, kps_a, kps_b, cam, is_out = two_view_matches(
                rng, outlier_rate=0.3
            )
            out = verify_pair(ms, kps_a, kps_b, cam, seed=trial)
            kept = np.zeros(len(ms), dtype=bool)
            kept[out.indices[:, 0]] = True
            tp += int((kept & ~is_out).sum())
            fp += int((kept & is_out).sum())
            fn += int((~kept & ~is_out).sum())
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        assert precision >= 0.99
        assert recall >= 0.99

    def test_inliers_satisfy_epipolar_constraint(self):
        rng = np.random.default_rng(8)
        ms, kps_a, kps_b, cam, _ = two_view_matches(rng, outlier_rate=0.2)
        out = verify_pair(ms, kps_a, kps_b, cam, seed=3)
        ua = kps_a[out.indices[:, 0], :2]
        ub = kps_b[out.indices[:, 1], :2]
        e = matching._essential_from_eight(
            (ua - [cam.cx, cam.cy]) / [cam.fx, cam.fy],
            (ub - [cam.cx, cam.cy]) / [cam.fx, cam.fy],
        )
        f = matching.essential_to_fundamental(e, cam)
        d = np.sqrt(matching._sampson_sq(f, ua, ub))
        assert d.max() < 2.0

    def test_too_few_matches_dropped(self):
        rng = np.random.default_rng(9)
        ms, kps_a, kps_b, cam, _ = two_view_matches(rng, n=9)
        short = MatchSet(ms.pair, ms.indices[:7], ms.confidence[:7])
        with pytest.raises(DegenerateConfiguration, match="too_few_matches"):
            verify_pair(short, kps_a, kps_b, cam)

    def test_too_few_inliers_discarded(self):
        rng = np.random.default_rng(10)
        # 12 matches, all pure noise: no model should keep 15 inliers.
        kps_a = np.column_stack([rng.uniform(0, 1000, (12, 2)), np.ones(12)])
        kps_b = np.column_stack([rng.uniform(0, 1000, (12, 2)), np.ones(12)])
        pair = ImagePair(("L", 0), ("C", 0), "cross_LC")
        ms = MatchSet(pair, np.column_stack([np.arange(12)] * 2), np.ones(12))
        with pytest.raises(DegenerateConfiguration):
            verify_pair(ms, kps_a, kps_b, rect_camera(), seed=4)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(11)
        ms, kps_a, kps_b, cam, _ = two_view_matches(rng, outlier_rate=0.25)
        out1 = verify_pair(ms, kps_a, kps_b, cam, seed=42)
        out2 = verify_pair(ms, kps_a, kps_b, cam, seed=42)
        np.testing.assert_array_equal(out1.indices, out2.indices)


class TestBuildTracks:
    def _kp(self, n):
        return np.column_stack([np.arange(n), np.arange(n), np.ones(n)])

    def test_single_pair_tracks(self):
        pair = ImagePair(("L", 0), ("C", 0), "cross_LC")
        ms = MatchSet(pair, np.column_stack([np.arange(10)] * 2), np.ones(10))
        kps = {pair.a: self._kp(10), pair.b: self._kp(10)}
        ts = build_tracks([ms], kps)
        assert len(ts.tracks) == 10
        assert ts.mean_track_length() == 2.0
        assert ts.pair_inliers[pair.key] == 10

    def test_chain_merges_to_length_three(self):
        p1 = ImagePair(("L", 0), ("C", 0), "cross_LC")
        p2 = ImagePair(("C", 0), ("R", 0), "cross_CR")
        m1 = MatchSet(p1, np.array([[0, 0]]), np.array([1.0]))
        m2 = MatchSet(p2, np.array([[0, 0]]), np.array([1.0]))
        kps = {k: self._kp(2) for k in (p1.a, p1.b, p2.b)}
        ts = build_tracks([m1, m2], kps)
        assert len(ts.tracks) == 1
        assert len(ts.tracks[0]) == 3

    def test_conflicting_merge_drops_weaker(self):
        # (L0,kp0)-(C0,kp0) and (R0,kp0)-(C0,kp1) form two tracks; the
        # weaker (L0,kp0)-(R0,kp0) link would give the combined track two
        # C observations, so it is skipped.
        p1 = ImagePair(("L", 0), ("C", 0), "cross_LC")
        p2 = ImagePair(("C", 0), ("R", 0), "cross_CR")
        p3 = ImagePair(("L", 0), ("C", 1), "cross_LC")
        m1 = MatchSet(p1, np.array([[0, 0]]), np.array([0.9]))
        m2 = MatchSet(p2, np.array([[1, 0]]), np.array([0.8]))
        # link L0 kp0 to C1 kp0, and C1 kp0 to nothing else; then a low
        # confidence link from C0 kp1 side via another pair to L0 kp0
        # would conflict. Use a direct construction instead:
        m3 = MatchSet(p3, np.array([[0, 0]]), np.array([0.7]))
        p4 = ImagePair(("C", 1), ("R", 0), "cross_CR")
        m4 = MatchSet(p4, np.array([[0, 0]]), np.array([0.6]))
        kps = {
            ("L", 0): self._kp(2),
            ("C", 0): self._kp(2),
            ("C", 1): self._kp(2),
            ("R", 0): self._kp(2),
        }
        ts = build_tracks([m1, m2, m3, m4], kps)
        ts.check()
        # m4 would merge track {L0k0, C0k0, C1k0} with {C0k1, R0k0}:
        # both contain a C0 observation, so the merge is skipped.
        lengths = sorted(len(t) for t in ts.tracks)
        assert lengths == [2, 3]

    def test_invariant_checker_rejects_bad_tracks(self):
        ts = TrackSet(
            keypoints={("L", 0): self._kp(2)},
            tracks=[[(("L", 0), 0), (("L", 0), 1)]],
        )
        with pytest.raises(ConfigInvalid):
            ts.check()
