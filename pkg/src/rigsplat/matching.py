"""Triplet selection, pair scheduling, match ingestion, and verification.

Images are keyed by (camera_id, triplet_index). Pairs are scheduled in
three classes over a temporal window: within each camera, left-center,
and center-right. The default schedule never emits left-right pairs;
at a 0.62 m baseline a few centimeters from the scene the views share
too little appearance to match reliably. A fourth class, cross_LR,
exists solely for the exhaustive fallback scheduler used when the
constrained scheme is switched off.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .errors import (
    ConfigInvalid,
    DegenerateConfiguration,
    DuplicateMatch,
    IndexOutOfRange,
    InsufficientFrames,
    UnknownImage,
)
from .geometry import CameraModel

log = logging.getLogger(__name__)

CAMERA_ORDER = ("L", "C", "R")
PAIR_CLASSES = ("intra", "cross_LC", "cross_CR", "cross_LR")
MAX_KEYPOINTS = 8192
MIN_MATCHES = 8
MIN_INLIERS = 15
EXHAUSTIVE_CAP = 2000

ImageKey = tuple  # (camera_id, triplet_index)


def image_name(key: ImageKey) -> str:
    return f"{key[0]}_{key[1]:04d}"


def parse_image_name(name: str) -> ImageKey:
    cam, _, idx = name.partition("_")
    if cam not in CAMERA_ORDER or not idx.isdigit():
        raise UnknownImage(f"malformed image name {name!r}")
    return (cam, int(idx))


@dataclass
class FrameTriplet:
    """One synced (L, C, R) frame set with its sharpness score."""

    index: int
    frames: dict
    score: float
    manifest_index: int = -1

    def __post_init__(self):
        missing = [c for c in CAMERA_ORDER if c not in self.frames]
        if missing:
            raise ConfigInvalid(f"triplet {self.index} missing frames for {missing}")
        if self.score < 0:
            raise ConfigInvalid("triplet score must be nonnegative")


@dataclass(frozen=True)
class ImagePair:
    a: ImageKey
    b: ImageKey
    kind: str

    def __post_init__(self):
        if self.kind not in PAIR_CLASSES:
            raise ConfigInvalid(f"unknown pair class {self.kind!r}")
        cams = (self.a[0], self.b[0])
        expected = {
            "intra": lambda: cams[0] == cams[1] and cams[0] in CAMERA_ORDER,
            "cross_LC": lambda: cams == ("L", "C"),
            "cross_CR": lambda: cams == ("C", "R"),
            "cross_LR": lambda: cams == ("L", "R"),
        }[self.kind]
        if not expected():
            raise ConfigInvalid(f"pair {cams} inconsistent with class {self.kind}")

    @property
    def key(self) -> str:
        return f"{image_name(self.a)}--{image_name(self.b)}"


@dataclass
class MatchSet:
    """Matches for one pair: keypoint index pairs with confidences."""

    pair: ImagePair
    indices: np.ndarray
    confidence: np.ndarray
    inlier_ratio: float = np.nan

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int).reshape(-1, 2)
        self.confidence = np.asarray(self.confidence, dtype=float).reshape(-1)
        if len(self.indices) != len(self.confidence):
            raise ConfigInvalid("match indices and confidences disagree in length")

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class TrackSet:
    """Per-image keypoints plus transitive-closure tracks across pairs."""

    keypoints: dict
    tracks: list
    pair_inliers: dict = field(default_factory=dict)

    def pixel(self, key: ImageKey, idx: int) -> np.ndarray:
        return self.keypoints[key][idx, :2]

    def mean_track_length(self) -> float:
        if not self.tracks:
            return 0.0
        return float(np.mean([len(t) for t in self.tracks]))

    def check(self) -> None:
        for track in self.tracks:
            images = [obs[0] for obs in track]
            if len(images) < 2:
                raise ConfigInvalid("track with fewer than 2 observations")
            if len(set(images)) != len(images):
                raise ConfigInvalid("track observes one image twice")


def select_triplets(manifest, k: int, loader=imaging.load_image) -> list:
    """Pick the sharpest triplet from each of k uniform bins.

    Args:
        manifest: sequence of records with "L"/"C"/"R" frame references
            (and optionally "index"), ordered by synced time.
        k: number of triplets to keep.
        loader: maps a frame reference to an image array.

    Returns:
        k FrameTriplets ordered by time, re-indexed 0..k-1.
    """
    rows = list(manifest)
    n = len(rows)
    if n < k:
        raise InsufficientFrames(f"need at least {k} synced triplets, got {n}")
    if k < 1:
        raise ConfigInvalid("k must be at least 1")
    selected = []
    for b in range(k):
        lo = (b * n) // k
        hi = ((b + 1) * n) // k
        best_row, best_score = None, -1.0
        for r in range(lo, hi):
            row = rows[r]
            score = float(
                np.mean(
                    [imaging.laplacian_variance(loader(row[c])) for c in CAMERA_ORDER]
                )
            )
            if score > best_score:
                best_row, best_score = r, score
        row = rows[best_row]
        selected.append(
            FrameTriplet(
                index=b,
                frames={c: row[c] for c in CAMERA_ORDER},
                score=best_score,
                manifest_index=int(row.get("index", best_row)),
            )
        )
    return selected


def schedule_pairs(triplets, window: int = 5) -> list:
    """Emit intra-camera, L-C, and C-R pairs over the temporal window."""
    if window < 0:
        raise ConfigInvalid("window must be nonnegative")
    n = len(triplets)
    pairs = []
    for cam in CAMERA_ORDER:
        for i in range(n):
            for j in range(i + 1, min(i + window, n - 1) + 1):
                pairs.append(ImagePair((cam, i), (cam, j), "intra"))
    for kind, cam_a, cam_b in (("cross_LC", "L", "C"), ("cross_CR", "C", "R")):
        for i in range(n):
            for j in range(max(0, i - window), min(n - 1, i + window) + 1):
                pairs.append(ImagePair((cam_a, i), (cam_b, j), kind))
    return pairs


def pair_counts(n: int, window: int) -> dict:
    """Closed-form pair counts per class for n triplets."""
    w = min(window, n - 1)
    intra_per_cam = n * w - w * (w + 1) // 2
    cross_per_class = n * (2 * w + 1) - w * (w + 1)
    return {
        "intra": 3 * intra_per_cam,
        "cross_LC": cross_per_class,
        "cross_CR": cross_per_class,
        "total": 3 * intra_per_cam + 2 * cross_per_class,
    }


def schedule_pairs_exhaustive(n: int, cap: int = EXHAUSTIVE_CAP) -> list:
    """All pairs over the full sequence, left-right included, capped.

    Fallback for runs with the constrained scheduler switched off: the
    window widens to the whole sequence and the left-right restriction
    is lifted. Unrestricted growth is quadratic, so enumerations beyond
    `cap` are thinned by an evenly strided subsample; the result is a
    pure function of (n, cap).
    """
    if n < 1:
        raise ConfigInvalid("need at least 1 triplet")
    if cap < 1:
        raise ConfigInvalid("pair cap must be positive")
    pairs = []
    for cam in CAMERA_ORDER:
        for i in range(n):
            for j in range(i + 1, n):
                pairs.append(ImagePair((cam, i), (cam, j), "intra"))
    for kind, cam_a, cam_b in (
        ("cross_LC", "L", "C"),
        ("cross_CR", "C", "R"),
        ("cross_LR", "L", "R"),
    ):
        for i in range(n):
            for j in range(n):
                pairs.append(ImagePair((cam_a, i), (cam_b, j), kind))
    if len(pairs) <= cap:
        return pairs
    # Stride >= 1 between kept indices, so no index repeats.
    keep = np.round(np.linspace(0, len(pairs) - 1, cap)).astype(int)
    return [pairs[i] for i in keep]


def ingest_matches(pairs, provider, max_keypoints: int = MAX_KEYPOINTS):
    """Pull keypoints and matches from a provider and validate them.

    The provider supplies keypoints(key) -> (n, 3) [u, v, score] and
    matches(pair) -> ((m, 2) int indices, (m,) confidences). Images over
    the keypoint budget are trimmed to the highest-score keypoints and
    match indices are remapped; matches referencing trimmed keypoints
    are dropped.

    Returns:
        (keypoints dict keyed by image, list of MatchSet).
    """
    keypoints = {}
    remaps = {}
    for pair in pairs:
        for key in (pair.a, pair.b):
            if key in keypoints:
                continue
            try:
                kp = np.asarray(provider.keypoints(key), dtype=float).reshape(-1, 3)
            except KeyError as exc:
                raise UnknownImage(f"provider has no image {image_name(key)}") from exc
            remap = None
            if len(kp) > max_keypoints:
                order = np.argsort(-kp[:, 2], kind="stable")[:max_keypoints]
                remap = np.full(len(kp), -1, dtype=int)
                remap[np.sort(order)] = np.arange(max_keypoints)
                kp = kp[np.sort(order)]
            keypoints[key] = kp
            remaps[key] = remap
    sets = []
    for pair in pairs:
        idx, conf = provider.matches(pair)
        idx = np.asarray(idx, dtype=int).reshape(-1, 2)
        conf = np.asarray(conf, dtype=float).reshape(-1)
        for col, key in ((0, pair.a), (1, pair.b)):
            n_orig = len(keypoints[key]) if remaps[key] is None else len(remaps[key])
            if len(idx) and (idx[:, col].min() < 0 or idx[:, col].max() >= n_orig):
                raise IndexOutOfRange(
                    f"pair {pair.key}: keypoint index out of range for "
                    f"{image_name(key)}"
                )
            if len(np.unique(idx[:, col])) != len(idx):
                raise DuplicateMatch(
                    f"pair {pair.key}: keypoint matched twice in {image_name(key)}"
                )
            if remaps[key] is not None:
                idx[:, col] = remaps[key][idx[:, col]]
        keep = (idx >= 0).all(axis=1)
        sets.append(MatchSet(pair, idx[keep], conf[keep]))
    return keypoints, sets


class FileMatchProvider:
    """Reads the on-disk interchange format.

    A manifest file lists one document per pair; each document holds
    {image_a, image_b, keypoints_a, keypoints_b, matches} with matches
    as [index_a, index_b, confidence] rows. Keypoints repeated across
    documents must agree exactly.
    """

    def __init__(self, manifest_path):
        root = Path(manifest_path).parent
        self._keypoints = {}
        self._matches = {}
        for entry in json.loads(Path(manifest_path).read_text()):
            doc = json.loads((root / entry).read_text())
            key_a = parse_image_name(doc["image_a"])
            key_b = parse_image_name(doc["image_b"])
            for key, kps in ((key_a, doc["keypoints_a"]), (key_b, doc["keypoints_b"])):
                arr = np.asarray(kps, dtype=float).reshape(-1, 3)
                if key in self._keypoints:
                    if not np.array_equal(self._keypoints[key], arr):
                        raise ConfigInvalid(
                            f"inconsistent keypoints for {image_name(key)} "
                            f"across match documents"
                        )
                else:
                    self._keypoints[key] = arr
            m = np.asarray(doc["matches"], dtype=float).reshape(-1, 3)
            self._matches[(key_a, key_b)] = (
                m[:, :2].astype(int),
                m[:, 2].copy(),
            )

    def keypoints(self, key: ImageKey) -> np.ndarray:
        if key not in self._keypoints:
            raise KeyError(key)
        return self._keypoints[key]

    def matches(self, pair: ImagePair):
        return self._matches.get(
            (pair.a, pair.b), (np.empty((0, 2), dtype=int), np.empty(0))
        )


def write_match_document(path, pair: ImagePair, kps_a, kps_b, indices, confidence):
    doc = {
        "image_a": image_name(pair.a),
        "image_b": image_name(pair.b),
        "keypoints_a": np.asarray(kps_a, dtype=float).tolist(),
        "keypoints_b": np.asarray(kps_b, dtype=float).tolist(),
        "matches": [
            [int(ia), int(ib), float(c)]
            for (ia, ib), c in zip(np.asarray(indices), np.asarray(confidence))
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def pair_seed(pair: ImagePair, run_seed: int) -> int:
    """Stable per-pair RANSAC seed, independent of process hashing."""
    digest = hashlib.sha256(f"{pair.key}|{run_seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _essential_from_eight(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Least-squares essential matrix from >= 8 normalized correspondences."""
    a = np.empty((len(xa), 9))
    a[:, 0] = xb[:, 0] * xa[:, 0]
    a[:, 1] = xb[:, 0] * xa[:, 1]
    a[:, 2] = xb[:, 0]
    a[:, 3] = xb[:, 1] * xa[:, 0]
    a[:, 4] = xb[:, 1] * xa[:, 1]
    a[:, 5] = xb[:, 1]
    a[:, 6] = xa[:, 0]
    a[:, 7] = xa[:, 1]
    a[:, 8] = 1.0
    # full_matrices: the null direction is the 9th right singular
    # vector, which a reduced SVD omits for the minimal 8-row system.
    _, _, vt = np.linalg.svd(a, full_matrices=True)
    e = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(e)
    sigma = (s[0] + s[1]) / 2.0
    return u @ np.diag([sigma, sigma, 0.0]) @ vt


def _sampson_sq(f: np.ndarray, ua: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Squared Sampson distance of pixel correspondences under F."""
    ha = np.column_stack([ua, np.ones(len(ua))])
    hb = np.column_stack([ub, np.ones(len(ub))])
    fa = ha @ f.T
    ftb = hb @ f
    num = np.einsum("ij,ij->i", hb, fa) ** 2
    den = fa[:, 0] ** 2 + fa[:, 1] ** 2 + ftb[:, 0] ** 2 + ftb[:, 1] ** 2
    return num / np.maximum(den, 1e-300)


def essential_to_fundamental(e: np.ndarray, camera: CameraModel) -> np.ndarray:
    k_inv = np.linalg.inv(camera.K)
    return k_inv.T @ e @ k_inv


def verify_pair(
    match_set: MatchSet,
    kps_a: np.ndarray,
    kps_b: np.ndarray,
    camera: CameraModel,
    tau: float = 2.0,
    confidence: float = 0.9999,
    max_iters: int = 10000,
    seed: int = 0,
) -> MatchSet:
    """Keep matches consistent with a RANSAC-estimated essential matrix.

    Correspondences are normalized with the camera intrinsics, the
    essential matrix is estimated from 8-point samples, and inliers are
    matches whose pixel Sampson distance is below tau. The model is
    refit on the final inlier set.

    Raises:
        DegenerateConfiguration: fewer than 8 input matches, no model
            with >= 8 inliers, or fewer than 15 final inliers. The
            message carries the drop reason.
    """
    m = len(match_set)
    if m < MIN_MATCHES:
        raise DegenerateConfiguration(
            f"too_few_matches: pair {match_set.pair.key} has {m} < {MIN_MATCHES}"
        )
    ua = kps_a[match_set.indices[:, 0], :2]
    ub = kps_b[match_set.indices[:, 1], :2]
    xa = (ua - [camera.cx, camera.cy]) / [camera.fx, camera.fy]
    xb = (ub - [camera.cx, camera.cy]) / [camera.fx, camera.fy]
    rng = np.random.default_rng(seed)
    tau_sq = tau * tau
    best_inliers = None
    best_count = 0
    needed = max_iters
    it = 0
    while it < needed and it < max_iters:
        sample = rng.choice(m, size=8, replace=False)
        try:
            e = _essential_from_eight(xa[sample], xb[sample])
        except np.linalg.LinAlgError:
            it += 1
            continue
        f = essential_to_fundamental(e, camera)
        inliers = _sampson_sq(f, ua, ub) < tau_sq
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
            hit8 = (count / m) ** 8
            if hit8 >= 1.0:
                needed = it + 1
            else:
                est = np.log(1.0 - confidence) / np.log1p(-hit8)
                needed = int(min(max_iters, np.ceil(est)))
        it += 1
    if best_inliers is None or best_count < MIN_MATCHES:
        raise DegenerateConfiguration(
            f"no_model: pair {match_set.pair.key} found no model with "
            f">= {MIN_MATCHES} inliers"
        )
    # Refit on all inliers and reclassify once.
    e = _essential_from_eight(xa[best_inliers], xb[best_inliers])
    f = essential_to_fundamental(e, camera)
    inliers = _sampson_sq(f, ua, ub) < tau_sq
    if int(inliers.sum()) >= MIN_MATCHES:
        best_inliers = inliers
        best_count = int(inliers.sum())
    if best_count < MIN_INLIERS:
        raise DegenerateConfiguration(
            f"too_few_inliers: pair {match_set.pair.key} kept {best_count} "
            f"< {MIN_INLIERS}"
        )
    return MatchSet(
        pair=match_set.pair,
        indices=match_set.indices[best_inliers],
        confidence=match_set.confidence[best_inliers],
        inlier_ratio=best_count / m,
    )


class _UnionFind:
    def __init__(self):
        self.parent = {}
        self.images = {}

    def add(self, node):
        if node not in self.parent:
            self.parent[node] = node
            self.images[node] = {node[0]}

    def find(self, node):
        root = node
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[node] != root:
            self.parent[node], node = root, self.parent[node]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.images[ra] & self.images[rb]:
            return False
        if len(self.images[ra]) < len(self.images[rb]):
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.images[ra] |= self.images.pop(rb)
        return True


def build_tracks(verified, keypoints) -> TrackSet:
    """Transitive closure of verified matches into multi-view tracks.

    Matches are merged in decreasing confidence order; a merge that
    would place two keypoints of one image in the same track is
    skipped, dropping the weaker conflicting observation.
    """
    uf = _UnionFind()
    edges = []
    for ms in verified:
        for (ia, ib), conf in zip(ms.indices, ms.confidence):
            edges.append((float(conf), (ms.pair.a, int(ia)), (ms.pair.b, int(ib))))
    edges.sort(key=lambda e: -e[0])
    for _, node_a, node_b in edges:
        uf.add(node_a)
        uf.add(node_b)
        uf.union(node_a, node_b)
    components = {}
    for node in uf.parent:
        components.setdefault(uf.find(node), []).append(node)
    tracks = [sorted(nodes) for nodes in components.values() if len(nodes) >= 2]
    tracks.sort()
    track_set = TrackSet(
        keypoints=dict(keypoints),
        tracks=tracks,
        pair_inliers={ms.pair.key: len(ms) for ms in verified},
    )
    track_set.check()
    return track_set
