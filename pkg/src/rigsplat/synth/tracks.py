"""Ground-truth multi-view tracks rendered from a scenario.

Surface points are projected into every camera of every triplet through
the full distortion chain to decide visibility, but the emitted
keypoints are rectified (pinhole) coordinates, matching the pipeline
convention that reconstruction runs on undistorted images. Pixel noise
is therefore added in rectified coordinates.
"""

from dataclasses import dataclass

import numpy as np

from .. import geometry as geo
from ..errors import ConfigInvalid
from ..matching import CAMERA_ORDER, ImagePair, TrackSet
from .scene import RigScenario


@dataclass
class ObservationTable:
    """Per-image ground truth: which point each keypoint row came from."""

    point_ids: np.ndarray
    pixels: np.ndarray
    outlier_mask: np.ndarray


@dataclass
class TrackScene:
    """Everything generate_tracks knows, kept for oracle checks."""

    scenario: RigScenario
    camera: geo.CameraModel
    poses: dict
    times: np.ndarray
    points: np.ndarray
    observations: dict
    tracks: TrackSet

    def match_provider(self) -> "SyntheticMatchProvider":
        return SyntheticMatchProvider(self)

    def reprojection_errors(self, include_outliers: bool = False) -> np.ndarray:
        """Distances between stored pixels and ground-truth projections."""
        errors = []
        for key, table in self.observations.items():
            proj = geo.project(self.points[table.point_ids], self.poses[key], self.camera)
            err = np.linalg.norm(table.pixels - proj, axis=1)
            if not include_outliers:
                err = err[~table.outlier_mask]
            errors.append(err)
        return np.concatenate(errors)


class SyntheticMatchProvider:
    """Match provider backed by generator ground truth.

    Emits the correspondence row for every point seen by both images of
    a pair; rows whose endpoint observation was replaced by an outlier
    are labeled False in `match_labels`.
    """

    def __init__(self, scene: TrackScene):
        self._scene = scene

    def keypoints(self, key) -> np.ndarray:
        table = self._scene.observations[key]
        return np.column_stack([table.pixels, np.ones(len(table.point_ids))])

    def _common(self, pair: ImagePair):
        ta = self._scene.observations[pair.a]
        tb = self._scene.observations[pair.b]
        common, ia, ib = np.intersect1d(
            ta.point_ids, tb.point_ids, return_indices=True
        )
        return ta, tb, ia, ib

    def matches(self, pair: ImagePair):
        _, _, ia, ib = self._common(pair)
        return np.column_stack([ia, ib]), np.ones(len(ia))

    def match_labels(self, pair: ImagePair) -> np.ndarray:
        ta, tb, ia, ib = self._common(pair)
        return ~(ta.outlier_mask[ia] | tb.outlier_mask[ib])


def surface_point_counts(scenario: RigScenario, n_points: int) -> np.ndarray:
    """Per-primitive sample budget, area-weighted with the plane capped.

    The base plate dwarfs the hanging parts by area; its share is
    capped at 60% so the scene keeps real depth variation.
    """
    areas = np.array([p.area for p in scenario.primitives], dtype=float)
    weights = areas / areas.sum()
    plane_idx = int(np.argmax(areas))
    if weights[plane_idx] > 0.6:
        scale = 0.4 / max(1.0 - weights[plane_idx], 1e-9)
        weights = weights * scale
        weights[plane_idx] = 0.6
    counts = np.floor(weights * n_points).astype(int)
    counts[plane_idx] += n_points - counts.sum()
    return counts


def _sample_points(scenario: RigScenario, n_points: int, rng) -> np.ndarray:
    counts = surface_point_counts(scenario, n_points)
    return np.vstack(
        [p.sample(rng, c) for p, c in zip(scenario.primitives, counts) if c > 0]
    )


def generate_tracks(
    scenario: RigScenario, n_triplets: int, seed: int, n_points: int = 3000
) -> TrackScene:
    """Sample surface points and observe them from every rig position.

    Args:
        scenario: scene, rig, camera, and noise configuration. The
            noise sigma is a per-axis std in rectified pixels; the
            outlier rate replaces that fraction of observations with
            uniform draws over the image.
        n_triplets: rig positions, spaced uniformly along the travel.
        seed: all randomness derives from (seed, item index) streams.
        n_points: surface samples before visibility filtering.

    Returns:
        TrackScene with ground-truth poses, points, per-image
        observation tables, and tracks over every point seen at least
        twice.
    """
    if n_triplets < 2:
        raise ConfigInvalid(f"need >= 2 triplets, got {n_triplets}")
    cam = scenario.camera
    rect = scenario.rectified_camera()
    duration = scenario.travel / scenario.speed if scenario.speed > 0 else 0.0
    times = np.linspace(0.0, duration, n_triplets)
    points = _sample_points(scenario, n_points, np.random.default_rng([seed, 0]))
    r_limit = 0.99 * geo.radial_validity_limit(cam.dist)

    poses = {}
    observations = {}
    track_obs = {}
    for ti, t in enumerate(times):
        for ci, cam_id in enumerate(CAMERA_ORDER):
            key = (cam_id, ti)
            pose = scenario.camera_pose(cam_id, t)
            poses[key] = pose
            pc = points + pose.t  # identity rotation by construction
            z = pc[:, 2]
            xy = pc[:, :2] / z[:, None]
            visible = np.linalg.norm(xy, axis=1) < r_limit
            duv = geo.distort(xy[visible], cam.dist) * [cam.fx, cam.fy] + [
                cam.cx,
                cam.cy,
            ]
            ruv = xy[visible] * [rect.fx, rect.fy] + [rect.cx, rect.cy]
            inside = (
                (duv[:, 0] >= 0)
                & (duv[:, 0] <= cam.width - 1)
                & (duv[:, 1] >= 0)
                & (duv[:, 1] <= cam.height - 1)
                & (ruv[:, 0] >= 0)
                & (ruv[:, 0] <= rect.width - 1)
                & (ruv[:, 1] >= 0)
                & (ruv[:, 1] <= rect.height - 1)
            )
            ids = np.flatnonzero(visible)[inside]
            pixels = ruv[inside]

            rng = np.random.default_rng([seed, 1 + ti * 3 + ci])
            if scenario.noise_sigma > 0:
                pixels = pixels + rng.normal(0.0, scenario.noise_sigma, pixels.shape)
            outlier = np.zeros(len(ids), dtype=bool)
            if scenario.outlier_rate > 0:
                outlier = rng.random(len(ids)) < scenario.outlier_rate
                n_out = int(outlier.sum())
                pixels[outlier] = np.column_stack(
                    [
                        rng.uniform(0.0, rect.width - 1.0, n_out),
                        rng.uniform(0.0, rect.height - 1.0, n_out),
                    ]
                )
            observations[key] = ObservationTable(ids, pixels, outlier)
            for row, pid in enumerate(ids):
                track_obs.setdefault(pid, []).append((key, row))

    keypoints = {
        key: np.column_stack([tab.pixels, np.ones(len(tab.point_ids))])
        for key, tab in observations.items()
    }
    tracks = [obs for obs in track_obs.values() if len(obs) >= 2]
    return TrackScene(
        scenario=scenario,
        camera=rect,
        poses=poses,
        times=times,
        points=points,
        observations=observations,
        tracks=TrackSet(keypoints=keypoints, tracks=tracks),
    )
