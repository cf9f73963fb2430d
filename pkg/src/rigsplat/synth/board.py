"""Synthetic planar-board detections for exercising the calibration solver."""

from dataclasses import dataclass

import numpy as np

from .. import geometry as geo
from ..errors import ConfigInvalid
from ..sfm.calibration import MIN_CORNERS, BoardView

# Stratified rotation bins reach +-28 degrees per axis, so any run of 4+
# views spans the 40 degree diversity floor with margin even after the
# axis mixing that composing the three rotations introduces.
_ANGLE_MAX_DEG = 28.0
_ANGLE_JITTER_DEG = 2.0
_DISTANCE_RANGE = (0.30, 1.20)


@dataclass
class BoardGeometry:
    """Checkerboard described by its inner-square grid."""

    squares_x: int = 53
    squares_y: int = 37
    square_size: float = 0.022

    def __post_init__(self):
        if self.squares_x < 3 or self.squares_y < 3 or self.square_size <= 0:
            raise ConfigInvalid("board must have >= 3x3 squares of positive size")

    @property
    def corners_x(self) -> int:
        return self.squares_x - 1

    @property
    def corners_y(self) -> int:
        return self.squares_y - 1

    def corner_points(self) -> np.ndarray:
        """All inner-corner coordinates (n, 3) in the board frame, z = 0."""
        xs = np.arange(self.corners_x) * self.square_size
        ys = np.arange(self.corners_y) * self.square_size
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    def center(self) -> np.ndarray:
        return np.array(
            [
                (self.corners_x - 1) * self.square_size / 2.0,
                (self.corners_y - 1) * self.square_size / 2.0,
                0.0,
            ]
        )


def _euler_rotation(angles_deg: np.ndarray) -> np.ndarray:
    ax, ay, az = np.radians(angles_deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def generate_board_views(
    board: BoardGeometry,
    camera: geo.CameraModel,
    n_views: int,
    noise_sigma: float,
    seed: int,
):
    """Render noisy corner detections of the board in varied poses.

    Roll, pitch, yaw, and distance are stratified: each axis gets a
    seeded permutation of evenly spaced bins plus jitter, so small view
    counts still cover the full rotation and distance ranges. Corners
    leaving the image or the invertible distortion region are dropped;
    a view that keeps too few corners is re-centered and retried.

    Args:
        board: checkerboard geometry.
        camera: ground-truth model to render through.
        n_views: number of views, at least 4.
        noise_sigma: RMS corner displacement in pixels; per-axis
            Gaussian noise of sigma/sqrt(2) is applied to detections.
        seed: generator seed; views are independently seeded per index.

    Returns:
        (views, poses): BoardView detections and the true board-to-camera
        poses, index-aligned.
    """
    if n_views < 4:
        raise ConfigInvalid(f"need >= 4 views, got {n_views}")
    corners = board.corner_points()
    center = board.center()
    r_limit = 0.99 * geo.radial_validity_limit(camera.dist)
    axis_sigma = noise_sigma / np.sqrt(2.0)

    master = np.random.default_rng(seed)
    bins = np.linspace(-_ANGLE_MAX_DEG, _ANGLE_MAX_DEG, n_views)
    angles = np.column_stack([master.permutation(bins) for _ in range(3)])
    dist_bins = master.permutation(np.linspace(*_DISTANCE_RANGE, n_views))

    views, poses = [], []
    for v in range(n_views):
        rng = np.random.default_rng([seed, v])
        view_angles = angles[v] + rng.uniform(
            -_ANGLE_JITTER_DEG, _ANGLE_JITTER_DEG, 3
        )
        rot = _euler_rotation(view_angles)
        d = float(
            np.clip(dist_bins[v] + rng.uniform(-0.05, 0.05), *_DISTANCE_RANGE)
        )
        lateral = 0.4 * d
        for attempt in range(50):
            offset = np.array([*rng.uniform(-lateral, lateral, 2), d])
            t = offset - rot @ center
            pc = corners @ rot.T + t
            ok = pc[:, 2] > 1e-6
            xy = pc[:, :2] / np.where(ok, pc[:, 2], 1.0)[:, None]
            ok &= np.linalg.norm(xy, axis=1) < r_limit
            px = np.full((len(corners), 2), np.nan)
            px[ok] = geo.distort(xy[ok], camera.dist) * [camera.fx, camera.fy] + [
                camera.cx,
                camera.cy,
            ]
            if axis_sigma > 0:
                px[ok] += rng.normal(0.0, axis_sigma, (int(ok.sum()), 2))
            ok &= (
                (px[:, 0] >= 0)
                & (px[:, 0] <= camera.width - 1)
                & (px[:, 1] >= 0)
                & (px[:, 1] <= camera.height - 1)
            )
            if ok.sum() >= MIN_CORNERS:
                break
            # Too oblique or off-center: pull toward the axis and retry.
            lateral *= 0.7
        else:
            raise ConfigInvalid(
                f"view {v}: could not place the board in front of the camera"
            )
        ids = np.flatnonzero(ok)
        views.append(
            BoardView(
                frame_id=v,
                corner_ids=ids,
                board_points=corners[ids],
                pixels=px[ids],
            )
        )
        poses.append(geo.Pose(geo.matrix_to_quat(rot), t))
    return views, poses
