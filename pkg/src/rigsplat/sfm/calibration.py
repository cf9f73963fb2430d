"""Joint intrinsics/distortion/pose calibration from planar board views.

The solver refines focal lengths, principal point, all eight rational
distortion coefficients, and one board pose per view by Levenberg-Marquardt
on the pixel reprojection error. Poses are initialized from homography
decomposition computed on undistorted-guess normalized coordinates.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .. import geometry as geo
from ..errors import ConfigInvalid, NotConverged, RankDeficient
from ..imaging import laplacian_variance

log = logging.getLogger(__name__)

MIN_VIEWS = 4
MIN_CORNERS = 20

# Eigenvalue floor of the Jacobi-scaled normal matrix below which the
# views are treated as rank deficient. Diverse planar views land around
# 1e-4..1e-3; near-identical views collapse below 1e-12.
_SCALED_EIG_FLOOR = 1e-8

_LM_MAX_ITERS = 200
_LM_GTOL = 1e-6
_LM_REL_TOL = 1e-12


@dataclass
class BoardView:
    """Detected corners of one board frame.

    Rows are per-corner observations: `corner_ids[i]` indexes the board
    grid, `board_points[i]` is the metric board-frame coordinate with
    z = 0, `pixels[i]` is the detected (distorted) image position.
    """

    frame_id: int
    corner_ids: np.ndarray
    board_points: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        self.corner_ids = np.asarray(self.corner_ids, dtype=int)
        self.board_points = np.asarray(self.board_points, dtype=float)
        self.pixels = np.asarray(self.pixels, dtype=float)
        n = len(self.corner_ids)
        if self.board_points.shape != (n, 3) or self.pixels.shape != (n, 2):
            raise ConfigInvalid(
                f"view {self.frame_id}: inconsistent corner array shapes"
            )
        if np.any(self.board_points[:, 2] != 0.0):
            raise ConfigInvalid(f"view {self.frame_id}: board points must have z=0")


@dataclass
class CalibrationResult:
    camera: geo.CameraModel
    poses: list
    rms: float
    cost_history: np.ndarray
    gradient_norm: float  # Jacobi-scaled infinity norm at the last iterate
    iterations: int


def frame_curation(frames, window: int = 10):
    """Keep the sharpest frame per non-overlapping window of `window` frames."""
    if window < 1:
        raise ConfigInvalid(f"window must be >= 1, got {window}")
    kept = []
    for start in range(0, len(frames), window):
        chunk = frames[start : start + window]
        scores = [laplacian_variance(f) for f in chunk]
        kept.append(start + int(np.argmax(scores)))
    return kept


def _normalize_points(pts):
    mean = pts.mean(axis=0)
    spread = np.mean(np.linalg.norm(pts - mean, axis=1))
    scale = np.sqrt(2.0) / max(spread, 1e-12)
    t = np.array(
        [[scale, 0.0, -scale * mean[0]], [0.0, scale, -scale * mean[1]], [0, 0, 1.0]]
    )
    return (pts - mean) * scale, t


def _homography(src, dst):
    # DLT with Hartley normalization; src/dst are (n, 2).
    a, ta = _normalize_points(src)
    b, tb = _normalize_points(dst)
    n = len(src)
    m = np.zeros((2 * n, 9))
    m[0::2, 0] = -a[:, 0]
    m[0::2, 1] = -a[:, 1]
    m[0::2, 2] = -1.0
    m[0::2, 6] = b[:, 0] * a[:, 0]
    m[0::2, 7] = b[:, 0] * a[:, 1]
    m[0::2, 8] = b[:, 0]
    m[1::2, 3] = -a[:, 0]
    m[1::2, 4] = -a[:, 1]
    m[1::2, 5] = -1.0
    m[1::2, 6] = b[:, 1] * a[:, 0]
    m[1::2, 7] = b[:, 1] * a[:, 1]
    m[1::2, 8] = b[:, 1]
    _, _, vt = np.linalg.svd(m)
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(tb) @ h @ ta


def _pose_from_homography(h):
    """Board-to-camera rotation and translation from a plane homography."""
    h1, h2, h3 = h[:, 0], h[:, 1], h[:, 2]
    lam = 2.0 / max(np.linalg.norm(h1) + np.linalg.norm(h2), 1e-12)
    r1, r2, t = lam * h1, lam * h2, lam * h3
    if t[2] < 0:
        r1, r2, t = -r1, -r2, -t
    r3 = np.cross(r1, r2)
    u, _, vt = np.linalg.svd(np.column_stack([r1, r2, r3]))
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u[:, -1] = -u[:, -1]
        rot = u @ vt
    return rot, t


def _init_poses(views, init: geo.CameraModel):
    poses = []
    for view in views:
        norm = (view.pixels - [init.cx, init.cy]) / [init.fx, init.fy]
        h = _homography(view.board_points[:, :2], norm)
        poses.append(_pose_from_homography(h))
    return poses


def _residual_and_blocks(view, intr, dist, rot, t, with_jacobian):
    """Per-view residual (2n,) and Jacobian blocks (2n,12) and (2n,6).

    Parameter order: fx, fy, cx, cy, k1..k6, p1, p2, then the local pose
    update (rotation first). Rotation updates are left-multiplied
    exp(delta) @ R, so d(pc)/d(delta) = -[R @ X]_x.
    """
    fx, fy, cx, cy = intr
    rotated = view.board_points @ rot.T
    pc = rotated + t
    z = pc[:, 2]
    xy = pc[:, :2] / z[:, None]
    xyd = geo.distort(xy, dist)
    px = xyd * [fx, fy] + [cx, cy]
    r = (px - view.pixels).reshape(-1)
    if not with_jacobian:
        return r, None, None

    n = len(z)
    focal = np.array([fx, fy])
    # d(px)/d(intr): columns fx, fy, cx, cy.
    j_intr = np.zeros((n, 2, 12))
    j_intr[:, 0, 0] = xyd[:, 0]
    j_intr[:, 1, 1] = xyd[:, 1]
    j_intr[:, 0, 2] = 1.0
    j_intr[:, 1, 3] = 1.0
    j_intr[:, :, 4:] = focal[None, :, None] * geo.distortion_coefficient_jacobian(
        xy, dist
    )

    # Chain to camera-frame coordinates: px -> xyd -> xy -> pc.
    d_xyd = geo.distortion_jacobian(xy, dist)
    d_xy_pc = np.zeros((n, 2, 3))
    d_xy_pc[:, 0, 0] = 1.0 / z
    d_xy_pc[:, 1, 1] = 1.0 / z
    d_xy_pc[:, :, 2] = -xy / z[:, None]
    d_px_pc = focal[None, :, None] * (d_xyd @ d_xy_pc)

    d_pc_rot = np.zeros((n, 3, 3))
    d_pc_rot[:, 0, 1] = rotated[:, 2]
    d_pc_rot[:, 0, 2] = -rotated[:, 1]
    d_pc_rot[:, 1, 0] = -rotated[:, 2]
    d_pc_rot[:, 1, 2] = rotated[:, 0]
    d_pc_rot[:, 2, 0] = rotated[:, 1]
    d_pc_rot[:, 2, 1] = -rotated[:, 0]

    j_pose = np.concatenate([d_px_pc @ d_pc_rot, d_px_pc], axis=2)
    return r, j_intr.reshape(2 * n, 12), j_pose.reshape(2 * n, 6)


def _normal_equations(views, intr, dist, poses):
    p = 12 + 6 * len(views)
    h = np.zeros((p, p))
    g = np.zeros(p)
    cost = 0.0
    for i, view in enumerate(views):
        rot, t = poses[i]
        r, ji, jp = _residual_and_blocks(view, intr, dist, rot, t, True)
        s = 12 + 6 * i
        h[:12, :12] += ji.T @ ji
        cross = ji.T @ jp
        h[:12, s : s + 6] += cross
        h[s : s + 6, :12] += cross.T
        h[s : s + 6, s : s + 6] += jp.T @ jp
        g[:12] += ji.T @ r
        g[s : s + 6] += jp.T @ r
        cost += float(r @ r)
    return h, g, cost


def _total_cost(views, intr, dist, poses):
    cost = 0.0
    for i, view in enumerate(views):
        rot, t = poses[i]
        r, _, _ = _residual_and_blocks(view, intr, dist, rot, t, False)
        cost += float(r @ r)
    return cost


def _apply_step(intr, dist, poses, delta):
    intr2 = intr + delta[:4]
    dist2 = dist + delta[4:12]
    poses2 = []
    for i, (rot, t) in enumerate(poses):
        s = 12 + 6 * i
        w = delta[s : s + 3]
        rot2 = geo.rotation_from_axis_angle(w) @ rot
        poses2.append((rot2, t + delta[s + 3 : s + 6]))
    return intr2, dist2, poses2


def calibrate(
    views,
    init: geo.CameraModel,
    *,
    max_iters: int = _LM_MAX_ITERS,
    gtol: float = _LM_GTOL,
) -> CalibrationResult:
    """Jointly fit intrinsics, distortion, and per-view board poses.

    Args:
        views: list of BoardView, at least 4 views of 20+ corners each.
        init: starting intrinsics (focal from a field-of-view guess,
            principal point near the image center, any distortion start).

    Returns:
        CalibrationResult with the fitted camera, board poses as
        geometry.Pose (board frame to camera frame), pixel RMS over all
        corners, and the accepted-cost history.

    Raises:
        ConfigInvalid: too few views or corners.
        RankDeficient: views lack pose diversity (near-identical poses).
        NotConverged: iteration cap hit with gradient and cost both live.
    """
    if len(views) < MIN_VIEWS:
        raise ConfigInvalid(f"need >= {MIN_VIEWS} views, got {len(views)}")
    for view in views:
        if len(view.corner_ids) < MIN_CORNERS:
            raise ConfigInvalid(
                f"view {view.frame_id}: {len(view.corner_ids)} corners "
                f"< {MIN_CORNERS}"
            )

    intr = np.array([init.fx, init.fy, init.cx, init.cy], dtype=float)
    dist = np.array(init.dist, dtype=float)
    poses = _init_poses(views, init)
    n_obs = sum(len(v.corner_ids) for v in views)

    h, g, cost = _normal_equations(views, intr, dist, poses)
    # Rank test on the system without the denominator coefficients: at a
    # zero-distortion start their columns exactly mirror the numerator
    # ones, which is a removable redundancy, not a pose-diversity problem.
    keep = np.ones(len(g), dtype=bool)
    keep[7:10] = False
    hr = h[np.ix_(keep, keep)]
    scale = 1.0 / np.sqrt(np.maximum(np.diag(hr), 1e-30))
    eigs = np.linalg.eigvalsh(hr * scale[:, None] * scale[None, :])
    if eigs[0] < _SCALED_EIG_FLOOR:
        raise RankDeficient(
            f"scaled normal matrix eigenvalue {eigs[0]:.2e} below "
            f"{_SCALED_EIG_FLOOR:.0e}; views are near-identical"
        )

    def scaled_gradient(h, g):
        # Jacobi-scaled first-order measure; the raw gradient mixes
        # pixel-per-pixel and pixel-per-r^6 axes and has no usable
        # absolute scale.
        return float(np.max(np.abs(g) / np.sqrt(np.maximum(np.diag(h), 1e-30))))

    lam = 1e-3
    history = [cost]
    converged = False
    iters = 0
    plateau = 0
    ginf = scaled_gradient(h, g)
    for iters in range(1, max_iters + 1):
        diag = np.maximum(np.diag(h), 1e-12)
        try:
            delta = np.linalg.solve(h + lam * np.diag(diag), -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        trial = _apply_step(intr, dist, poses, delta)
        new_cost = _total_cost(views, *trial)
        if new_cost < cost:
            rel = (cost - new_cost) / max(cost, 1e-300)
            plateau = plateau + 1 if rel < _LM_REL_TOL else 0
            intr, dist, poses = trial
            cost = new_cost
            history.append(cost)
            lam = max(lam * 0.1, 1e-12)
            h, g, _ = _normal_equations(views, intr, dist, poses)
            ginf = scaled_gradient(h, g)
            if ginf < gtol or plateau >= 3:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e14:
                converged = True  # cost plateau: no descent direction left
                break

    gradient_norm = ginf
    rms = float(np.sqrt(cost / n_obs))
    camera = geo.CameraModel(
        width=init.width,
        height=init.height,
        fx=float(intr[0]),
        fy=float(intr[1]),
        cx=float(intr[2]),
        cy=float(intr[3]),
        dist=dist,
    )
    pose_objs = [geo.Pose(geo.matrix_to_quat(rot), t.copy()) for rot, t in poses]
    result = CalibrationResult(
        camera=camera,
        poses=pose_objs,
        rms=rms,
        cost_history=np.array(history),
        gradient_norm=gradient_norm,
        iterations=iters,
    )
    if not converged:
        raise NotConverged(
            f"calibration stopped after {iters} iterations with gradient "
            f"norm {gradient_norm:.2e}",
            result=result,
        )
    log.info(
        "calibrated %d views, %d corners: rms %.4f px in %d iterations",
        len(views),
        n_obs,
        rms,
        iters,
    )
    return result
