"""Incremental reconstruction: seed pair, resectioning, triangulation.

Operates on rectified images (pinhole models); the distortion chain
never appears here. Poses are world-to-camera. The seed pair fixes the
gauge with the first camera at identity and a unit baseline; the rig
prior restores the metric scale later during bundle adjustment.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np

from .. import geometry as geo
from ..errors import (
    ConfigInvalid,
    NoValidSeedPair,
    PointBehindCamera,
    RegistrationFailed,
)
from ..matching import TrackSet, _essential_from_eight, _sampson_sq, parse_image_name
from .model import SparseModel

log = logging.getLogger(__name__)

MIN_SEED_INLIERS = 50
MIN_SEED_ANGLE_DEG = 1.5
MIN_PNP_POINTS = 12
PNP_THRESHOLD_PX = 4.0
MIN_TRIANGULATION_ANGLE_DEG = 1.0


def _normalized(camera: geo.CameraModel, uv: np.ndarray) -> np.ndarray:
    return (uv - [camera.cx, camera.cy]) / [camera.fx, camera.fy]


def _camera_of(cameras, cam_id: str) -> geo.CameraModel:
    if isinstance(cameras, dict):
        return cameras[cam_id]
    return cameras


def triangulate_midpoint(centers: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Least-squares point closest to a bundle of rays.

    Solves sum_i (I - d_i d_i^T) (X - c_i) = 0 for X; directions must
    be unit length.
    """
    eye = np.eye(3)
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for c, d in zip(centers, dirs):
        m = eye - np.outer(d, d)
        a += m
        b += m @ c
    return np.linalg.solve(a, b)


def triangulation_angles(point: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Pairwise ray angles (degrees) from camera centers to a point."""
    rays = point[None, :] - centers
    rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    cosines = np.clip(rays @ rays.T, -1.0, 1.0)
    iu = np.triu_indices(len(centers), k=1)
    return np.degrees(np.arccos(cosines[iu]))


def refine_point(
    point: np.ndarray,
    poses: list,
    cameras: list,
    pixels: np.ndarray,
    iters: int = 10,
) -> np.ndarray:
    """Gauss-Newton polish of one point's reprojection error."""
    x = point.copy()
    for _ in range(iters):
        jtj = np.zeros((3, 3))
        jtr = np.zeros(3)
        for pose, cam, uv in zip(poses, cameras, pixels):
            pc = pose.R @ x + pose.t
            if pc[2] <= 1e-9:
                raise PointBehindCamera(f"depth {pc[2]:.3g} during refinement")
            z = pc[2]
            u = cam.fx * pc[0] / z + cam.cx
            v = cam.fy * pc[1] / z + cam.cy
            r = np.array([u - uv[0], v - uv[1]])
            d_uv_pc = np.array(
                [
                    [cam.fx / z, 0.0, -cam.fx * pc[0] / z**2],
                    [0.0, cam.fy / z, -cam.fy * pc[1] / z**2],
                ]
            )
            j = d_uv_pc @ pose.R
            jtj += j.T @ j
            jtr += j.T @ r
        try:
            step = np.linalg.solve(jtj + 1e-9 * np.eye(3), -jtr)
        except np.linalg.LinAlgError:
            break
        x = x + step
        if np.linalg.norm(step) < 1e-12:
            break
    return x


def _triangulate_two_view(r: np.ndarray, t: np.ndarray, xa: np.ndarray, xb: np.ndarray):
    """Midpoint triangulation with camera A at identity, B at (r, t).

    Uses the closed two-ray form (midpoint of the mutual perpendicular,
    which is the least-squares point for two rays). Returns points in
    A's frame and a both-in-front mask; near-parallel rays are masked
    out.
    """
    ca = np.zeros(3)
    cb = -r.T @ t
    da = np.column_stack([xa, np.ones(len(xa))])
    da = da / np.linalg.norm(da, axis=1, keepdims=True)
    db_cam = np.column_stack([xb, np.ones(len(xb))])
    db = (db_cam / np.linalg.norm(db_cam, axis=1, keepdims=True)) @ r
    base = cb - ca
    d12 = np.einsum("mi,mi->m", da, db)
    denom = 1.0 - d12**2
    bd1 = da @ base
    bd2 = db @ base
    with np.errstate(divide="ignore", invalid="ignore"):
        s1 = (bd1 - bd2 * d12) / denom
        s2 = (bd1 * d12 - bd2) / denom
    pts = 0.5 * (ca + s1[:, None] * da + cb + s2[:, None] * db)
    valid = np.abs(denom) > 1e-12
    za = pts[:, 2]
    zb = (pts @ r.T + t)[:, 2]
    return pts, valid & (za > 0) & (zb > 0)


def decompose_essential(e: np.ndarray, xa: np.ndarray, xb: np.ndarray):
    """Pick the (R, t) among the four E factorizations with both-camera
    chirality on the most correspondences."""
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    candidates = []
    for r in (u @ w @ vt, u @ w.T @ vt):
        for t in (u[:, 2], -u[:, 2]):
            pts, front = _triangulate_two_view(r, t, xa, xb)
            candidates.append((int(front.sum()), r, t, pts, front))
    candidates.sort(key=lambda c: -c[0])
    best = candidates[0]
    if best[0] == 0:
        raise NoValidSeedPair("no decomposition places points in front")
    return best[1], best[2], best[3], best[4]


def _essential_ransac(
    ua: np.ndarray,
    ub: np.ndarray,
    xa: np.ndarray,
    xb: np.ndarray,
    cam_a: geo.CameraModel,
    cam_b: geo.CameraModel,
    tau: float = 2.0,
    confidence: float = 0.9999,
    max_iters: int = 2000,
    seed: int = 0,
):
    """Essential matrix with pixel Sampson gating, refit on inliers.

    Tracks can chain a bad observation through a pair that never saw
    it, so the seed fit cannot trust pair verification alone.

    Returns (E, inlier mask) or (None, None) when no sample yields
    >= 8 inliers.
    """
    m = len(xa)
    if m < 8:
        return None, None
    ka_inv = np.linalg.inv(cam_a.K)
    kb_inv = np.linalg.inv(cam_b.K)
    rng = np.random.default_rng(seed)
    tau_sq = tau * tau
    best_mask = None
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
        f = kb_inv.T @ e @ ka_inv
        mask = _sampson_sq(f, ua, ub) < tau_sq
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            hit8 = (count / m) ** 8
            if hit8 >= 1.0:
                needed = it + 1
            else:
                est = np.log(1.0 - confidence) / np.log1p(-hit8)
                needed = int(min(max_iters, np.ceil(est)))
        it += 1
    if best_mask is None or best_count < 8:
        return None, None
    e = _essential_from_eight(xa[best_mask], xb[best_mask])
    f = kb_inv.T @ e @ ka_inv
    mask = _sampson_sq(f, ua, ub) < tau_sq
    if int(mask.sum()) >= 8:
        best_mask = mask
        e = _essential_from_eight(xa[best_mask], xb[best_mask])
    return e, best_mask


def _tracks_by_image(tracks: TrackSet) -> dict:
    index = {}
    for tid, track in enumerate(tracks.tracks):
        for key, kp_idx in track:
            index.setdefault(key, []).append((tid, kp_idx))
    return index


def _candidate_pairs(tracks: TrackSet):
    for pair_key, count in tracks.pair_inliers.items():
        if count < MIN_SEED_INLIERS:
            continue
        name_a, _, name_b = pair_key.partition("--")
        yield parse_image_name(name_a), parse_image_name(name_b), count


def initialize_pair(tracks: TrackSet, cameras) -> SparseModel:
    """Seed a model from the verified pair maximizing inliers x angle.

    Candidates need >= 50 verified inliers and a median triangulation
    angle >= 1.5 degrees; the seed baseline has unit length.
    """
    image_tracks = {}
    for tid, track in enumerate(tracks.tracks):
        for key, kp_idx in track:
            image_tracks.setdefault(key, {})[tid] = kp_idx

    best = None
    for key_a, key_b, inliers in _candidate_pairs(tracks):
        in_a = image_tracks.get(key_a, {})
        in_b = image_tracks.get(key_b, {})
        shared = [
            (tid, in_a[tid], in_b[tid]) for tid in in_a.keys() & in_b.keys()
        ]
        shared.sort()
        if len(shared) < MIN_SEED_INLIERS:
            continue
        cam_a = _camera_of(cameras, key_a[0])
        cam_b = _camera_of(cameras, key_b[0])
        ua = np.array([tracks.keypoints[key_a][i, :2] for _, i, _ in shared])
        ub = np.array([tracks.keypoints[key_b][j, :2] for _, _, j in shared])
        xa = _normalized(cam_a, ua)
        xb = _normalized(cam_b, ub)
        digest = hashlib.sha256(f"{key_a}|{key_b}|seed".encode()).digest()
        e, mask = _essential_ransac(
            ua, ub, xa, xb, cam_a, cam_b,
            seed=int.from_bytes(digest[:8], "little"),
        )
        if e is None or int(mask.sum()) < MIN_SEED_INLIERS:
            continue
        shared = [s for s, keep in zip(shared, mask) if keep]
        try:
            r, t, pts, front = decompose_essential(e, xa[mask], xb[mask])
        except NoValidSeedPair:
            continue
        if front.sum() < MIN_SEED_INLIERS:
            continue
        cb = -r.T @ t
        r1 = pts[front]
        r2 = pts[front] - cb
        cosines = np.einsum("mi,mi->m", r1, r2) / (
            np.linalg.norm(r1, axis=1) * np.linalg.norm(r2, axis=1)
        )
        angles = np.degrees(np.arccos(np.clip(cosines, -1.0, 1.0)))
        med = float(np.median(angles))
        if med < MIN_SEED_ANGLE_DEG:
            continue
        score = int(front.sum()) * med
        if best is None or score > best[0]:
            best = (score, key_a, key_b, r, t, shared, pts, front, med)

    if best is None:
        raise NoValidSeedPair(
            "no verified pair with >= "
            f"{MIN_SEED_INLIERS} inliers and median angle >= "
            f"{MIN_SEED_ANGLE_DEG} deg"
        )
    score, key_a, key_b, r, t, shared, pts, front, med = best
    log.info(
        "seed pair %s-%s: %d shared tracks, median angle %.2f deg",
        key_a,
        key_b,
        len(shared),
        med,
    )

    if isinstance(cameras, dict):
        camera_map = cameras
    else:
        camera_map = {cid: cameras for cid in sorted({k[0] for k in tracks.keypoints})}
    model = SparseModel(camera_map)
    for key in sorted(tracks.keypoints):
        model.add_image(key)
    model.register_image(key_a, geo.Pose.identity())
    model.register_image(key_b, geo.Pose(geo.matrix_to_quat(r), t.copy()))

    # Points carry only observations from registered images; later
    # registrations attach their observations explicitly so outliers
    # can be gated at attach time.
    for (tid, ia, ib), point, ok in zip(shared, pts, front):
        if not ok:
            continue
        obs = [
            (key_a, ia, tracks.pixel(key_a, ia)),
            (key_b, ib, tracks.pixel(key_b, ib)),
        ]
        model.add_point(point, tid, obs)
    return model


def _pnp_dlt(x_world: np.ndarray, x_norm: np.ndarray):
    """Direct linear transform pose from >= 6 2D-3D correspondences."""
    n = len(x_world)
    a = np.zeros((2 * n, 12))
    hw = np.column_stack([x_world, np.ones(n)])
    a[0::2, 0:4] = hw
    a[0::2, 8:12] = -x_norm[:, 0:1] * hw
    a[1::2, 4:8] = hw
    a[1::2, 8:12] = -x_norm[:, 1:2] * hw
    _, _, vt = np.linalg.svd(a)
    p = vt[-1].reshape(3, 4)
    m = p[:, :3]
    # The DLT solution is defined up to sign and scale; positive
    # determinant with a unit third row makes depths come out positive
    # for points genuinely in front.
    det = np.linalg.det(m)
    if det == 0:
        raise np.linalg.LinAlgError("degenerate resection sample")
    p = p * (np.sign(det) / np.linalg.norm(m[2]))
    m = p[:, :3]
    u, _, vt2 = np.linalg.svd(m)
    r = u @ vt2
    if np.linalg.det(r) < 0:
        r = u @ np.diag([1.0, 1.0, -1.0]) @ vt2
    return r, p[:, 3]


def refine_pose(
    pose: geo.Pose,
    camera: geo.CameraModel,
    x_world: np.ndarray,
    pixels: np.ndarray,
    iters: int = 15,
) -> geo.Pose:
    """Gauss-Newton pose polish on reprojection residuals."""
    rot = pose.R.copy()
    t = pose.t.copy()
    for _ in range(iters):
        pc = x_world @ rot.T + t
        z = pc[:, 2]
        if np.any(z <= 1e-9):
            break
        u = camera.fx * pc[:, 0] / z + camera.cx
        v = camera.fy * pc[:, 1] / z + camera.cy
        r_vec = np.column_stack([u - pixels[:, 0], v - pixels[:, 1]])
        d_uv_pc = np.zeros((len(z), 2, 3))
        d_uv_pc[:, 0, 0] = camera.fx / z
        d_uv_pc[:, 0, 2] = -camera.fx * pc[:, 0] / z**2
        d_uv_pc[:, 1, 1] = camera.fy / z
        d_uv_pc[:, 1, 2] = -camera.fy * pc[:, 1] / z**2
        rotated = x_world @ rot.T
        d_pc_w = np.zeros((len(z), 3, 3))
        d_pc_w[:, 0, 1] = rotated[:, 2]
        d_pc_w[:, 0, 2] = -rotated[:, 1]
        d_pc_w[:, 1, 0] = -rotated[:, 2]
        d_pc_w[:, 1, 2] = rotated[:, 0]
        d_pc_w[:, 2, 0] = rotated[:, 1]
        d_pc_w[:, 2, 1] = -rotated[:, 0]
        j_rot = np.einsum("nij,njk->nik", d_uv_pc, d_pc_w)
        j = np.concatenate([j_rot, d_uv_pc], axis=2).reshape(-1, 6)
        r_flat = r_vec.ravel()
        try:
            step = np.linalg.solve(j.T @ j + 1e-9 * np.eye(6), -j.T @ r_flat)
        except np.linalg.LinAlgError:
            break
        rot = geo.rotation_from_axis_angle(step[:3]) @ rot
        t = t + step[3:]
        if np.linalg.norm(step) < 1e-12:
            break
    return geo.Pose(geo.matrix_to_quat(rot), t)


def resect_image(
    camera: geo.CameraModel,
    x_world: np.ndarray,
    pixels: np.ndarray,
    threshold: float = PNP_THRESHOLD_PX,
    confidence: float = 0.9999,
    max_iters: int = 2000,
    seed: int = 0,
):
    """RANSAC DLT resectioning; returns (pose, inlier mask)."""
    n = len(x_world)
    if n < MIN_PNP_POINTS:
        raise RegistrationFailed(f"{n} correspondences < {MIN_PNP_POINTS}")
    x_norm = _normalized(camera, pixels)
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = 0
    needed = max_iters
    it = 0
    while it < needed and it < max_iters:
        sample = rng.choice(n, size=6, replace=False)
        try:
            r, t = _pnp_dlt(x_world[sample], x_norm[sample])
        except np.linalg.LinAlgError:
            it += 1
            continue
        pc = x_world @ r.T + t
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = camera.fx * pc[:, 0] / z + camera.cx
            v = camera.fy * pc[:, 1] / z + camera.cy
        err = np.hypot(u - pixels[:, 0], v - pixels[:, 1])
        inliers = (z > 0) & (err < threshold)
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_mask = inliers
            ratio = count / n
            hit = ratio**6
            if hit >= 1.0:
                needed = it + 1
            else:
                est = np.log(1.0 - confidence) / np.log1p(-hit)
                needed = int(min(max_iters, np.ceil(est)))
        it += 1
    if best_mask is None or best_count < MIN_PNP_POINTS:
        raise RegistrationFailed(
            f"resection kept {best_count} inliers < {MIN_PNP_POINTS}"
        )
    r, t = _pnp_dlt(x_world[best_mask], x_norm[best_mask])
    pose = refine_pose(
        geo.Pose(geo.matrix_to_quat(r), t),
        camera,
        x_world[best_mask],
        pixels[best_mask],
    )
    return pose, best_mask


def _point_errors(point, r_all, t_all, focal, principal, pixels):
    """Per-observation reprojection error norms; inf behind a camera."""
    pc = np.einsum("kij,j->ki", r_all, point) + t_all
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = pc[:, :2] / z[:, None] * focal + principal
    errs = np.linalg.norm(uv - pixels, axis=1)
    errs[z <= 1e-9] = np.inf
    return errs


def triangulate_track(
    model: SparseModel,
    tracks: TrackSet,
    tid: int,
    threshold: float = PNP_THRESHOLD_PX,
):
    """Triangulate one track robustly from its registered observations.

    Two-view midpoint hypotheses over observation pairs vote for the
    consensus set (tracks can carry a stray bad observation), the point
    is refined on the inliers, and only inlier observations are kept.
    Returns (point, observations) or None when parallax is too low,
    fewer than 2 observations agree, or the point lands behind a
    camera.
    """
    track = tracks.tracks[tid]
    keys, poses, cams, kps = [], [], [], []
    for key, kp_idx in track:
        rec = model.images[key]
        if not rec.registered:
            continue
        keys.append(key)
        poses.append(rec.pose)
        cams.append(model.camera_for(key))
        kps.append(kp_idx)
    k = len(keys)
    if k < 2:
        return None
    pixels = np.array([tracks.pixel(key, kp) for key, kp in zip(keys, kps)])
    r_all = np.stack([p.R for p in poses])
    t_all = np.stack([p.t for p in poses])
    focal = np.array([(c.fx, c.fy) for c in cams])
    principal = np.array([(c.cx, c.cy) for c in cams])
    centers = np.stack([p.center() for p in poses])
    xy = (pixels - principal) / focal
    d_cam = np.column_stack([xy, np.ones(k)])
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    dirs = np.einsum("kji,kj->ki", r_all, d_cam)

    ii, jj = np.triu_indices(k, k=1)
    if len(ii) > 40:
        rng = np.random.default_rng(tid)
        pick = rng.choice(len(ii), size=40, replace=False)
        ii, jj = ii[pick], jj[pick]
    best = None
    for i, j in zip(ii, jj):
        try:
            cand = triangulate_midpoint(centers[[i, j]], dirs[[i, j]])
        except np.linalg.LinAlgError:
            continue
        inl = _point_errors(cand, r_all, t_all, focal, principal, pixels) < threshold
        n = int(inl.sum())
        if n >= 2 and (best is None or n > best[0]):
            best = (n, cand, inl)
    if best is None:
        return None
    _, point, inl = best
    sel = np.flatnonzero(inl)
    try:
        point = refine_point(
            point,
            [poses[s] for s in sel],
            [cams[s] for s in sel],
            pixels[sel],
        )
    except PointBehindCamera:
        return None
    keep = np.flatnonzero(
        _point_errors(point, r_all, t_all, focal, principal, pixels) < threshold
    )
    if len(keep) < 2:
        return None
    if triangulation_angles(point, centers[keep]).max() < MIN_TRIANGULATION_ANGLE_DEG:
        return None
    obs = [(keys[s], kps[s], pixels[s]) for s in keep]
    return point, obs


def register_next(
    model: SparseModel,
    tracks: TrackSet,
    image_index: dict = None,
    seed: int = 0,
) -> tuple:
    """Register the best unregistered image and grow the point set.

    Returns the image key registered. Raises RegistrationFailed when no
    candidate has enough correspondences or survives resectioning.
    """
    if image_index is None:
        image_index = _tracks_by_image(tracks)
    point_of_track = {pt.track_id: pt for pt in model.points}

    candidates = []
    for key, rec in model.images.items():
        if rec.registered:
            continue
        corr = [
            (point_of_track[tid], kp_idx)
            for tid, kp_idx in image_index.get(key, [])
            if tid in point_of_track
        ]
        if len(corr) >= MIN_PNP_POINTS:
            candidates.append((len(corr), key, corr))
    if not candidates:
        raise RegistrationFailed("no unregistered image has enough correspondences")
    candidates.sort(key=lambda c: (-c[0], c[1]))

    last_error = None
    for _, key, corr in candidates[:5]:
        camera = model.camera_for(key)
        x_world = np.array([pt.xyz for pt, _ in corr])
        pixels = np.array([tracks.pixel(key, kp) for _, kp in corr])
        try:
            pose, _ = resect_image(camera, x_world, pixels, seed=seed)
        except RegistrationFailed as exc:
            last_error = exc
            continue
        model.register_image(key, pose)
        # Extend existing tracks into this image, gating on
        # reprojection so bad observations never attach.
        attached = 0
        for tid, kp_idx in image_index.get(key, []):
            pt = point_of_track.get(tid)
            if pt is None:
                continue
            uv = tracks.pixel(key, kp_idx)
            pc = pose.R @ pt.xyz + pose.t
            if pc[2] <= 1e-9:
                continue
            proj = np.array(
                [
                    camera.fx * pc[0] / pc[2] + camera.cx,
                    camera.fy * pc[1] / pc[2] + camera.cy,
                ]
            )
            if np.linalg.norm(proj - uv) < PNP_THRESHOLD_PX:
                pt.observations.append((key, int(kp_idx), uv))
                attached += 1
        # Grow: triangulate tracks through this image that lack a point.
        added = 0
        for tid, _ in image_index.get(key, []):
            if tid in point_of_track:
                continue
            result = triangulate_track(model, tracks, tid)
            if result is None:
                continue
            point, obs = result
            model.add_point(point, tid, obs)
            added += 1
        log.info("registered %s (+%d obs, +%d points)", key, attached, added)
        return key
    raise RegistrationFailed(f"all candidates failed resection: {last_error}")


def filter_observations(
    model: SparseModel, max_px: float = PNP_THRESHOLD_PX
) -> tuple:
    """Drop observations above a reprojection bound, then thin points.

    Observations behind their camera or over max_px go first; points
    left with fewer than 2 observations are removed entirely. Returns
    (dropped observations, dropped points).
    """
    registered = {
        key: i for i, key in enumerate(sorted(model.registered_keys()))
    }
    if registered:
        rot = np.stack([model.images[k].pose.R for k in registered])
        trans = np.stack([model.images[k].pose.t for k in registered])
        cams = [model.camera_for(k) for k in registered]
        focal = np.array([(c.fx, c.fy) for c in cams])
        principal = np.array([(c.cx, c.cy) for c in cams])

    flat_pt, flat_cam, flat_uv = [], [], []
    for j, pt in enumerate(model.points):
        for key, _, uv in pt.observations:
            if key in registered:
                flat_pt.append(j)
                flat_cam.append(registered[key])
                flat_uv.append(uv)
    ok_flags = np.zeros(0, dtype=bool)
    if flat_pt:
        ci = np.array(flat_cam)
        xyz = np.stack([model.points[j].xyz for j in flat_pt])
        pc = np.einsum("mij,mj->mi", rot[ci], xyz) + trans[ci]
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            proj = pc[:, :2] / z[:, None] * focal[ci] + principal[ci]
        errs = np.linalg.norm(proj - np.asarray(flat_uv), axis=1)
        ok_flags = (z > 1e-9) & (errs <= max_px)

    dropped_obs = 0
    dropped_points = 0
    kept_points = []
    cursor = 0
    for pt in model.points:
        kept = []
        for obs in pt.observations:
            if obs[0] not in registered:
                dropped_obs += 1
                continue
            if ok_flags[cursor]:
                kept.append(obs)
            else:
                dropped_obs += 1
            cursor += 1
        if len(kept) >= 2:
            pt.observations = kept
            kept_points.append(pt)
        else:
            dropped_points += 1
    model.points = kept_points
    return dropped_obs, dropped_points


def reconstruct_incremental(
    tracks: TrackSet,
    cameras,
    prior=None,
    triplet_map: dict = None,
    ba_interval: int = 5,
    seed: int = 0,
    max_iters: int = 200,
    rel_tol: float = 1e-8,
):
    """Seed, grow image by image, and refine a sparse model.

    A capped bundle adjustment plus observation filtering runs every
    ba_interval registrations to stop drift from compounding; a full
    adjustment at the requested tolerance finishes the model. Images
    that never gather enough support are recorded and skipped.

    Returns (model, final BundleResult, failures) where failures maps
    unregistered image keys to the last recorded reason.
    """
    from .ba import bundle_adjust

    model = initialize_pair(tracks, cameras)
    image_index = _tracks_by_image(tracks)
    since_ba = 0
    while True:
        try:
            register_next(model, tracks, image_index=image_index, seed=seed)
        except RegistrationFailed as exc:
            failures = {
                key: str(exc)
                for key, rec in model.images.items()
                if not rec.registered
            }
            if failures:
                log.warning("%d images not registered: %s", len(failures), exc)
            break
        since_ba += 1
        remaining = sum(1 for rec in model.images.values() if not rec.registered)
        if remaining == 0:
            failures = {}
            break
        if since_ba >= ba_interval:
            # Loose mid-build adjustment: enough to stop drift from
            # compounding, the final pass does the real polishing.
            bundle_adjust(model, prior, triplet_map, max_iters=20, rel_tol=1e-4)
            filter_observations(model)
            since_ba = 0

    result = bundle_adjust(
        model, prior, triplet_map, max_iters=max_iters, rel_tol=rel_tol
    )
    n_obs, n_pts = filter_observations(model)
    if n_obs or n_pts:
        result = bundle_adjust(
            model, prior, triplet_map, max_iters=max_iters, rel_tol=rel_tol
        )
    return model, result, failures
