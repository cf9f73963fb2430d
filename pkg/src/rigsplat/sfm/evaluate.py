"""Model-vs-truth metrics: similarity alignment and rig drift.

A reconstruction is only defined up to a similarity transform when the
rig prior is off, so camera-center accuracy is measured after a
least-squares alignment. Baseline metrics need no alignment since
distances are invariant to rigid motion (and report drift directly in
meters when the prior has pinned the scale).
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigInvalid
from .model import SparseModel


def umeyama_alignment(src: np.ndarray, dst: np.ndarray, with_scale: bool = True):
    """Least-squares similarity (s, R, t) mapping src onto dst.

    Minimizes ||dst - (s R src + t)||^2 over rotation, translation,
    and optionally scale. Needs >= 3 non-degenerate points.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ConfigInvalid("alignment needs matching (n, 3) arrays")
    if len(src) < 3:
        raise ConfigInvalid("alignment needs >= 3 points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    r = u @ np.diag(sign) @ vt
    if with_scale:
        var_s = (xs**2).sum() / len(src)
        s = float((d * sign).sum() / var_s)
    else:
        s = 1.0
    t = mu_d - s * r @ mu_s
    return s, r, t


def camera_centers(model: SparseModel, keys=None):
    """Registered camera centers as (keys, (n, 3) array)."""
    if keys is None:
        keys = sorted(model.registered_keys())
    centers = np.array([model.images[k].pose.center() for k in keys])
    return keys, centers


def center_rmse(model: SparseModel, truth_poses: dict, with_scale: bool = True):
    """Camera-center RMSE (m) against ground truth after alignment.

    Returns (rmse, per-image errors, (s, R, t)) with errors ordered by
    sorted registered key.
    """
    keys, est = camera_centers(model)
    truth = np.array([truth_poses[k].center() for k in keys])
    s, r, t = umeyama_alignment(est, truth, with_scale=with_scale)
    aligned = est @ (s * r).T + t
    errs = np.linalg.norm(aligned - truth, axis=1)
    return float(np.sqrt((errs**2).mean())), errs, (s, r, t)


def baseline_distances(model: SparseModel, triplet_map: dict = None):
    """Per-triplet L-C, C-R, and L-R camera distances (m).

    Only triplets whose cameras are all registered contribute. Returns
    a dict of arrays keyed by pair name.
    """
    keys = model.registered_keys()
    if triplet_map is None:
        triplet_map = {k: (k[0], k[1]) for k in keys}
    by_triplet = {}
    for k in keys:
        cam_id, tidx = triplet_map[k]
        by_triplet.setdefault(tidx, {})[cam_id] = model.images[k].pose.center()
    lc, cr, lr = [], [], []
    for tidx in sorted(by_triplet):
        trip = by_triplet[tidx]
        if {"L", "C", "R"} <= set(trip):
            lc.append(np.linalg.norm(trip["L"] - trip["C"]))
            cr.append(np.linalg.norm(trip["C"] - trip["R"]))
            lr.append(np.linalg.norm(trip["L"] - trip["R"]))
    return {
        "lc": np.array(lc),
        "cr": np.array(cr),
        "lr": np.array(lr),
    }


def baseline_drift(distances: dict) -> float:
    """Scale-free rig-baseline instability: mean of std/mean over L-C and C-R.

    Zero means every triplet kept the same camera spacing. Works with or
    without a metric prior because the ratio cancels global scale.
    """
    ratios = []
    for name in ("lc", "cr"):
        d = np.asarray(distances[name], dtype=float)
        if len(d) < 2 or d.mean() <= 0:
            continue
        ratios.append(float(d.std() / d.mean()))
    if not ratios:
        raise ConfigInvalid("drift needs at least two complete triplets")
    return float(np.mean(ratios))
