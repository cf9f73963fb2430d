"""Forward splat rendering: project, depth-sort, composite front to back.

Rendering happens in rectified space, so only the pinhole part of the
camera model is used; distortion is handled upstream. The per-pixel
depth sort is exact (no tiling) with submission index as tie-break,
which makes renders deterministic and order-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import geometry as geo
from .cloud import GaussianCloud, quat_matrices

MIN_DEPTH = 1e-6
TRUNCATION_Q = 9.0  # 3-sigma ellipse in Mahalanobis-squared units
TAPER_Q = 0.5       # feather width below the cutoff, see _kernel_values
COV_EPS = 1e-12     # keeps projected covariances invertible
CHUNK_ENTRIES = 2_000_000  # candidate (gaussian, pixel) pairs per band


@dataclass
class View:
    """A posed pinhole camera, optionally with its captured image."""

    pose: geo.Pose
    camera: geo.CameraModel
    image: np.ndarray = None


@dataclass
class RenderTarget:
    color: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W) accumulated splat weight, in [0, 1]


@dataclass
class _Projection:
    """Per-visible-Gaussian quantities, depth-ordered."""

    idx: np.ndarray      # rows into the cloud arrays
    pc: np.ndarray       # (m, 3) camera-frame centers
    center: np.ndarray   # (m, 2) projected pixel positions
    jac: np.ndarray      # (m, 2, 3) projection Jacobians at the center
    rot_g: np.ndarray    # (m, 3, 3) world rotation of each Gaussian
    cov_cam: np.ndarray  # (m, 3, 3)
    cov2d: np.ndarray    # (m, 2, 2)
    minv: np.ndarray     # (m, 2, 2) inverse of cov2d


@dataclass
class _RenderCache:
    """Everything the backward pass needs, in composited entry order."""

    proj: _Projection
    entry_gauss: np.ndarray  # (e,) rows into proj arrays
    pix: np.ndarray          # (e,) flat pixel indices
    d: np.ndarray            # (e, 2) pixel minus projected center
    gval: np.ndarray         # (e,) kernel values
    dgval_dq: np.ndarray     # (e,)
    atilde: np.ndarray       # (e,)
    trans: np.ndarray        # (e,) transmittance in front of each entry
    t_pix: np.ndarray        # (npix,) final per-pixel transmittance
    image: np.ndarray        # (H, W, 3)


def _project_cloud(cloud: GaussianCloud, pose: geo.Pose, camera) -> _Projection:
    r_cam = pose.R
    pc_all = cloud.mu @ r_cam.T + pose.t
    vis = np.flatnonzero(pc_all[:, 2] > MIN_DEPTH)
    # Global depth order with index tie-break; per-pixel order inherits it.
    order = np.lexsort((vis, pc_all[vis, 2]))
    idx = vis[order]

    pc = pc_all[idx]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    center = np.column_stack([
        camera.fx * x / z + camera.cx,
        camera.fy * y / z + camera.cy,
    ])
    m = len(idx)
    jac = np.zeros((m, 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 0, 2] = -camera.fx * x / (z * z)
    jac[:, 1, 1] = camera.fy / z
    jac[:, 1, 2] = -camera.fy * y / (z * z)

    rot_g = quat_matrices(cloud.quats[idx])
    s2 = cloud.scales[idx] ** 2
    cov_w = np.einsum("mik,mk,mjk->mij", rot_g, s2, rot_g)
    cov_cam = np.einsum("ik,mkl,jl->mij", r_cam, cov_w, r_cam)
    cov2d = np.einsum("mik,mkl,mjl->mij", jac, cov_cam, jac)
    cov2d[:, 0, 0] += COV_EPS
    cov2d[:, 1, 1] += COV_EPS

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    minv = np.empty_like(cov2d)
    minv[:, 0, 0] = cov2d[:, 1, 1] / det
    minv[:, 1, 1] = cov2d[:, 0, 0] / det
    minv[:, 0, 1] = -cov2d[:, 0, 1] / det
    minv[:, 1, 0] = -cov2d[:, 1, 0] / det
    return _Projection(idx, pc, center, jac, rot_g, cov_cam, cov2d, minv)


def _kernel_values(q: np.ndarray):
    """Gaussian falloff exp(-q/2) truncated beyond the 3-sigma ellipse.

    The cutoff fades smoothly over the last TAPER_Q below TRUNCATION_Q
    so the rendered image stays differentiable at the boundary; inside
    the band the value is the exact exponential. Returns the value and
    its derivative with respect to q.
    """
    g = np.exp(-0.5 * q)
    u = np.clip((TRUNCATION_Q - q) / TAPER_Q, 0.0, 1.0)
    taper = u * u * (3.0 - 2.0 * u)
    in_band = (u > 0.0) & (u < 1.0)
    dtaper_dq = np.where(in_band, -(6.0 * u - 6.0 * u * u) / TAPER_Q, 0.0)
    return g * taper, g * (dtaper_dq - 0.5 * taper)


def _bboxes(proj: _Projection, width: int, height: int):
    """Pixel bounding boxes of the truncation ellipses, image-clipped."""
    cx, cy = proj.center[:, 0], proj.center[:, 1]
    rx = 3.0 * np.sqrt(proj.cov2d[:, 0, 0])
    ry = 3.0 * np.sqrt(proj.cov2d[:, 1, 1])
    x0 = np.clip(np.ceil(cx - rx), 0, width).astype(np.int64)
    x1 = np.clip(np.floor(cx + rx), -1, width - 1).astype(np.int64)
    y0 = np.clip(np.ceil(cy - ry), 0, height).astype(np.int64)
    y1 = np.clip(np.floor(cy + ry), -1, height - 1).astype(np.int64)
    return x0, x1, y0, y1


def _expand_entries(proj: _Projection, rows, x0, x1, y0, y1, width):
    """Flat (gaussian, pixel) entries for the given pixel boxes.

    `rows` indexes proj arrays and must be ascending so the depth
    order carries over; box arrays run parallel to it. Entries come
    out grouped by pixel and depth-ordered within each group.
    Returns (entry_gauss, pix, d, q) with entry_gauss into proj rows.
    """
    bw = np.maximum(x1 - x0 + 1, 0)
    bh = np.maximum(y1 - y0 + 1, 0)
    counts = bw * bh

    total = int(counts.sum())
    if total == 0:
        empty = np.zeros(0, np.int64)
        return empty, empty, np.zeros((0, 2)), np.zeros(0)
    rep = np.repeat(np.arange(len(counts)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    bw_e = bw[rep]
    px = x0[rep] + local % bw_e
    py = y0[rep] + local // bw_e
    entry_gauss = rows[rep]

    cx, cy = proj.center[:, 0], proj.center[:, 1]
    d = np.column_stack([px - cx[entry_gauss], py - cy[entry_gauss]])
    minv = proj.minv[entry_gauss]
    q = (
        minv[:, 0, 0] * d[:, 0] ** 2
        + 2.0 * minv[:, 0, 1] * d[:, 0] * d[:, 1]
        + minv[:, 1, 1] * d[:, 1] ** 2
    )
    keep = q <= TRUNCATION_Q
    entry_gauss, d, q = entry_gauss[keep], d[keep], q[keep]
    pix = py[keep] * width + px[keep]

    # Stable sort by pixel keeps the depth order inside each pixel.
    order = np.argsort(pix, kind="stable")
    return entry_gauss[order], pix[order], d[order], q[order]


def _footprints(proj: _Projection, width: int, height: int):
    x0, x1, y0, y1 = _bboxes(proj, width, height)
    rows = np.arange(len(proj.idx))
    return _expand_entries(proj, rows, x0, x1, y0, y1, width)


def _composite(pix, atilde, colors, npix, background):
    """Segmented front-to-back compositing in log-transmittance space.

    Entries are grouped per pixel, so a running sum of log(1 - a)
    reset at each segment start gives the transmittance ahead of
    every entry in one vectorized sweep. Returns the flat image, the
    per-pixel final transmittance, and the per-entry transmittance.
    """
    logs = np.log1p(-atilde)
    cums = np.cumsum(logs)
    excl = cums - logs
    first = np.ones(len(pix), bool)
    first[1:] = pix[1:] != pix[:-1]
    seg_id = np.cumsum(first) - 1
    base = excl[first][seg_id]
    trans = np.exp(excl - base)
    weight = trans * atilde

    t_pix = np.ones(npix)
    if len(pix):
        last = np.ones(len(pix), bool)
        last[:-1] = first[1:]
        t_pix[pix[last]] = np.exp(cums[last] - base[last])

    image = np.empty((npix, 3))
    for ch in range(3):
        image[:, ch] = np.bincount(
            pix, weights=weight * colors[:, ch], minlength=npix
        )
    image += t_pix[:, None] * background[None, :]
    return image, t_pix, trans


def _forward(cloud: GaussianCloud, pose: geo.Pose, camera):
    """Render and keep the intermediates the gradient pass reuses.

    Single-shot: all entries live at once, which is fine at training
    resolutions; render() bands large images instead.
    """
    height, width = camera.height, camera.width
    background = np.asarray(cloud.background, float)

    proj = _project_cloud(cloud, pose, camera)
    entry_gauss, pix, d, q = _footprints(proj, width, height)
    gval, dgval_dq = _kernel_values(q)
    atilde = cloud.alphas[proj.idx][entry_gauss] * gval
    colors = cloud.colors[proj.idx][entry_gauss]

    image, t_pix, trans = _composite(
        pix, atilde, colors, width * height, background
    )
    image = image.reshape(height, width, 3)
    cache = _RenderCache(
        proj, entry_gauss, pix, d, gval, dgval_dq, atilde, trans, t_pix, image
    )
    return image, (1.0 - t_pix).reshape(height, width), cache


def _render_banded(cloud: GaussianCloud, proj: _Projection, camera):
    """Composite in horizontal bands to bound peak entry memory.

    Pixels never span bands, so per-pixel compositing is unchanged;
    band heights follow the per-row candidate load.
    """
    height, width = camera.height, camera.width
    background = np.asarray(cloud.background, float)
    x0, x1, y0, y1 = _bboxes(proj, width, height)
    live = (x1 >= x0) & (y1 >= y0)

    load = np.zeros(height + 1)
    np.add.at(load, y0[live], (x1 - x0 + 1)[live].astype(float))
    np.add.at(load, y1[live] + 1, -(x1 - x0 + 1)[live].astype(float))
    cum = np.cumsum(np.cumsum(load[:height]))

    image = np.empty((height, width, 3))
    alpha = np.empty((height, width))
    lo = 0
    while lo < height:
        floor = cum[lo - 1] if lo else 0.0
        hi = int(np.searchsorted(cum, floor + CHUNK_ENTRIES, side="right"))
        hi = min(max(hi, lo + 1), height)

        rows = np.flatnonzero(live & (y0 < hi) & (y1 >= lo))
        entry_gauss, pix, d, q = _expand_entries(
            proj, rows, x0[rows], x1[rows],
            np.maximum(y0[rows], lo), np.minimum(y1[rows], hi - 1), width,
        )
        gval, _ = _kernel_values(q)
        atilde = cloud.alphas[proj.idx][entry_gauss] * gval
        colors = cloud.colors[proj.idx][entry_gauss]
        band, t_pix, _ = _composite(
            pix - lo * width, atilde, colors, (hi - lo) * width, background
        )
        image[lo:hi] = band.reshape(hi - lo, width, 3)
        alpha[lo:hi] = (1.0 - t_pix).reshape(hi - lo, width)
        lo = hi
    return image, alpha


def render(cloud: GaussianCloud, pose: geo.Pose, camera) -> RenderTarget:
    """Composite the cloud into an image; empty clouds give background."""
    proj = _project_cloud(cloud, pose, camera)
    x0, x1, y0, y1 = _bboxes(proj, camera.width, camera.height)
    candidates = int(
        (np.maximum(x1 - x0 + 1, 0) * np.maximum(y1 - y0 + 1, 0)).sum()
    )
    if candidates > CHUNK_ENTRIES:
        image, alpha = _render_banded(cloud, proj, camera)
        return RenderTarget(color=image, alpha=alpha)
    image, alpha, _ = _forward(cloud, pose, camera)
    return RenderTarget(color=image, alpha=alpha)
