"""Rig-prior bundle adjustment over poses and points.

Reprojection residuals use each image's rectified pinhole model under
a Huber loss; a soft prior ties every triplet's relative camera
geometry to the nominal rig baselines without hard-locking the poses.
The normal equations are solved through the point-block Schur
complement, so cost per iteration is linear in observations plus a
dense solve over the pose blocks.

All poses are world-to-camera. Pose updates are left-multiplicative:
R <- exp([dw]x) R, t <- t + dt.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .. import geometry as geo
from ..errors import ConfigInvalid
from .model import SparseModel

log = logging.getLogger(__name__)

HUBER_PX = 2.0
LAMBDA0 = 1e-3
MAX_LAMBDA = 1e14
DIAG_FLOOR = 1e-12


@dataclass
class RigPrior:
    """Soft rig constraints: nominal in-triplet baselines and weights.

    Translations are expressed in the center camera's frame; weights
    are per-axis quadratic penalties. Zero weights disable the prior
    (the ablation toggle).
    """

    t_lc: np.ndarray = field(default_factory=lambda: np.array([-0.31, 0.0, 0.0]))
    t_cr: np.ndarray = field(default_factory=lambda: np.array([0.31, 0.0, 0.0]))
    weight_t: float = 1e4
    weight_r: float = 1e2

    def __post_init__(self):
        self.t_lc = np.asarray(self.t_lc, dtype=float).reshape(3)
        self.t_cr = np.asarray(self.t_cr, dtype=float).reshape(3)
        if self.weight_t < 0 or self.weight_r < 0:
            raise ConfigInvalid("prior weights must be nonnegative")

    @classmethod
    def disabled(cls) -> "RigPrior":
        return cls(weight_t=0.0, weight_r=0.0)

    @property
    def enabled(self) -> bool:
        return self.weight_t > 0 or self.weight_r > 0


@dataclass
class BundleResult:
    model: SparseModel
    converged: bool
    iterations: int
    initial_cost: float
    final_cost: float
    mean_reprojection_px: float
    cost_trace: list = field(default_factory=list)


def _skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for (..., 3) vectors."""
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _so3_log(r: np.ndarray) -> np.ndarray:
    return geo.axis_angle_from_quat(geo.matrix_to_quat(r))


def _jl_inv(phi: np.ndarray) -> np.ndarray:
    """Inverse left Jacobian of SO(3) at rotation vector phi."""
    theta = np.linalg.norm(phi)
    px = _skew(phi)
    if theta < 1e-6:
        c = 1.0 / 12.0
    else:
        c = 1.0 / theta**2 - 1.0 / (2.0 * theta * np.tan(theta / 2.0))
    return np.eye(3) - 0.5 * px + c * (px @ px)


class _Problem:
    """Arrays extracted from a model for vectorized evaluation."""

    def __init__(self, model: SparseModel, prior: RigPrior, triplet_map):
        self.model = model
        self.keys = sorted(model.registered_keys())
        if not self.keys:
            raise ConfigInvalid("no registered images to adjust")
        self.cam_index = {k: i for i, k in enumerate(self.keys)}
        if triplet_map is None:
            triplet_map = {k: (k[0], k[1]) for k in self.keys}
        self.triplet_map = triplet_map

        # Anchor the first center-camera pose; fall back to the first
        # registered image when no center camera is present.
        centers = [
            k for k in self.keys if triplet_map.get(k, (None,))[0] == "C"
        ]
        anchor_key = min(centers) if centers else self.keys[0]
        self.anchor = self.cam_index[anchor_key]

        self.rot = np.stack([model.images[k].pose.R for k in self.keys])
        self.trans = np.stack([model.images[k].pose.t for k in self.keys])

        ints = np.array(
            [
                (c.fx, c.fy, c.cx, c.cy)
                for c in (model.camera_for(k) for k in self.keys)
            ]
        )
        self.fx, self.fy = ints[:, 0], ints[:, 1]
        self.cx, self.cy = ints[:, 2], ints[:, 3]

        self.point_ids = []
        xyz = []
        ci, pi, uv = [], [], []
        for idx, pt in enumerate(model.points):
            reg = [
                (key, px)
                for key, _, px in pt.observations
                if model.images[key].registered
            ]
            if len(reg) < 2:
                continue
            j = len(self.point_ids)
            self.point_ids.append(idx)
            xyz.append(pt.xyz)
            for key, px in reg:
                ci.append(self.cam_index[key])
                pi.append(j)
                uv.append(px)
        if not self.point_ids:
            raise ConfigInvalid("no points with 2 registered observations")
        self.xyz = np.array(xyz)
        self.ci = np.array(ci, dtype=int)
        self.pi = np.array(pi, dtype=int)
        self.uv = np.array(uv)

        # Triplets with a registered center camera; each pair term only
        # exists when both of its endpoints are registered.
        self.prior = prior
        by_triplet = {}
        for k in self.keys:
            cam_id, tidx = triplet_map.get(k, (k[0], k[1]))
            by_triplet.setdefault(tidx, {})[cam_id] = self.cam_index[k]
        self.pairs_lc = []
        self.pairs_cr = []
        if prior.enabled:
            for tidx in sorted(by_triplet):
                trip = by_triplet[tidx]
                if "C" not in trip:
                    continue
                if "L" in trip:
                    self.pairs_lc.append((trip["L"], trip["C"]))
                if "R" in trip:
                    self.pairs_cr.append((trip["R"], trip["C"]))

    @property
    def n_cams(self) -> int:
        return len(self.keys)

    @property
    def n_points(self) -> int:
        return len(self.point_ids)


def _project(prob: _Problem, rot, trans, xyz):
    """Camera-frame points and pixel residuals; z for chirality checks."""
    pc = np.einsum("mij,mj->mi", rot[prob.ci], xyz[prob.pi]) + trans[prob.ci]
    z = pc[:, 2]
    fx, fy = prob.fx[prob.ci], prob.fy[prob.ci]
    cx, cy = prob.cx[prob.ci], prob.cy[prob.ci]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * pc[:, 0] / z + cx
        v = fy * pc[:, 1] / z + cy
    r = np.column_stack([u, v]) - prob.uv
    return pc, r


def _robust_weights(r: np.ndarray):
    """Huber weights and true robust cost for squared pixel residuals."""
    s2 = np.einsum("mi,mi->m", r, r)
    s = np.sqrt(s2)
    w = np.where(s <= HUBER_PX, 1.0, HUBER_PX / np.maximum(s, 1e-300))
    rho = np.where(s <= HUBER_PX, s2, 2.0 * HUBER_PX * s - HUBER_PX**2)
    return w, float(rho.sum())


def _prior_terms(prob: _Problem, rot, trans):
    """Rig-prior residuals with Jacobian blocks.

    Returns (cost, terms); each term is (i_a, i_b, r, J_a, J_b) with r
    already scaled by sqrt(weight) and J 3x6 blocks in [dw, dt] order.
    """
    prior = prob.prior
    terms = []
    cost = 0.0
    centers = -np.einsum("mji,mj->mi", rot, trans)

    def translation_term(i_x, i_c, nominal, sw):
        r_c, t_c = rot[i_c], trans[i_c]
        r_x, t_x = rot[i_x], trans[i_x]
        rel = r_c @ (centers[i_x] - centers[i_c])
        res = rel - nominal
        j_x = np.zeros((3, 6))
        rcrxt = r_c @ r_x.T
        j_x[:, :3] = -rcrxt @ _skew(t_x)
        j_x[:, 3:] = -rcrxt
        j_c = np.zeros((3, 6))
        j_c[:, :3] = -_skew(r_c @ centers[i_x])
        j_c[:, 3:] = np.eye(3)
        return res * sw, j_x * sw, j_c * sw

    def rotation_term(i_x, i_c, sw):
        phi = _so3_log(rot[i_x] @ rot[i_c].T)
        jli = _jl_inv(phi)
        return phi * sw, np.pad(jli, ((0, 0), (0, 3))) * sw, np.pad(
            -jli.T, ((0, 0), (0, 3))
        ) * sw

    sw_t = np.sqrt(prior.weight_t)
    sw_r = np.sqrt(prior.weight_r)
    for pairs, nominal in ((prob.pairs_lc, prior.t_lc), (prob.pairs_cr, prior.t_cr)):
        for i_x, i_c in pairs:
            if prior.weight_t > 0:
                res, j_x, j_c = translation_term(i_x, i_c, nominal, sw_t)
                terms.append((i_x, i_c, res, j_x, j_c))
                cost += float(res @ res)
            if prior.weight_r > 0:
                res, j_x, j_c = rotation_term(i_x, i_c, sw_r)
                terms.append((i_x, i_c, res, j_x, j_c))
                cost += float(res @ res)
    return cost, terms


def _total_cost(prob: _Problem, rot, trans, xyz) -> float:
    pc, r = _project(prob, rot, trans, xyz)
    if np.any(pc[:, 2] <= 1e-9):
        return np.inf
    _, cost = _robust_weights(r)
    prior_cost, _ = _prior_terms(prob, rot, trans)
    return cost + prior_cost


def _reproj_jacobians(prob: _Problem, rot, trans, xyz):
    """Residuals and per-observation Jacobian blocks, unweighted.

    Returns (r, j_cam, j_pt): j_cam is (m, 2, 6) in [dw, dt] order for
    the observing pose, j_pt is (m, 2, 3) for the point.
    """
    pc, r = _project(prob, rot, trans, xyz)
    z = pc[:, 2]
    fx, fy = prob.fx[prob.ci], prob.fy[prob.ci]
    m = len(r)
    dpi = np.zeros((m, 2, 3))
    dpi[:, 0, 0] = fx / z
    dpi[:, 0, 2] = -fx * pc[:, 0] / z**2
    dpi[:, 1, 1] = fy / z
    dpi[:, 1, 2] = -fy * pc[:, 1] / z**2

    rx = pc - trans[prob.ci]
    j_cam = np.empty((m, 2, 6))
    j_cam[:, :, :3] = -np.einsum("mij,mjk->mik", dpi, _skew(rx))
    j_cam[:, :, 3:] = dpi
    j_pt = np.einsum("mij,mjk->mik", dpi, rot[prob.ci])
    return r, j_cam, j_pt


def _linearize(prob: _Problem, rot, trans, xyz):
    """Huber-weighted normal-equation blocks at the current state.

    Returns (cost, B, Cblocks, E, g_c, g_p) where B is the dense pose
    Hessian including prior coupling, Cblocks the per-point 3x3
    Hessians, and E the sparse pose-point off-diagonal.
    """
    n_c, n_p = prob.n_cams, prob.n_points
    r, j_cam, j_pt = _reproj_jacobians(prob, rot, trans, xyz)
    w, cost = _robust_weights(r)

    sq = np.sqrt(w)
    rw = r * sq[:, None]
    j_cam = j_cam * sq[:, None, None]
    j_pt = j_pt * sq[:, None, None]

    b_blocks = np.zeros((n_c, 6, 6))
    np.add.at(b_blocks, prob.ci, np.einsum("mki,mkj->mij", j_cam, j_cam))
    c_blocks = np.zeros((n_p, 3, 3))
    np.add.at(c_blocks, prob.pi, np.einsum("mki,mkj->mij", j_pt, j_pt))

    g_c = np.zeros((n_c, 6))
    np.add.at(g_c, prob.ci, np.einsum("mki,mk->mi", j_cam, rw))
    g_p = np.zeros((n_p, 3))
    np.add.at(g_p, prob.pi, np.einsum("mki,mk->mi", j_pt, rw))

    e_blk = np.einsum("mki,mkj->mij", j_cam, j_pt)
    rows = (prob.ci[:, None, None] * 6 + np.arange(6)[None, :, None]) * np.ones(
        (1, 1, 3), dtype=int
    )
    cols = (prob.pi[:, None, None] * 3 + np.arange(3)[None, None, :]) * np.ones(
        (1, 6, 1), dtype=int
    )
    e = sp.coo_matrix(
        (e_blk.ravel(), (rows.ravel(), cols.ravel())), shape=(6 * n_c, 3 * n_p)
    ).tocsr()

    b = np.zeros((6 * n_c, 6 * n_c))
    for i in range(n_c):
        b[6 * i : 6 * i + 6, 6 * i : 6 * i + 6] = b_blocks[i]

    prior_cost, terms = _prior_terms(prob, rot, trans)
    cost += prior_cost
    for i_x, i_c, res, j_x, j_c in terms:
        sx, sc = slice(6 * i_x, 6 * i_x + 6), slice(6 * i_c, 6 * i_c + 6)
        b[sx, sx] += j_x.T @ j_x
        b[sc, sc] += j_c.T @ j_c
        b[sx, sc] += j_x.T @ j_c
        b[sc, sx] += j_c.T @ j_x
        g_c[i_x] += j_x.T @ res
        g_c[i_c] += j_c.T @ res

    return cost, b, c_blocks, e, g_c.ravel(), g_p.ravel()


def _solve_step(prob: _Problem, b, c_blocks, e, g_c, g_p, lam):
    """Damped Schur-complement solve for (pose step, point step)."""
    n_c, n_p = prob.n_cams, prob.n_points
    diag_b = np.maximum(np.diag(b), DIAG_FLOOR)
    b_aug = b + np.diag(lam * diag_b)

    c_aug = c_blocks.copy()
    idx = np.arange(3)
    diag_c = np.maximum(c_blocks[:, idx, idx], DIAG_FLOOR)
    c_aug[:, idx, idx] += lam * diag_c
    try:
        c_inv = np.linalg.inv(c_aug)
    except np.linalg.LinAlgError:
        return None, None
    c_inv_m = sp.bsr_matrix(
        (c_inv, np.arange(n_p), np.arange(n_p + 1)), shape=(3 * n_p, 3 * n_p)
    )

    e_ci = e @ c_inv_m
    s = b_aug - (e_ci @ e.T).toarray()
    rhs = -g_c + e_ci @ g_p

    a = prob.anchor
    rows = slice(6 * a, 6 * a + 6)
    s[rows, :] = 0.0
    s[:, rows] = 0.0
    for k in range(6 * a, 6 * a + 6):
        s[k, k] = 1.0
    rhs[rows] = 0.0

    try:
        dc = np.linalg.solve(s, rhs)
    except np.linalg.LinAlgError:
        return None, None
    dp = c_inv_m @ (-g_p - e.T @ dc)
    return dc.reshape(n_c, 6), dp.reshape(n_p, 3)


def bundle_adjust(
    model: SparseModel,
    prior: RigPrior = None,
    triplet_map: dict = None,
    max_iters: int = 200,
    rel_tol: float = 1e-8,
    lam0: float = LAMBDA0,
) -> BundleResult:
    """Levenberg-Marquardt refinement of all registered poses and points.

    The objective is the Huber-robust reprojection cost plus the rig
    prior terms; the gauge is fixed by anchoring the first center
    camera, and the prior's translation weight pins the metric scale.
    Damping is multiplicative (x10 on reject, x0.1 on accept). When the
    iteration cap is hit first, the best iterate is kept and the result
    is flagged unconverged rather than raising.
    """
    if prior is None:
        prior = RigPrior.disabled()
    prob = _Problem(model, prior, triplet_map)
    rot, trans, xyz = prob.rot.copy(), prob.trans.copy(), prob.xyz.copy()

    cost = _total_cost(prob, rot, trans, xyz)
    initial_cost = cost
    trace = [cost]
    lam = lam0
    converged = False
    iteration = 0

    while iteration < max_iters:
        iteration += 1
        lin_cost, b, c_blocks, e, g_c, g_p = _linearize(prob, rot, trans, xyz)
        if max(np.abs(g_c).max(), np.abs(g_p).max()) < 1e-14:
            converged = True
            break
        accepted = False
        while lam <= MAX_LAMBDA:
            dc, dp = _solve_step(prob, b, c_blocks, e, g_c, g_p, lam)
            if dc is None:
                lam *= 10.0
                continue
            rot_new = np.einsum(
                "mij,mjk->mik",
                np.stack([geo.rotation_from_axis_angle(w) for w in dc[:, :3]]),
                rot,
            )
            trans_new = trans + dc[:, 3:]
            xyz_new = xyz + dp
            new_cost = _total_cost(prob, rot_new, trans_new, xyz_new)
            if new_cost <= cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                rot, trans, xyz = rot_new, trans_new, xyz_new
                cost = new_cost
                trace.append(cost)
                lam = max(lam * 0.1, 1e-12)
                accepted = True
                if rel < rel_tol:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            # Damping exhausted: no downhill step exists at this
            # linearization, treat the current iterate as converged.
            converged = True
            break
        if converged:
            break

    for i, key in enumerate(prob.keys):
        model.images[key].pose = geo.Pose(geo.matrix_to_quat(rot[i]), trans[i].copy())
    for j, idx in enumerate(prob.point_ids):
        model.points[idx].xyz = xyz[j].copy()

    errs = model.reprojection_errors()
    mean_px = float(errs.mean()) if len(errs) else 0.0
    log.info(
        "bundle: %d cams, %d pts, cost %.6g -> %.6g in %d iters%s",
        prob.n_cams,
        prob.n_points,
        initial_cost,
        cost,
        iteration,
        "" if converged else " (not converged)",
    )
    return BundleResult(
        model=model,
        converged=converged,
        iterations=iteration,
        initial_cost=initial_cost,
        final_cost=cost,
        mean_reprojection_px=mean_px,
        cost_trace=trace,
    )
