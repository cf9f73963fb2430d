"""Ground-truth splat cloud and rendered training targets.

The track generator covers correspondences and the frame renderer
covers synchronization; this module closes the loop for the splat
stage. It builds a dense colored Gaussian cloud on the same scenario
surfaces and renders it at the rig poses, so the training targets
describe the scene the sparse reconstruction actually saw.
"""

import numpy as np
from scipy.spatial import cKDTree

from .. import geometry as geo
from ..errors import ConfigInvalid
from ..matching import CAMERA_ORDER
from ..splat import GaussianCloud, render
from .frames import value_noise
from .scene import RigScenario
from .tracks import surface_point_counts

# Fraction of the mean 3-NN distance used as the Gaussian sigma; a bit
# under 1 keeps neighboring splats overlapping without washing out the
# albedo texture.
SCALE_FACTOR = 0.8
ALPHA_INIT = 0.85

# Mild per-primitive channel gains so the scene is not a pure gray
# ramp; cycled by primitive index.
_TINTS = (
    (1.00, 0.96, 0.90),
    (0.92, 1.00, 0.94),
    (0.90, 0.95, 1.00),
    (1.00, 0.90, 0.92),
)

_TEXTURE_RES = 256
_TEXTURE_WEIGHT = 0.5


def surface_cloud(
    scenario: RigScenario, n_gaussians: int = 4000, seed: int = 0
) -> GaussianCloud:
    """Dense Gaussian cloud sampled on the scenario surfaces.

    Each primitive contributes its area-weighted share of points,
    colored by its albedo, a shared value-noise texture over (x, y),
    and a per-primitive tint. Scales are isotropic from local point
    density, so the rendered cloud reads as a closed surface.
    """
    if n_gaussians < 1:
        raise ConfigInvalid("need at least 1 Gaussian")
    counts = surface_point_counts(scenario, n_gaussians)
    plane = scenario.plane
    texture = value_noise(
        np.random.default_rng([seed, 7]), _TEXTURE_RES, _TEXTURE_RES
    )

    points = []
    colors = []
    for idx, (prim, count) in enumerate(zip(scenario.primitives, counts)):
        if count < 1:
            continue
        pts = prim.sample(np.random.default_rng([seed, 100 + idx]), count)
        tx = (pts[:, 0] - plane.x_range[0]) / (plane.x_range[1] - plane.x_range[0])
        ty = (pts[:, 1] - plane.y_range[0]) / (plane.y_range[1] - plane.y_range[0])
        col = np.clip(tx * (_TEXTURE_RES - 1), 0, _TEXTURE_RES - 1).astype(int)
        row = np.clip(ty * (_TEXTURE_RES - 1), 0, _TEXTURE_RES - 1).astype(int)
        shade = prim.albedo * (
            1.0 - _TEXTURE_WEIGHT / 2.0 + _TEXTURE_WEIGHT * texture[row, col]
        )
        tint = np.array(_TINTS[idx % len(_TINTS)])
        points.append(pts)
        colors.append(np.clip(shade[:, None] * tint[None, :], 0.02, 0.98))
    xyz = np.vstack(points)
    n = len(xyz)

    if n == 1:
        sigma = np.array([0.01])
    else:
        k = min(3, n - 1)
        dists, _ = cKDTree(xyz).query(xyz, k=k + 1)
        sigma = SCALE_FACTOR * dists[:, 1:].mean(axis=1)
        sigma = np.clip(sigma, 1e-5, None)

    cloud = GaussianCloud(
        mu=xyz,
        scales=np.repeat(sigma[:, None], 3, axis=1),
        quats=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        colors=np.vstack(colors),
        alphas=np.full(n, ALPHA_INIT),
    )
    cloud.check()
    return cloud


def render_targets(
    cloud: GaussianCloud, poses: dict, camera: geo.CameraModel
) -> dict:
    """Render the cloud at every pose; keys ordered by (index, L/C/R).

    Returns {image key: (H, W, 3) float image}.
    """
    order = sorted(poses, key=lambda k: (k[1], CAMERA_ORDER.index(k[0])))
    return {key: render(cloud, poses[key], camera).color for key in order}
