"""Shared helpers for the test suite."""

import numpy as np

from rigsplat import geometry as geo
from rigsplat import imaging

# Per-order coefficient scales so each radial term stays O(0.3) at the
# field-of-view edge; keeps rejection sampling cheap.
_R2 = geo.R_MAX**2
_DIST_SCALES = np.array(
    [0.3 / _R2, 0.15 / _R2**2, 0.05 / _R2**3, 0.3 / _R2, 0.15 / _R2**2, 0.05 / _R2**3]
)

# Representative wide-angle coefficient set shared by geometry tests.
CAL_DIST = np.array([-0.02, 1.5e-3, -2e-5, -0.01, 8e-4, -1e-5, 5e-4, -3e-4])


def random_distortion(rng: np.random.Generator) -> np.ndarray:
    """Random coefficient set that stays invertible over most of the FOV."""
    while True:
        k = rng.uniform(-1.0, 1.0, 6) * _DIST_SCALES
        p = rng.uniform(-1.0, 1.0, 2) * 2e-3
        dist = np.concatenate([k, p])
        if geo.radial_validity_limit(dist) >= 0.8 * geo.R_MAX:
            return dist


def wide_camera(dist=None, fx=500.0, fy=500.0) -> geo.CameraModel:
    return geo.CameraModel(
        width=1920,
        height=1080,
        fx=fx,
        fy=fy,
        cx=960.0,
        cy=540.0,
        dist=np.zeros(8) if dist is None else np.asarray(dist, dtype=float),
    )


def band_limited_texture(rng: np.random.Generator, h: int, w: int, sigma: float = 2.0):
    """Smooth random texture in [0, 1] with a guaranteed non-flat spectrum."""
    img = imaging.gaussian_blur(rng.random((h, w)), sigma)
    lo, hi = img.min(), img.max()
    return (img - lo) / (hi - lo)
