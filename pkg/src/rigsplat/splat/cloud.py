"""Gaussian cloud container: seeding from a sparse model, PLY interchange.

Gaussians are stored as parallel arrays (positions, per-axis scales,
rotation quaternions, colors, opacities) so rendering and gradient
passes can stay vectorized. Covariance factorizes as R S S^T R^T.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .. import geometry as geo
from ..errors import ConfigInvalid, EmptyModel, IoFailure

# Degree-0 spherical harmonics basis value; colors are stored in PLY
# files as DC coefficients: color = 0.5 + SH_C0 * f_dc.
SH_C0 = 0.28209479177387814

OPACITY_INIT = 0.1
SIGMA_FALLBACK = 0.01  # meters, used when a point has no neighbors

PLY_FIELDS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
)


def quat_matrices(quats: np.ndarray) -> np.ndarray:
    """Rotation matrices for an (n, 4) stack of wxyz quaternions."""
    q = quats / np.linalg.norm(quats, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass
class GaussianCloud:
    """Splat set plus the cameras it was trained from."""

    mu: np.ndarray          # (n, 3) meters
    scales: np.ndarray      # (n, 3) per-axis, > 0
    quats: np.ndarray       # (n, 4) wxyz, unit norm
    colors: np.ndarray      # (n, 3) in [0, 1]
    alphas: np.ndarray      # (n,) in (0, 1)
    cameras: list = field(default_factory=list)
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __len__(self) -> int:
        return len(self.mu)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.mu.copy(), self.scales.copy(), self.quats.copy(),
            self.colors.copy(), self.alphas.copy(),
            list(self.cameras), self.background.copy(),
        )

    def check(self) -> None:
        for name in ("mu", "scales", "quats", "colors", "alphas"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ConfigInvalid(f"non-finite values in {name}")
        if len(self) == 0:
            return
        if self.scales.min() <= 0:
            raise ConfigInvalid("scales must be positive")
        if self.alphas.min() <= 0 or self.alphas.max() >= 1:
            raise ConfigInvalid("opacities must lie in (0, 1)")
        if self.colors.min() < 0 or self.colors.max() > 1:
            raise ConfigInvalid("colors must lie in [0, 1]")
        norms = np.linalg.norm(self.quats, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise ConfigInvalid("quaternions must be unit norm")


def seed_gaussians(model) -> GaussianCloud:
    """Isotropic Gaussians at the sparse points, sized by local density.

    Scale is the mean distance to the 3 nearest neighboring points
    (fewer when the cloud is that small, SIGMA_FALLBACK for a single
    point); color comes from the point record; opacity starts at 0.1.
    """
    if not model.points:
        raise EmptyModel("cannot seed from a model with no points")
    xyz = np.stack([pt.xyz for pt in model.points])
    colors = np.stack([pt.color for pt in model.points])
    n = len(xyz)

    if n == 1:
        sigma = np.array([SIGMA_FALLBACK])
    else:
        k = min(3, n - 1)
        dists, _ = cKDTree(xyz).query(xyz, k=k + 1)
        sigma = dists[:, 1:].mean(axis=1)
        sigma[~np.isfinite(sigma) | (sigma <= 0)] = SIGMA_FALLBACK

    cameras = [
        (key, model.images[key].pose) for key in model.registered_keys()
    ]
    cloud = GaussianCloud(
        mu=xyz.astype(float),
        scales=np.repeat(sigma[:, None], 3, axis=1),
        quats=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        colors=np.clip(colors.astype(float), 0.0, 1.0),
        alphas=np.full(n, OPACITY_INIT),
        cameras=cameras,
    )
    cloud.check()
    return cloud


def colorize_points(model, images: dict) -> int:
    """Set each point's color to the mean of its observing pixels.

    `images` maps image keys to float arrays in [0, 1], either (H, W)
    gray or (H, W, 3). Observations in images that are not provided
    are skipped; points with no sampled observation keep their color.
    Returns the number of points updated.
    """
    updated = 0
    for pt in model.points:
        samples = []
        for key, _, uv in pt.observations:
            img = images.get(key)
            if img is None:
                continue
            h, w = img.shape[:2]
            col = int(np.clip(round(uv[0]), 0, w - 1))
            row = int(np.clip(round(uv[1]), 0, h - 1))
            px = img[row, col]
            samples.append(np.repeat(px, 3) if np.ndim(px) == 0 else px)
        if samples:
            pt.color = np.mean(samples, axis=0)
            updated += 1
    return updated


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def export_ply(cloud: GaussianCloud, path) -> None:
    """Binary little-endian PLY, one vertex per Gaussian.

    Scales are stored as logs, opacity as a logit, and colors as
    degree-0 SH coefficients, so every stored field is unbounded.
    """
    if len(cloud) == 0:
        raise EmptyModel("no Gaussians to export")
    header = "ply\nformat binary_little_endian 1.0\n"
    header += f"element vertex {len(cloud)}\n"
    header += "".join(f"property float {name}\n" for name in PLY_FIELDS)
    header += "end_header\n"

    rows = np.hstack([
        cloud.mu,
        np.log(cloud.scales),
        cloud.quats / np.linalg.norm(cloud.quats, axis=1, keepdims=True),
        (cloud.colors - 0.5) / SH_C0,
        _logit(cloud.alphas)[:, None],
    ]).astype("<f4")
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(rows.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_ply(path) -> GaussianCloud:
    """Read a cloud written by `export_ply`."""
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    marker = b"end_header\n"
    pos = raw.find(marker)
    if not raw.startswith(b"ply\n") or pos < 0:
        raise IoFailure(f"{path} is not a PLY file")
    lines = raw[:pos].decode("ascii", "replace").splitlines()
    count = None
    props = []
    for line in lines:
        if line.startswith("element vertex"):
            count = int(line.split()[-1])
        elif line.startswith("property"):
            props.append(line.split()[-1])
        elif line.startswith("format") and "binary_little_endian" not in line:
            raise IoFailure(f"{path}: unsupported format {line!r}")
    if count is None or tuple(props) != PLY_FIELDS:
        raise IoFailure(f"{path}: unexpected vertex layout {props}")
    body = raw[pos + len(marker):]
    expected = count * len(PLY_FIELDS) * 4
    if len(body) != expected:
        raise IoFailure(f"{path}: body is {len(body)} bytes, expected {expected}")
    rows = np.frombuffer(body, dtype="<f4").reshape(count, len(PLY_FIELDS))
    rows = rows.astype(float)
    quats = rows[:, 6:10]
    quats = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianCloud(
        mu=rows[:, 0:3],
        scales=np.exp(rows[:, 3:6]),
        quats=quats,
        colors=np.clip(0.5 + SH_C0 * rows[:, 10:13], 0.0, 1.0),
        alphas=1.0 / (1.0 + np.exp(-rows[:, 13])),
    )
