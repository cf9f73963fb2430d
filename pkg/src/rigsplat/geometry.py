"""Camera geometry: rational distortion model, rigid poses, projection.

The camera model is a pinhole with an 8-coefficient rational distortion
applied in normalized image coordinates:

    x_d = x * N(r2) / D(r2) + 2 p1 x y + p2 (r2 + 2 x^2)
    y_d = y * N(r2) / D(r2) + p1 (r2 + 2 y^2) + 2 p2 x y

with r2 = x^2 + y^2, N(s) = 1 + k1 s + k2 s^2 + k3 s^3 and
D(s) = 1 + k4 s + k5 s^2 + k6 s^3.  Pixels are related to normalized
coordinates through (u, v) = (fx * x + cx, fy * y + cy), and integer
pixel coordinates address pixel centers, origin at the top left.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, NoConvergence, PointBehindCamera

# The widest lens we model covers a 160 degree field of view, so no ray
# sits more than 80 degrees off axis.
R_MAX = float(np.tan(np.radians(80.0)))

# Depth floor below which a point counts as behind the camera.
MIN_DEPTH = 1e-9

DIST_KEYS = ("k1", "k2", "k3", "k4", "k5", "k6", "p1", "p2")


@dataclass
class CameraModel:
    """Pinhole intrinsics plus rational distortion coefficients.

    `dist` holds (k1, k2, k3, k4, k5, k6, p1, p2) in that order.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    dist: np.ndarray = field(default_factory=lambda: np.zeros(8))

    def __post_init__(self):
        self.dist = np.asarray(self.dist, dtype=float).reshape(8).copy()

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigInvalid("image size must be positive")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ConfigInvalid("focal lengths must be positive")
        if not (0.0 < self.cx < self.width) or not (0.0 < self.cy < self.height):
            raise ConfigInvalid("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def pinhole(self) -> "CameraModel":
        """Copy of this camera with distortion removed."""
        return replace(self, dist=np.zeros(8))

    def normalized_from_pixels(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (uv - [self.cx, self.cy]) / [self.fx, self.fy]

    def pixels_from_normalized(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return xy * [self.fx, self.fy] + [self.cx, self.cy]

    def to_dict(self) -> dict:
        doc = {
            "model": "rational8",
            "width": int(self.width),
            "height": int(self.height),
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
        }
        for key, value in zip(DIST_KEYS, self.dist):
            doc[key] = float(value)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "CameraModel":
        if doc.get("model") != "rational8":
            raise ConfigInvalid(f"unsupported camera model: {doc.get('model')!r}")
        try:
            dist = [doc[key] for key in DIST_KEYS]
            cam = cls(
                width=int(doc["width"]),
                height=int(doc["height"]),
                fx=float(doc["fx"]),
                fy=float(doc["fy"]),
                cx=float(doc["cx"]),
                cy=float(doc["cy"]),
                dist=np.array(dist, dtype=float),
            )
        except KeyError as exc:
            raise ConfigInvalid(f"camera document missing field {exc}") from exc
        cam.validate()
        return cam

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CameraModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _radial_terms(s: np.ndarray, dist: np.ndarray):
    k1, k2, k3, k4, k5, k6 = dist[:6]
    num = 1.0 + s * (k1 + s * (k2 + s * k3))
    den = 1.0 + s * (k4 + s * (k5 + s * k6))
    return num, den


def distort(xy: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Apply the rational model to normalized coordinates, shape (..., 2)."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    s = x * x + y * y
    num, den = _radial_terms(s, dist)
    q = num / den
    p1, p2 = dist[6], dist[7]
    xd = x * q + 2.0 * p1 * x * y + p2 * (s + 2.0 * x * x)
    yd = y * q + p1 * (s + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def distortion_jacobian(xy: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Jacobian of distorted w.r.t. undistorted coordinates, shape (..., 2, 2)."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    s = x * x + y * y
    num, den = _radial_terms(s, dist)
    q = num / den
    k1, k2, k3, k4, k5, k6, p1, p2 = dist
    dnum = k1 + s * (2.0 * k2 + 3.0 * k3 * s)
    dden = k4 + s * (2.0 * k5 + 3.0 * k6 * s)
    dq = (dnum * den - num * dden) / (den * den)
    jxx = q + 2.0 * x * x * dq + 2.0 * p1 * y + 6.0 * p2 * x
    jxy = 2.0 * x * y * dq + 2.0 * p1 * x + 2.0 * p2 * y
    jyy = q + 2.0 * y * y * dq + 6.0 * p1 * y + 2.0 * p2 * x
    out = np.empty(xy.shape[:-1] + (2, 2))
    out[..., 0, 0] = jxx
    out[..., 0, 1] = jxy
    out[..., 1, 0] = jxy
    out[..., 1, 1] = jyy
    return out


def distortion_coefficient_jacobian(xy: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Jacobian of distorted coordinates w.r.t. the 8 coefficients, shape (..., 2, 8)."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    s = x * x + y * y
    num, den = _radial_terms(s, dist)
    out = np.zeros(xy.shape[:-1] + (2, 8))
    # Numerator powers scale x,y by s^m / D; denominator ones by -N s^m / D^2.
    for m in range(3):
        sm = s ** (m + 1)
        out[..., 0, m] = x * sm / den
        out[..., 1, m] = y * sm / den
        out[..., 0, 3 + m] = -x * num * sm / (den * den)
        out[..., 1, 3 + m] = -y * num * sm / (den * den)
    out[..., 0, 6] = 2.0 * x * y
    out[..., 1, 6] = s + 2.0 * y * y
    out[..., 0, 7] = s + 2.0 * x * x
    out[..., 1, 7] = 2.0 * x * y
    return out


def radial_validity_limit(dist: np.ndarray, samples: int = 4096) -> float:
    """Largest radius up to R_MAX on which the radial profile is invertible.

    Scans r -> r * N(r^2) / D(r^2) on a uniform grid and stops at the
    first sample where the profile is no longer strictly increasing or
    the denominator is no longer safely positive.
    """
    dist = np.asarray(dist, dtype=float)
    r = np.linspace(0.0, R_MAX, samples + 1)
    s = r * r
    num, den = _radial_terms(s, dist)
    safe = den > 1e-6
    profile = np.where(safe, r * num / np.where(safe, den, 1.0), np.nan)
    ok = safe[1:] & (np.diff(profile) > 0.0)
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return R_MAX
    return float(r[bad[0]])


def distorted_radius_limit(dist: np.ndarray) -> float:
    """Radius in the distorted plane out to which `undistort` accepts points."""
    limit = radial_validity_limit(dist)
    num, den = _radial_terms(np.array(limit * limit), dist)
    return float(limit * num / den)


def undistort(
    xyd: np.ndarray, dist: np.ndarray, max_iter: int = 50, step_tol: float = 1e-10
) -> np.ndarray:
    """Invert the distortion model with a damped Newton iteration.

    Args:
        xyd: distorted normalized coordinates, shape (n, 2).
        dist: the 8 distortion coefficients.
        max_iter: iteration cap per point.
        step_tol: a point is converged once its Newton step norm
            drops below this.

    Returns:
        Undistorted normalized coordinates, shape (n, 2).

    Raises:
        NoConvergence: if any point lies outside the invertible radius
            of the model or otherwise fails to converge.
    """
    xy, ok = undistort_masked(xyd, dist, max_iter, step_tol)
    if not ok.all():
        bad = ~ok
        res = distort(xy[bad], dist) - np.atleast_2d(xyd)[bad]
        raise NoConvergence(
            f"undistortion failed for {int(bad.sum())} of {len(xy)} points",
            residual=float(np.abs(res).max()),
        )
    return xy


def undistort_masked(
    xyd: np.ndarray, dist: np.ndarray, max_iter: int = 50, step_tol: float = 1e-10
):
    """Like `undistort` but returns (xy, converged mask) instead of raising.

    Positions that fail, typically frame corners beyond the lens image
    circle, hold their best iterate and are flagged False.
    """
    xyd = np.atleast_2d(np.asarray(xyd, dtype=float))
    limit = radial_validity_limit(dist)

    def _clamp(pts):
        # Keep iterates inside the monotone region, where the model
        # Jacobian stays invertible.
        r = np.linalg.norm(pts, axis=1)
        return pts * np.minimum(1.0, limit / np.maximum(r, 1e-12))[:, None]

    # Initialize from the inverse of the radial profile.  The profile
    # r -> r * N / D is strictly increasing on [0, limit], so inverse
    # interpolation lands close to the answer even where the profile
    # flattens near the fold and plain Newton from xyd would stall.
    grid = np.linspace(0.0, limit, 2048)
    num, den = _radial_terms(grid * grid, dist)
    profile = grid * num / np.maximum(den, 1e-12)
    rd = np.linalg.norm(xyd, axis=1)
    r0 = np.interp(rd, profile, grid)
    xy = xyd * (r0 / np.maximum(rd, 1e-12))[:, None]
    # Points outside the image of the invertible region are not
    # pre-screened; they simply never reach the residual tolerance and
    # are reported through NoConvergence.
    failed = np.zeros(len(xy), dtype=bool)
    active = ~failed
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = xy[idx]
        tgt = xyd[idx]
        res = distort(cur, dist) - tgt
        cost = np.einsum("ij,ij->i", res, res)
        settled = cost < 1e-24
        if settled.any():
            active[idx[settled]] = False
            idx, cur, tgt, cost = idx[~settled], cur[~settled], tgt[~settled], cost[~settled]
            res = res[~settled]
            if idx.size == 0:
                continue
        jac = distortion_jacobian(cur, dist)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        singular = np.abs(det) < 1e-14
        safe_det = np.where(singular, 1.0, det)
        step = np.stack(
            [
                -(jac[:, 1, 1] * res[:, 0] - jac[:, 0, 1] * res[:, 1]) / safe_det,
                -(jac[:, 0, 0] * res[:, 1] - jac[:, 1, 0] * res[:, 0]) / safe_det,
            ],
            axis=1,
        )
        step[singular] = 0.0
        # Backtrack where the full step would increase the residual.
        scale = np.ones(len(cur))
        applied = _clamp(cur + step)
        for _ in range(8):
            new_res = distort(applied, dist) - tgt
            new_cost = np.einsum("ij,ij->i", new_res, new_res)
            worse = new_cost > cost
            if not worse.any():
                break
            scale[worse] *= 0.5
            applied = _clamp(cur + scale[:, None] * step)
        new_res = distort(applied, dist) - tgt
        new_cost = np.einsum("ij,ij->i", new_res, new_res)
        xy[idx] = applied
        moved = np.linalg.norm(applied - cur, axis=1)
        done = (moved < step_tol) & (new_cost < 1e-20) & ~singular
        failed[idx[singular]] = True
        active[idx[done | singular]] = False
    return xy, ~(active | failed)


def distort_pixels(uv: np.ndarray, camera: CameraModel) -> np.ndarray:
    """Map ideal pinhole pixels to distorted pixels."""
    xy = camera.normalized_from_pixels(uv)
    return camera.pixels_from_normalized(distort(xy, camera.dist))


def undistort_pixels(uv: np.ndarray, camera: CameraModel) -> np.ndarray:
    """Map distorted pixels back to ideal pinhole pixels."""
    xy = camera.normalized_from_pixels(uv)
    return camera.pixels_from_normalized(undistort(xy, camera.dist))


# -- rigid transforms ---------------------------------------------------------


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    trace = m[0, 0] + m[1, 1] + m[2, 2]
    if trace > 0.0:
        s = np.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def quat_from_axis_angle(w: np.ndarray) -> np.ndarray:
    """Exponential map from a rotation vector to a unit quaternion."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        # Second order series keeps the map smooth through zero.
        half = 0.5 - theta * theta / 48.0
        return quat_normalize(np.array([1.0 - theta * theta / 8.0, *(half * w)]))
    axis = w / theta
    return np.array([np.cos(theta / 2.0), *(np.sin(theta / 2.0) * axis)])


def rotation_from_axis_angle(w: np.ndarray) -> np.ndarray:
    """Exponential map from a rotation vector to a 3x3 matrix."""
    return quat_to_matrix(quat_from_axis_angle(w))


def axis_angle_from_quat(q: np.ndarray) -> np.ndarray:
    """Logarithm map from a unit quaternion to a rotation vector."""
    q = quat_normalize(q)
    if q[0] < 0.0:
        q = -q
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < 1e-12:
        return 2.0 * q[1:]
    theta = 2.0 * np.arctan2(vec_norm, q[0])
    return theta * q[1:] / vec_norm


@dataclass
class Pose:
    """Rigid world-to-camera transform, p_cam = R p_world + t."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.q = quat_normalize(np.asarray(self.q, dtype=float).reshape(4))
        self.t = np.asarray(self.t, dtype=float).reshape(3).copy()

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_rt(cls, rotation: np.ndarray, translation: np.ndarray) -> "Pose":
        return cls(matrix_to_quat(rotation), translation)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.t

    def compose(self, other: "Pose") -> "Pose":
        """Transform equal to applying `other` first, then this one."""
        return Pose(quat_multiply(self.q, other.q), self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(quat_conjugate(self.q), -(self.R.T @ self.t))

    def relative_to(self, other: "Pose") -> "Pose":
        """Transform taking `other`'s camera frame into this one."""
        return self.compose(other.inverse())

    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -(self.R.T @ self.t)


def project(points: np.ndarray, pose: Pose, camera: CameraModel) -> np.ndarray:
    """Project world points to distorted pixel coordinates.

    Raises:
        PointBehindCamera: if any point has depth below MIN_DEPTH.
    """
    pc = pose.apply(points)
    z = pc[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise PointBehindCamera(f"{int(np.sum(z <= MIN_DEPTH))} points at or behind the camera")
    xy = pc[..., :2] / z[..., None]
    return camera.pixels_from_normalized(distort(xy, camera.dist))


def undistort_map(camera: CameraModel, new_camera: CameraModel = None) -> np.ndarray:
    """Source pixel coordinates for resampling a distorted image, (H, W, 2).

    Entry (v, u) holds the position in the distorted image whose ray the
    ideal pinhole pixel (u, v) of `new_camera` sees.  `new_camera`
    defaults to the calibrated intrinsics themselves.
    """
    if new_camera is None:
        new_camera = camera
    u, v = np.meshgrid(
        np.arange(new_camera.width, dtype=float),
        np.arange(new_camera.height, dtype=float),
    )
    xy = np.stack(
        [(u - new_camera.cx) / new_camera.fx, (v - new_camera.cy) / new_camera.fy],
        axis=-1,
    )
    flat = distort(xy.reshape(-1, 2), camera.dist)
    src = camera.pixels_from_normalized(flat)
    return src.reshape(new_camera.height, new_camera.width, 2)


def undistort_image(
    image: np.ndarray, camera: CameraModel, new_camera: CameraModel = None
) -> np.ndarray:
    """Resample a distorted image onto an ideal pinhole pixel grid.

    Pixels whose source position falls outside the input frame are black.
    """
    from .imaging import bilinear_sample

    src = undistort_map(camera, new_camera)
    return bilinear_sample(image, src[..., 0], src[..., 1])
