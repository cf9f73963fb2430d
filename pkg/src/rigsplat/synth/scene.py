"""Scenario description for the synthetic undercarriage generators.

World frame: x across the track, y along the direction of travel, z up
from the rig toward the undercarriage. The rig translates along +y with
all three cameras looking up (+z) with identity rotation, so camera
frames coincide with world axes and vehicle motion appears as vertical
image motion. The speed field is a nominal mean; the actual profile
carries a small deterministic wobble, since a dead-constant speed would
make the per-frame shift signal flat and stream offsets unrecoverable.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import geometry as geo
from ..errors import ConfigInvalid

BASELINE_LC = np.array([-0.31, 0.0, 0.0])
BASELINE_CR = np.array([0.31, 0.0, 0.0])

# Speed wobble terms (relative amplitude, period as a fraction of the
# pass duration, phase). The long term gives the shift signal a broad
# trend so the L1 offset landscape has a single basin; the short term
# stays above half the 60-frame search bound, which keeps its aliases
# outside the searched range.
SPEED_WOBBLE = ((0.35, 1.0, 0.6), (0.15, 0.35, 1.9))

# Full-scale sensor: 1920x1080 with the focal length set so the 160
# degree field of view spans the image width exactly.
DEFAULT_WIDTH = 1920
DEFAULT_HEIGHT = 1080
DEFAULT_DIST = np.array([-0.02, 1.5e-3, -2e-5, -0.01, 8e-4, -1e-5, 5e-4, -3e-4])


def default_camera(width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT):
    f = (width / 2.0) / geo.R_MAX
    return geo.CameraModel(
        width=width,
        height=height,
        fx=f,
        fy=f,
        cx=width / 2.0,
        cy=height / 2.0,
        dist=DEFAULT_DIST.copy(),
    )


@dataclass
class Plane:
    """Base plate at constant height, spanning the track area."""

    height: float
    x_range: tuple = (-1.6, 1.6)
    y_range: tuple = (-1.2, 3.2)
    albedo: float = 0.55

    @property
    def area(self) -> float:
        return (self.x_range[1] - self.x_range[0]) * (self.y_range[1] - self.y_range[0])

    def z_extent(self) -> tuple:
        return (self.height, self.height)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x = rng.uniform(*self.x_range, n)
        y = rng.uniform(*self.y_range, n)
        return np.column_stack([x, y, np.full(n, self.height)])


@dataclass
class Box:
    """Axis-aligned block hanging below the base plate; only the
    camera-facing bottom face is sampled."""

    center: np.ndarray
    size: np.ndarray
    albedo: float = 0.4

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.size = np.asarray(self.size, dtype=float)
        if np.any(self.size <= 0):
            raise ConfigInvalid("box size must be positive")

    @property
    def area(self) -> float:
        return float(self.size[0] * self.size[1])

    def z_extent(self) -> tuple:
        z = self.center[2] - self.size[2] / 2.0
        return (z, z)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo = self.center - self.size / 2.0
        hi = self.center + self.size / 2.0
        x = rng.uniform(lo[0], hi[0], n)
        y = rng.uniform(lo[1], hi[1], n)
        return np.column_stack([x, y, np.full(n, lo[2])])


@dataclass
class Cylinder:
    """Pipe along x or y; the lower half of the lateral surface is sampled."""

    center: np.ndarray
    axis: str
    radius: float
    length: float
    albedo: float = 0.35

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.axis not in ("x", "y"):
            raise ConfigInvalid(f"cylinder axis must be x or y, got {self.axis!r}")
        if self.radius <= 0 or self.length <= 0:
            raise ConfigInvalid("cylinder radius and length must be positive")

    @property
    def area(self) -> float:
        return float(np.pi * self.radius * self.length)

    def z_extent(self) -> tuple:
        return (self.center[2] - self.radius, self.center[2])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        along = rng.uniform(-self.length / 2.0, self.length / 2.0, n)
        theta = rng.uniform(np.pi, 2.0 * np.pi, n)
        across = self.center[1 if self.axis == "x" else 0] + self.radius * np.cos(theta)
        z = self.center[2] + self.radius * np.sin(theta)
        if self.axis == "x":
            return np.column_stack([self.center[0] + along, across, z])
        return np.column_stack([across, self.center[1] + along, z])


def default_primitives(
    height_range: tuple,
    travel: float = 2.0,
    margin_x: float = 1.6,
    margin_y: float = 1.2,
) -> list:
    """Base plate at the far height plus hanging blocks and pipes."""
    lo, hi = height_range
    span = hi - lo

    def h(frac):
        return lo + frac * span

    return [
        Plane(
            height=hi,
            x_range=(-margin_x, margin_x),
            y_range=(-margin_y, travel + margin_y),
        ),
        Box(center=[-0.5, 0.3 * travel, h(0.45)], size=[0.5, 0.4, 0.3 * span], albedo=0.45),
        Box(center=[0.4, 0.6 * travel, h(0.55)], size=[0.6, 0.5, 0.25 * span], albedo=0.35),
        Box(center=[0.0, 0.95 * travel, h(0.4)], size=[0.8, 0.3, 0.3 * span], albedo=0.5),
        Cylinder(center=[0.0, 0.1 * travel, h(0.3)], axis="x", radius=0.2 * span, length=1.4),
        Cylinder(center=[-0.3, 0.8 * travel, h(0.25)], axis="y", radius=0.15 * span, length=0.8),
    ]


@dataclass
class RigScenario:
    """Everything the generators need to synthesize one capture session."""

    camera: geo.CameraModel = field(default_factory=default_camera)
    baseline_lc: np.ndarray = field(default_factory=lambda: BASELINE_LC.copy())
    baseline_cr: np.ndarray = field(default_factory=lambda: BASELINE_CR.copy())
    speed: float = 1.0
    fps: float = 120.0
    height_range: tuple = (0.12, 0.30)
    travel: float = 2.0
    primitives: list = None
    offsets: tuple = (0, 0)
    noise_sigma: float = 0.0
    outlier_rate: float = 0.0

    def __post_init__(self):
        self.baseline_lc = np.asarray(self.baseline_lc, dtype=float)
        self.baseline_cr = np.asarray(self.baseline_cr, dtype=float)
        if self.fps <= 0:
            raise ConfigInvalid(f"fps must be positive, got {self.fps}")
        lo, hi = self.height_range
        if not (0.05 <= lo < hi <= 1.0):
            raise ConfigInvalid(
                f"height range {self.height_range} outside [0.05, 1.0] m"
            )
        if max(abs(self.offsets[0]), abs(self.offsets[1])) > 60:
            raise ConfigInvalid(f"sync offsets {self.offsets} exceed 60 frames")
        if self.speed < 0:
            raise ConfigInvalid("speed must be nonnegative")
        if self.travel <= 0:
            raise ConfigInvalid("travel must be positive")
        if self.noise_sigma < 0:
            raise ConfigInvalid("noise sigma must be nonnegative")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ConfigInvalid("outlier rate must lie in [0, 1)")
        if self.primitives is None:
            # Size the plane so every rendered ray lands on it: view
            # half-width at the plane height, plus rig excursion from
            # the injected offsets and the speed wobble.
            view = hi * geo.R_MAX
            lateral = max(abs(self.baseline_lc[0]), abs(self.baseline_cr[0]))
            along = max(abs(self.baseline_lc[1]), abs(self.baseline_cr[1]))
            motion = self.speed * max(abs(o) for o in self.offsets) / self.fps
            wobble = self.travel * sum(a * f for a, f, _ in SPEED_WOBBLE) / np.pi
            self.primitives = default_primitives(
                self.height_range,
                self.travel,
                margin_x=lateral + view + 0.1,
                margin_y=along + motion + wobble + view + 0.1,
            )
        for prim in self.primitives:
            z0, z1 = prim.z_extent()
            if z0 < lo - 1e-9 or z1 > hi + 1e-9:
                raise ConfigInvalid(
                    f"primitive z extent ({z0:.3f}, {z1:.3f}) outside height "
                    f"range {self.height_range}"
                )

    @property
    def plane(self) -> Plane:
        for prim in self.primitives:
            if isinstance(prim, Plane):
                return prim
        raise ConfigInvalid("scenario has no base plane")

    def travel_distance(self, t: float) -> float:
        """Distance along +y at time t under the wobbled speed profile.

        Integral of speed * (1 + sum_k a_k sin(2 pi t / p_k + c_k)),
        anchored so the rig starts at y = 0. Wobble periods scale with
        the pass duration travel / speed.
        """
        if self.speed == 0.0:
            return 0.0
        duration = self.travel / self.speed
        y = self.speed * t
        for amp, frac, phase in SPEED_WOBBLE:
            period = frac * duration
            scale = self.speed * amp * period / (2.0 * np.pi)
            y += scale * (np.cos(phase) - np.cos(2.0 * np.pi * t / period + phase))
        return y

    def rig_position(self, cam_id: str, t: float) -> np.ndarray:
        """World position of one camera with the rig at travel time t."""
        center = np.array([0.0, self.travel_distance(t), 0.0])
        if cam_id == "C":
            return center
        if cam_id == "L":
            return center + self.baseline_lc
        if cam_id == "R":
            return center + self.baseline_cr
        raise ConfigInvalid(f"unknown camera id {cam_id!r}")

    def camera_pose(self, cam_id: str, t: float) -> geo.Pose:
        """World-to-camera pose; rotation is identity by construction."""
        pos = self.rig_position(cam_id, t)
        return geo.Pose(np.array([1.0, 0.0, 0.0, 0.0]), -pos)

    def rectified_camera(self) -> geo.CameraModel:
        """Same pinhole intrinsics with the distortion removed."""
        c = self.camera
        return geo.CameraModel(
            width=c.width,
            height=c.height,
            fx=c.fx,
            fy=c.fy,
            cx=c.cx,
            cy=c.cy,
            dist=np.zeros(8),
        )
