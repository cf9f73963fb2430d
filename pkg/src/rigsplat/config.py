"""Run configuration: defaults, TOML file loading, CLI overrides.

One RunConfig drives every pipeline stage. Values come from three
layers, each overriding the previous: built-in defaults, a TOML config
file, and command-line flags. Paths are kept as given (relative paths
resolve against the working directory).
"""

from dataclasses import dataclass, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigInvalid

# TOML layout: section -> field names. Flat dataclass internally,
# sections only in the file.
SECTIONS = {
    "paths": ("frames_dir", "calibration_path", "output_dir"),
    "synth": (
        "width",
        "height",
        "speed",
        "travel",
        "height_min",
        "height_max",
        "offset_left",
        "offset_right",
        "n_frames",
        "noise_sigma",
        "outlier_rate",
        "blur_fraction",
        "blur_sigma",
        "board_views",
        "board_noise",
        "n_points",
        "cloud_points",
    ),
    "sync": ("fps", "sync_bound"),
    "select": ("k", "window"),
    "verify": ("tau_px", "ransac_confidence", "ransac_max_iters"),
    "sfm": (
        "baseline_lc",
        "baseline_cr",
        "prior_weight_t",
        "prior_weight_r",
    ),
    "splat": ("splat_iters", "eval_every", "splat_lambda"),
    "ablation": (
        "disable_calibration",
        "disable_sync",
        "disable_custom_matching",
        "disable_pose_priors",
    ),
    "run": ("seed", "threads"),
}


@dataclass
class RunConfig:
    """Everything a full pipeline run needs, with pipeline defaults."""

    # paths
    frames_dir: str = "out/frames"
    calibration_path: str = "out/camera.json"
    output_dir: str = "out"
    # synthetic capture session
    width: int = 1920
    height: int = 1080
    speed: float = 1.0
    travel: float = 2.0
    height_min: float = 0.12
    height_max: float = 0.30
    offset_left: int = 10
    offset_right: int = -5
    n_frames: int = 400
    noise_sigma: float = 0.3
    outlier_rate: float = 0.05
    blur_fraction: float = 0.3
    blur_sigma: float = 3.0
    board_views: int = 40
    board_noise: float = 0.25
    n_points: int = 3000
    cloud_points: int = 4000
    # synchronization
    fps: float = 120.0
    sync_bound: int = 60
    # triplet selection and pair scheduling
    k: int = 250
    window: int = 5
    # geometric verification
    tau_px: float = 2.0
    ransac_confidence: float = 0.9999
    ransac_max_iters: int = 10000
    # reconstruction and rig prior
    baseline_lc: float = 0.31
    baseline_cr: float = 0.31
    prior_weight_t: float = 1e4
    prior_weight_r: float = 1e2
    # splat training
    splat_iters: int = 2000
    eval_every: int = 10
    splat_lambda: float = 0.2
    # ablation switches
    disable_calibration: bool = False
    disable_sync: bool = False
    disable_custom_matching: bool = False
    disable_pose_priors: bool = False
    # run control
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigInvalid(f"k must be at least 2, got {self.k}")
        if self.window < 0:
            raise ConfigInvalid(f"window must be nonnegative, got {self.window}")
        if self.n_frames < 2:
            raise ConfigInvalid("n_frames must be at least 2")
        if self.sync_bound < 1:
            raise ConfigInvalid("sync_bound must be at least 1")
        if self.tau_px <= 0:
            raise ConfigInvalid("tau_px must be positive")
        if not 0.0 < self.ransac_confidence < 1.0:
            raise ConfigInvalid("ransac_confidence must lie in (0, 1)")
        if self.splat_iters < 1 or self.eval_every < 1:
            raise ConfigInvalid("splat_iters and eval_every must be positive")
        if not 0.0 <= self.splat_lambda <= 1.0:
            raise ConfigInvalid("splat_lambda must lie in [0, 1]")
        if not 0.0 <= self.blur_fraction < 1.0:
            raise ConfigInvalid("blur_fraction must lie in [0, 1)")
        if self.blur_sigma < 0:
            raise ConfigInvalid("blur_sigma must be nonnegative")
        if self.threads < 0:
            raise ConfigInvalid("threads must be nonnegative (0 = auto)")
        if self.prior_weight_t < 0 or self.prior_weight_r < 0:
            raise ConfigInvalid("prior weights must be nonnegative")
        if self.fps <= 0:
            raise ConfigInvalid("fps must be positive")

    def to_dict(self) -> dict:
        """Sections mirroring the file layout, for the report echo."""
        return {
            section: {name: getattr(self, name) for name in names}
            for section, names in SECTIONS.items()
        }


def _field_types():
    return {
        f.name: f.type if isinstance(f.type, str) else f.type.__name__
        for f in fields(RunConfig)
    }


def _coerce(name: str, value, target: str):
    """Check a raw TOML/CLI value against the field's declared type."""
    if target == "bool":
        if not isinstance(value, bool):
            raise ConfigInvalid(f"{name} must be a boolean, got {value!r}")
        return value
    if target == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(f"{name} must be an integer, got {value!r}")
        return value
    if target == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(f"{name} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigInvalid(f"{name} must be a string, got {value!r}")
    return value


def load_config(path=None, overrides: dict = None) -> RunConfig:
    """Build a validated RunConfig from defaults, a file, and overrides.

    Args:
        path: optional TOML file; unknown sections or keys are errors.
        overrides: optional {field name: value}, applied last (CLI
            flags). Values of None are ignored.

    Raises:
        ConfigInvalid: unreadable or malformed file, unknown keys, type
            mismatches, or invariant violations.
    """
    cfg = RunConfig()
    types = _field_types()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid(f"malformed config {path}: {exc}") from exc
        for section, body in doc.items():
            if section not in SECTIONS:
                raise ConfigInvalid(f"unknown config section [{section}]")
            if not isinstance(body, dict):
                raise ConfigInvalid(f"[{section}] must be a table")
            for key, value in body.items():
                if key not in SECTIONS[section]:
                    raise ConfigInvalid(f"unknown config key {section}.{key}")
                setattr(cfg, key, _coerce(key, value, types[key]))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in types:
            raise ConfigInvalid(f"unknown config override {key!r}")
        setattr(cfg, key, _coerce(key, value, types[key]))
    cfg.validate()
    return cfg
