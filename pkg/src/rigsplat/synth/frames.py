"""Procedural video frames for exercising synchronization end to end.

Each camera films the textured base plate through the full distortion
model while the rig translates along +y, so image motion is vertical
and its magnitude follows vehicle speed. Per-stream start offsets shift
which slice of the motion each camera records: frame j of a stream with
offset o shows the scene at time (j - o) / fps, so the sync search
recovers exactly o for that stream against the center one.
"""

import json
from pathlib import Path

import numpy as np

from .. import geometry as geo
from .. import imaging
from ..errors import ConfigInvalid
from ..matching import CAMERA_ORDER
from .scene import RigScenario

# Lattice cell sizes in texels, coarse to fine. The finest cells keep a
# few pixels of period in the rendered image so Laplacian scores and
# phase correlation both have signal to work with.
_NOISE_CELLS = (64, 32, 16, 8)
_NOISE_PERSISTENCE = 0.55


def value_noise(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Multi-octave value noise in [0, 1], fixed octave layout."""
    acc = np.zeros((height, width))
    yy, xx = np.mgrid[0:height, 0:width]
    amp = 1.0
    for cell in _NOISE_CELLS:
        lattice = rng.random((height // cell + 2, width // cell + 2))
        acc += amp * imaging.bilinear_sample(lattice, xx / cell, yy / cell)
        amp *= _NOISE_PERSISTENCE
    lo, hi = acc.min(), acc.max()
    return (acc - lo) / max(hi - lo, 1e-12)


def _ray_map(camera: geo.CameraModel):
    """Per-pixel undistorted ray slopes (H, W, 2) plus a coverage mask.

    Pixels beyond the lens image circle (frame corners on very wide
    lenses) are masked out and render black.
    """
    u, v = np.meshgrid(
        np.arange(camera.width, dtype=float), np.arange(camera.height, dtype=float)
    )
    xyd = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy], axis=-1)
    flat = xyd.reshape(-1, 2)
    limit = geo.distorted_radius_limit(camera.dist)
    inside = np.linalg.norm(flat, axis=1) <= limit
    rays = np.zeros_like(flat)
    ok = np.zeros(len(flat), dtype=bool)
    xy, converged = geo.undistort_masked(flat[inside], camera.dist)
    rays[inside] = xy
    ok[inside] = converged
    h, w = camera.height, camera.width
    return rays.reshape(h, w, 2), ok.reshape(h, w)


def generate_frames(
    scenario: RigScenario,
    n_frames: int,
    seed: int,
    out_dir,
    blur_frames: dict = None,
    blur_sigma: float = 3.0,
    texels_per_meter: float = 256.0,
) -> dict:
    """Render three frame streams plus a truth manifest.

    Args:
        scenario: rig and scene; `scenario.offsets` is the injected
            (left, right) start offset in frames.
        n_frames: frames per stream, at least 2.
        seed: texture seed.
        out_dir: directory receiving L/, C/, R/ subdirs and truth.json.
        blur_frames: optional {camera_id: [frame indices]} to defocus.
        blur_sigma: Gaussian sigma for the defocused frames.
        texels_per_meter: texture resolution on the base plate.

    Returns:
        The truth manifest that was written to out_dir/truth.json.
    """
    if n_frames < 2:
        raise ConfigInvalid(f"need >= 2 frames, got {n_frames}")
    blur_frames = {c: set(v) for c, v in (blur_frames or {}).items()}
    out_dir = Path(out_dir)
    plane = scenario.plane
    x0, x1 = plane.x_range
    y0, y1 = plane.y_range
    tex_w = int(np.ceil((x1 - x0) * texels_per_meter)) + 1
    tex_h = int(np.ceil((y1 - y0) * texels_per_meter)) + 1
    texture = value_noise(np.random.default_rng([seed, 0]), tex_h, tex_w)

    rays, ok = _ray_map(scenario.camera)
    offsets = {"L": int(scenario.offsets[0]), "C": 0, "R": int(scenario.offsets[1])}
    manifest = {
        "fps": scenario.fps,
        "speed": scenario.speed,
        "plane_height": plane.height,
        "offsets": offsets,
        "n_frames": n_frames,
        "seed": seed,
        "frames": {},
        "blurred": {c: sorted(blur_frames.get(c, ())) for c in CAMERA_ORDER},
    }
    for cam_id in CAMERA_ORDER:
        stream_dir = out_dir / cam_id
        stream_dir.mkdir(parents=True, exist_ok=True)
        names = []
        for j in range(n_frames):
            t = (j - offsets[cam_id]) / scenario.fps
            pos = scenario.rig_position(cam_id, t)
            wx = pos[0] + plane.height * rays[..., 0]
            wy = pos[1] + plane.height * rays[..., 1]
            img = imaging.bilinear_sample(
                texture, (wx - x0) * texels_per_meter, (wy - y0) * texels_per_meter
            )
            img[~ok] = 0.0
            if j in blur_frames.get(cam_id, ()):
                img = imaging.gaussian_blur(img, blur_sigma)
            name = f"{j:06d}.pgm"
            imaging.save_image(stream_dir / name, img)
            names.append(f"{cam_id}/{name}")
        manifest["frames"][cam_id] = names
    (out_dir / "truth.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
