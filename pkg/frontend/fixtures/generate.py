"""Regenerate the viewer test fixtures from the reconstruction package.

Everything here is deterministic; the outputs are committed so the
frontend tests run without Python. The golden image is rendered from
the cloud AFTER a PLY round trip, so the reference pixels correspond
to the float32-quantized values the viewer actually parses.

Run from this directory: python3 generate.py
"""

import json
from pathlib import Path

import numpy as np

from rigsplat import geometry as geo
from rigsplat.splat.cloud import GaussianCloud, export_ply, load_ply
from rigsplat.splat.rasterize import render

HERE = Path(__file__).resolve().parent


def make_cloud(rng, n, extent=0.25, depth=(0.9, 1.1), scale=(0.02, 0.08)):
    quats = rng.normal(0.0, 1.0, (n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianCloud(
        mu=np.column_stack([
            rng.uniform(-extent, extent, n),
            rng.uniform(-extent, extent, n),
            rng.uniform(*depth, n),
        ]),
        scales=rng.uniform(*scale, (n, 3)),
        quats=quats,
        colors=rng.uniform(0.05, 0.95, (n, 3)),
        alphas=rng.uniform(0.2, 0.9, n),
    )


# -- golden 5-Gaussian consistency fixture ---------------------------------

rng = np.random.default_rng(42)
golden = make_cloud(rng, 5, extent=0.2, depth=(0.85, 1.2), scale=(0.04, 0.12))
export_ply(golden, HERE / "golden_cloud.ply")
golden = load_ply(HERE / "golden_cloud.ply")

cam = geo.CameraModel(
    width=64, height=64, fx=80.0, fy=80.0, cx=32.0, cy=32.0, dist=np.zeros(8)
)
pose = geo.Pose(
    geo.quat_from_axis_angle(np.array([0.06, -0.1, 0.04])),
    np.array([0.02, -0.03, 0.05]),
)
out = render(golden, pose, cam)
(HERE / "golden_image.bin").write_bytes(out.color.astype("<f4").tobytes())
(HERE / "golden_view.json").write_text(json.dumps({
    "pose": {"q_wxyz": pose.q.tolist(), "t": pose.t.tolist()},
    "camera": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
               "width": cam.width, "height": cam.height},
    "background": [0.0, 0.0, 0.0],
}, indent=2) + "\n")

# -- slice-plane cull parity ------------------------------------------------

rng = np.random.default_rng(7)
cloud = make_cloud(rng, 400, extent=0.3, depth=(0.6, 1.4))
export_ply(cloud, HERE / "slice_cloud.ply")
cloud = load_ply(HERE / "slice_cloud.ply")

# A splat is discarded when dot(normal, position) + offset < 0.
planes = [
    {"normal": [0.0, 0.0, 1.0], "offset": -1.0},
    {"normal": [1.0, 0.0, 0.0], "offset": 0.0},
    {"normal": [0.0, 1.0, 0.0], "offset": 0.05},
    {"normal": [0.6, 0.0, 0.8], "offset": -0.7},
    {"normal": [-1.0, 0.0, 0.0], "offset": 0.0},
]
for p in planes:
    n = np.asarray(p["normal"])
    n = n / np.linalg.norm(n)
    d = cloud.mu @ n + p["offset"]
    p["culled"] = int((d < 0).sum())
    p["kept"] = int((d >= 0).sum())
(HERE / "slice_planes.json").write_text(json.dumps(planes, indent=2) + "\n")

# -- parse/sort performance file --------------------------------------------

rng = np.random.default_rng(11)
big = make_cloud(rng, 100_000, extent=1.5, depth=(0.5, 3.5))
export_ply(big, HERE / "splats_100k.ply")

print("fixtures written to", HERE)
