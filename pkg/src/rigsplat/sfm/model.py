"""Sparse reconstruction container and its on-disk form.

A model holds per-image poses keyed by (camera_id, triplet_index),
3D points with their observations, and the camera models used to
take the (rectified) images. Serialization splits into three JSON
documents plus an optional point-cloud PLY for inspection.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import geometry as geo
from ..errors import ConfigInvalid, EmptyModel, IoFailure, UnknownImage
from ..matching import image_name, parse_image_name

GRAY = np.array([0.5, 0.5, 0.5])


@dataclass
class ImageRecord:
    key: tuple
    camera_id: str
    pose: geo.Pose = None
    registered: bool = False

    @property
    def name(self) -> str:
        return image_name(self.key)


@dataclass
class PointRecord:
    xyz: np.ndarray
    track_id: int
    color: np.ndarray = field(default_factory=lambda: GRAY.copy())
    observations: list = field(default_factory=list)  # (key, kp_idx, uv)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=float).reshape(3)
        self.color = np.asarray(self.color, dtype=float).reshape(3)


@dataclass
class ModelStats:
    registered_images: int
    num_points: int
    mean_track_length: float
    mean_reprojection_error_px: float

    def to_dict(self) -> dict:
        return {
            "registered_images": self.registered_images,
            "num_points": self.num_points,
            "mean_track_length": self.mean_track_length,
            "mean_reprojection_error_px": self.mean_reprojection_error_px,
        }


class SparseModel:
    """Poses, points, and observations of one reconstruction."""

    def __init__(self, cameras: dict):
        if not cameras:
            raise ConfigInvalid("model needs at least one camera")
        self.cameras = dict(cameras)
        self.images: dict = {}
        self.points: list = []

    def add_image(self, key: tuple) -> ImageRecord:
        cam_id = key[0]
        if cam_id not in self.cameras:
            raise UnknownImage(f"image {key} references unknown camera {cam_id!r}")
        rec = ImageRecord(key=key, camera_id=cam_id)
        self.images[key] = rec
        return rec

    def register_image(self, key: tuple, pose: geo.Pose) -> None:
        rec = self.images.get(key)
        if rec is None:
            raise UnknownImage(f"image {key} not in model")
        rec.pose = pose
        rec.registered = True

    def camera_for(self, key: tuple) -> geo.CameraModel:
        return self.cameras[self.images[key].camera_id]

    def registered_keys(self) -> list:
        return [k for k, rec in self.images.items() if rec.registered]

    def add_point(self, xyz, track_id: int, observations) -> PointRecord:
        pt = PointRecord(xyz=xyz, track_id=track_id)
        for key, kp_idx, uv in observations:
            pt.observations.append((key, int(kp_idx), np.asarray(uv, dtype=float)))
        self.points.append(pt)
        return pt

    def check(self) -> None:
        for pt in self.points:
            reg = [obs for obs in pt.observations if self.images[obs[0]].registered]
            if len(reg) < 2:
                raise ConfigInvalid(
                    f"point on track {pt.track_id} has {len(reg)} registered "
                    "observations, needs 2"
                )

    def reprojection_errors(self) -> np.ndarray:
        """Per-observation pixel error norms over registered images.

        Grouped per image so projection runs batched; the output order
        follows image-key grouping, not point order.
        """
        xyz_by_key = {}
        uv_by_key = {}
        for pt in self.points:
            for key, _, uv in pt.observations:
                if not self.images[key].registered:
                    continue
                xyz_by_key.setdefault(key, []).append(pt.xyz)
                uv_by_key.setdefault(key, []).append(uv)
        errs = []
        for key in sorted(xyz_by_key):
            rec = self.images[key]
            proj = geo.project(
                np.asarray(xyz_by_key[key]), rec.pose, self.cameras[rec.camera_id]
            )
            errs.append(np.linalg.norm(proj - np.asarray(uv_by_key[key]), axis=1))
        if not errs:
            return np.zeros(0)
        return np.concatenate(errs)

    def stats(self) -> ModelStats:
        errs = self.reprojection_errors()
        lengths = [
            sum(1 for obs in pt.observations if self.images[obs[0]].registered)
            for pt in self.points
        ]
        return ModelStats(
            registered_images=sum(1 for r in self.images.values() if r.registered),
            num_points=len(self.points),
            mean_track_length=float(np.mean(lengths)) if lengths else 0.0,
            mean_reprojection_error_px=float(errs.mean()) if errs.size else 0.0,
        )

    # -- serialization ---------------------------------------------------

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cameras = {cid: cam.to_dict() for cid, cam in self.cameras.items()}
        (out / "cameras.json").write_text(
            json.dumps(cameras, indent=2, sort_keys=True) + "\n"
        )

        images = []
        for key in sorted(self.images):
            rec = self.images[key]
            doc = {
                "name": rec.name,
                "camera_id": rec.camera_id,
                "registered": rec.registered,
            }
            if rec.registered:
                doc["quaternion"] = [float(v) for v in rec.pose.q]
                doc["translation"] = [float(v) for v in rec.pose.t]
            images.append(doc)
        (out / "images.json").write_text(json.dumps(images, indent=2) + "\n")

        points = []
        for pt in self.points:
            points.append(
                {
                    "xyz": [float(v) for v in pt.xyz],
                    "rgb": [float(v) for v in pt.color],
                    "track": pt.track_id,
                    "observations": [
                        {
                            "image": image_name(key),
                            "keypoint": kp_idx,
                            "pixel": [float(uv[0]), float(uv[1])],
                        }
                        for key, kp_idx, uv in pt.observations
                    ],
                }
            )
        stats = self.stats().to_dict()
        (out / "points.json").write_text(
            json.dumps({"stats": stats, "points": points}, indent=2) + "\n"
        )

    @classmethod
    def load(cls, in_dir) -> "SparseModel":
        src = Path(in_dir)
        try:
            cameras_doc = json.loads((src / "cameras.json").read_text())
            images_doc = json.loads((src / "images.json").read_text())
            points_doc = json.loads((src / "points.json").read_text())
        except FileNotFoundError as exc:
            raise IoFailure(f"model directory {src} incomplete: {exc}") from exc
        model = cls({cid: geo.CameraModel.from_dict(d) for cid, d in cameras_doc.items()})
        for doc in images_doc:
            key = parse_image_name(doc["name"])
            model.add_image(key)
            if doc["registered"]:
                pose = geo.Pose(
                    np.asarray(doc["quaternion"], dtype=float),
                    np.asarray(doc["translation"], dtype=float),
                )
                model.register_image(key, pose)
        for doc in points_doc["points"]:
            obs = [
                (parse_image_name(o["image"]), o["keypoint"], o["pixel"])
                for o in doc["observations"]
            ]
            pt = model.add_point(doc["xyz"], doc["track"], obs)
            pt.color = np.asarray(doc["rgb"], dtype=float)
        return model

    def export_ply(self, path) -> None:
        """Binary little-endian point cloud with uchar colors."""
        if not self.points:
            raise EmptyModel("no points to export")
        header = (
            "ply\n"
            "format binary_little_endian 1.0\n"
            f"element vertex {len(self.points)}\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "end_header\n"
        )
        try:
            with open(path, "wb") as fh:
                fh.write(header.encode("ascii"))
                for pt in self.points:
                    rgb = np.clip(np.round(pt.color * 255.0), 0, 255).astype(int)
                    fh.write(
                        struct.pack(
                            "<fffBBB",
                            pt.xyz[0],
                            pt.xyz[1],
                            pt.xyz[2],
                            rgb[0],
                            rgb[1],
                            rgb[2],
                        )
                    )
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc


def model_stats(model: SparseModel) -> ModelStats:
    return model.stats()
