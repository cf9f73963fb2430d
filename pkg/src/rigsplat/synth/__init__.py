"""Synthetic-scene generators: the independent oracle for every stage."""

from .board import BoardGeometry, generate_board_views
from .frames import generate_frames, value_noise
from .scene import Box, Cylinder, Plane, RigScenario, default_camera
from .targets import render_targets, surface_cloud
from .tracks import SyntheticMatchProvider, TrackScene, generate_tracks

__all__ = [
    "BoardGeometry",
    "Box",
    "Cylinder",
    "Plane",
    "RigScenario",
    "SyntheticMatchProvider",
    "TrackScene",
    "default_camera",
    "generate_board_views",
    "generate_frames",
    "generate_tracks",
    "render_targets",
    "surface_cloud",
    "value_noise",
]
