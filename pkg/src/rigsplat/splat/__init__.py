"""Gaussian splatting: seeding, rendering, optimization, metrics."""

from .cloud import (
    GaussianCloud,
    colorize_points,
    export_ply,
    load_ply,
    seed_gaussians,
)
from .metrics import psnr, ssim
from .train import OptimizeResult, optimize, view_metrics
from .rasterize import RenderTarget, View, render

__all__ = [
    "GaussianCloud",
    "OptimizeResult",
    "RenderTarget",
    "View",
    "colorize_points",
    "export_ply",
    "load_ply",
    "optimize",
    "psnr",
    "render",
    "seed_gaussians",
    "ssim",
    "view_metrics",
]
