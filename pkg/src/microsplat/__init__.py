"""Compact CPU Gaussian splatting: adaptive densification, opacity pruning and
graph-guided spatial refinement on desk-scale scenes."""

from microsplat.scene import (
    Camera,
    GaussianPoint,
    ImageBuffer,
    ParameterError,
    Scene,
    SchemaError,
    activate,
    generate_synthetic_scene,
    load_cameras,
    load_scene,
    save_cameras,
    save_scene,
)
from microsplat.render import composite_pixel, project_gaussian, render_image
from microsplat.metrics import psnr, render_loss, ssim

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "GaussianPoint",
    "ImageBuffer",
    "ParameterError",
    "Scene",
    "SchemaError",
    "activate",
    "composite_pixel",
    "generate_synthetic_scene",
    "load_cameras",
    "load_scene",
    "project_gaussian",
    "psnr",
    "render_image",
    "render_loss",
    "save_cameras",
    "save_scene",
    "ssim",
]
