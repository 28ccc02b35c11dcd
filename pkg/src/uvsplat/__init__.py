"""Mesh-bound Gaussian avatar pipeline with UV-space appearance fields.

Fully analytic reverse-mode gradients end to end: triangle-frame binding,
bilinear UV field sampling, two-stage appearance fusion, and a tiled CPU
splatting renderer, trained with L1/SSIM plus geometric regularizers.
"""

from .camera import Camera, look_at
from .config import LossWeights, ProjectConfig, TrainConfig, load_config, parse_config
from .fields import ConditionedMLP, ConditionVector, FieldModel, LearnableUVMap
from .fusion import GlobalGaussians, assemble_stage1, fuse
from .geometry import (
    BlendshapeRig,
    GaussianCloud,
    TriangleFrames,
    TriMesh,
    bind_cloud,
    deform,
    init_cloud,
    triangle_frames,
)
from .losses import eval_metrics, photometric_loss, reg_losses, ssim
from .rasterizer import RenderGraph, render, render_backward
from .scene import SceneBundle, gen_scene, load_bundle
from .training import (
    AvatarState,
    load_state,
    precompute_frames,
    train_stage1,
    train_stage2,
)
from .uvfield import UVMap, bake_normal_map, build_texel_table, sample

__version__ = "0.1.0"

__all__ = [
    "AvatarState",
    "BlendshapeRig",
    "Camera",
    "ConditionVector",
    "ConditionedMLP",
    "FieldModel",
    "GaussianCloud",
    "GlobalGaussians",
    "LearnableUVMap",
    "LossWeights",
    "ProjectConfig",
    "RenderGraph",
    "SceneBundle",
    "TrainConfig",
    "TriMesh",
    "TriangleFrames",
    "UVMap",
    "assemble_stage1",
    "bake_normal_map",
    "bind_cloud",
    "build_texel_table",
    "deform",
    "eval_metrics",
    "fuse",
    "gen_scene",
    "init_cloud",
    "load_bundle",
    "load_config",
    "load_state",
    "look_at",
    "parse_config",
    "photometric_loss",
    "precompute_frames",
    "reg_losses",
    "render",
    "render_backward",
    "sample",
    "ssim",
    "train_stage1",
    "train_stage2",
    "triangle_frames",
]
