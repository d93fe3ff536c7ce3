"""Gaussian-blendshape head avatars on the CPU.

A compact set of learnable Gaussian blendshapes driven by an MLP-mapped rig
parameter vector, rendered with a differentiable splatter, trained offline or
on the fly from a frame stream.
"""

from .binding import GaussianBindings, bind_gaussians, mesh_frames, tbn, transform_to_deformed
from .color_init import ColorInitState, apply_color_init, estimate_colors
from .dataset import (
    FrameSample,
    SequenceDataset,
    SynthConfig,
    holdout_split,
    load_sequence,
    synth_generate,
)
from .gaussians import DeltaSet, GaussianSet
from .metrics import l1_loss, psnr, ssim
from .model import (
    AvatarModel,
    MlpWeights,
    activate,
    blend,
    map_params,
    orthogonality_metric,
)
from .model_io import load_model, save_model
from .optim import AdamState, adam_step
from .render import Camera, preprocess, rasterize, render_backward
from .rig import ParametricHeadRig, build_head_rig, rig_evaluate
from .scheduler import BatchRenderer, render_batch
from .stream import OnlineConfig, SamplePools, process_frame, run_online, sample_batch
from .train import TrainConfig, evaluate, init_avatar, train_offline

__all__ = [
    "AdamState", "AvatarModel", "BatchRenderer", "Camera", "ColorInitState",
    "DeltaSet", "FrameSample", "GaussianBindings", "GaussianSet", "MlpWeights",
    "OnlineConfig", "ParametricHeadRig", "SamplePools", "SequenceDataset",
    "SynthConfig", "TrainConfig", "activate", "adam_step", "apply_color_init",
    "bind_gaussians", "blend", "build_head_rig", "estimate_colors", "evaluate",
    "holdout_split", "init_avatar", "l1_loss", "load_model", "load_sequence",
    "map_params", "mesh_frames", "orthogonality_metric", "preprocess", "process_frame",
    "psnr", "rasterize", "render_backward", "render_batch", "rig_evaluate",
    "run_online", "sample_batch", "save_model", "ssim", "synth_generate", "tbn",
    "train_offline", "transform_to_deformed",
]

__version__ = "0.1.0"
