"""Sequence datasets: synthetic generation, loading, frame access.

A sequence directory holds frames/NNNNNN.png (8-bit straight-alpha RGBA),
params.json (camera, per-frame rig parameters), rig.json (the parametric rig
arrays) and, for synthetic data, the hidden ground-truth avatar used to
render the frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .binding import bind_gaussians, mesh_frames, transform_to_deformed
from .color_init import ColorInitState
from .gaussians import DeltaSet, GaussianSet
from .model import AvatarModel, MlpWeights, activate, blend, logit, map_params
from .model_io import load_model, save_model
from .render import Camera, preprocess, rasterize
from .rig import ParametricHeadRig, build_head_rig, rig_evaluate


@dataclass
class FrameSample:
    """One stream/dataset frame: image, rig parameters, cached deformed mesh."""

    index: int
    image: np.ndarray            # (H, W, 4) straight-alpha RGBA in [0, 1]
    theta: np.ndarray            # (H_params,)
    mesh: object = None          # cached MeshFrames, filled lazily


@dataclass
class SequenceDataset:
    directory: Path
    camera: Camera
    rig: ParametricHeadRig
    thetas: np.ndarray           # (T, H_params)
    images: list                 # list of (H, W, 4) float arrays

    def __len__(self) -> int:
        return self.thetas.shape[0]

    def frame(self, i: int) -> FrameSample:
        return FrameSample(index=i + 1, image=self.images[i], theta=self.thetas[i])

    def frames(self):
        return [self.frame(i) for i in range(len(self))]

    def mesh_for(self, sample: FrameSample):
        if sample.mesh is None:
            sample.mesh = mesh_frames(self.rig, rig_evaluate(self.rig, sample.theta))
        return sample.mesh


def holdout_split(n_frames: int, holdout: int = 350, fraction: float = 0.175):
    """Train/test split: reserve the last `holdout` frames, scaled down
    proportionally (last 17.5%) for shorter sequences."""
    test = holdout if n_frames >= 2000 else max(1, round(fraction * n_frames))
    test = min(test, n_frames - 1) if n_frames > 1 else 0
    return list(range(n_frames - test)), list(range(n_frames - test, n_frames))


# ------------------------------------------------------------------ synth rig

@dataclass
class SynthConfig:
    frames: int = 200
    image_size: int = 64
    uv_resolution: int = 32
    k_true: int = 4
    expressions: int = 10
    hidden_dim: int = 128
    expression_amp: float = 0.8
    pose_amp: float = 0.25


def _linear_mlp(mapping: np.ndarray, hidden: int) -> MlpWeights:
    """Embed an exact linear map psi = A theta in the 3-layer ReLU network
    via relu(A t) - relu(-A t)."""
    k, h = mapping.shape
    if 2 * k > hidden:
        raise ValueError("hidden width too small for the linear embedding")
    w1 = np.zeros((hidden, h))
    w1[:k] = mapping
    w1[k:2 * k] = -mapping
    w2 = np.zeros((hidden, hidden))
    w2[: 2 * k, : 2 * k] = np.eye(2 * k)
    w3 = np.zeros((k, hidden))
    w3[:, :k] = np.eye(k)
    w3[:, k:2 * k] = -np.eye(k)
    return MlpWeights(w1, np.zeros(hidden), w2, np.zeros(hidden), w3, np.zeros(k))


def _smooth_field(rng, uv, channels, amp):
    """Smooth sinusoidal per-Gaussian field over UV, shape (N, channels)."""
    out = np.empty((uv.shape[0], channels))
    for c in range(channels):
        fu, fv = rng.integers(1, 4, size=2)
        pu, pv = rng.uniform(0, 2 * np.pi, size=2)
        out[:, c] = amp * np.sin(2 * np.pi * fu * uv[:, 0] + pu) * np.cos(np.pi * fv * uv[:, 1] + pv)
    return out


def make_ground_truth(rig: ParametricHeadRig, config: SynthConfig, rng):
    """A hand-set avatar whose deltas correlate with all rig parameters."""
    bindings, positions = bind_gaussians(rig, config.uv_resolution)
    n = bindings.count

    # per-Gaussian UV (barycentric point in UV space) drives the smooth fields
    uv = np.einsum("nk,nkj->nj", bindings.barycentric,
                   rig.uv_coords[rig.faces[bindings.triangle_index]])

    tri = rig.base_vertices[rig.faces]
    area = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=-1).sum()
    spacing = np.sqrt(area / n)

    base = GaussianSet(
        positions,
        np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        np.full((n, 3), np.log(0.65 * spacing)),
        np.full(n, logit(np.array(0.95))),
        logit(0.5 + 0.45 * np.column_stack([
            np.sin(2 * np.pi * (1.5 * uv[:, 0] + 0.5 * uv[:, 1])),
            np.sin(2 * np.pi * (0.7 * uv[:, 0] - 1.3 * uv[:, 1]) + 1.0),
            np.sin(2 * np.pi * (2.2 * uv[:, 1]) + 2.0),
        ])),
    )
    deltas = []
    for _ in range(config.k_true):
        deltas.append(DeltaSet(
            _smooth_field(rng, uv, 3, amp=0.6 * spacing),
            np.column_stack([np.zeros(n), _smooth_field(rng, uv, 3, amp=0.12)]),
            _smooth_field(rng, uv, 3, amp=0.8),
        ))

    h = rig.param_dim
    mapping = rng.normal(0.0, 0.6 / np.sqrt(h), size=(config.k_true, h))
    mapping[:, rig.num_expressions:] *= 2.0   # pose-correlated appearance
    mlp = _linear_mlp(mapping, config.hidden_dim)
    return AvatarModel(base, deltas, mlp, bindings), mapping


def synth_trajectory(rng, rig: ParametricHeadRig, config: SynthConfig) -> np.ndarray:
    """Smooth sinusoidal parameter curves; theta(0) = 0 exactly."""
    t = np.arange(config.frames) / max(config.frames, 1)
    thetas = np.zeros((config.frames, rig.param_dim))
    for e in range(rig.num_expressions):
        freq = rng.integers(1, 5)
        amp = config.expression_amp * rng.uniform(0.4, 1.0)
        thetas[:, e] = amp * np.sin(2 * np.pi * freq * t)
    thetas[:, rig.num_expressions + 0] = 0.3 * config.pose_amp * np.sin(4 * np.pi * t)
    thetas[:, rig.num_expressions + 1] = config.pose_amp * np.sin(2 * np.pi * t)
    thetas[:, rig.num_expressions + 2] = 0.15 * config.pose_amp * np.sin(6 * np.pi * t)
    return thetas


def render_avatar_frame(model: AvatarModel, rig: ParametricHeadRig, theta, camera: Camera):
    """Render one frame of an avatar as straight-alpha RGBA in [0, 1]."""
    psi, _ = map_params(model.mlp, theta)
    world = activate(blend(model, psi))
    frames = mesh_frames(rig, rig_evaluate(rig, theta))
    world = transform_to_deformed(world, frames, model.bindings)
    image, aux = rasterize(preprocess(world, camera), camera, np.zeros(3))
    alpha = 1.0 - aux.transmittance
    straight = np.where(alpha[:, :, None] > 0, image / np.maximum(alpha[:, :, None], 1e-12), 0.0)
    return np.concatenate([straight, alpha[:, :, None]], axis=-1)


def synth_generate(out_dir, config: SynthConfig = None, seed: int = 0):
    """Generate a synthetic sequence plus its hidden ground-truth avatar.

    Frames are rendered from the reloaded (float32) ground truth so the saved
    model reproduces the PNGs exactly up to 8-bit quantization.
    """
    config = config or SynthConfig()
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    rig = build_head_rig(num_expressions=config.expressions)
    gt_model, mapping = make_ground_truth(rig, config, rng)
    thetas = synth_trajectory(rng, rig, config)
    camera = Camera.frontal(config.image_size)

    save_model(gt_model, ColorInitState.create(gt_model.count), out_dir / "gt_model.bin")
    gt_model, _ = load_model(out_dir / "gt_model.bin")

    images = []
    for i in range(config.frames):
        rgba = render_avatar_frame(gt_model, rig, thetas[i], camera)
        quant = np.clip(np.round(rgba * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(quant, mode="RGBA").save(out_dir / "frames" / f"{i:06d}.png")
        images.append(quant.astype(np.float64) / 255.0)

    save_rig(rig, out_dir / "rig.json")
    params = {
        "camera": camera.to_dict(),
        "theta": thetas.tolist(),
        "frame_count": config.frames,
        "rig": "rig.json",
        "background": "black",
        "ground_truth": "gt_model.bin",
        "seed": seed,
    }
    (out_dir / "params.json").write_text(json.dumps(params, indent=1, sort_keys=True))
    return SequenceDataset(out_dir, camera, rig, thetas, images)


def save_rig(rig: ParametricHeadRig, path):
    Path(path).write_text(json.dumps({
        "base_vertices": rig.base_vertices.tolist(),
        "faces": rig.faces.tolist(),
        "uv_coords": rig.uv_coords.tolist(),
        "expr_bases": rig.expr_bases.tolist(),
        "pose_dim": rig.pose_dim,
    }, sort_keys=True))


def load_rig(path) -> ParametricHeadRig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"rig file not found: {path}")
    for key in ("base_vertices", "faces", "uv_coords", "expr_bases"):
        if key not in d:
            raise ValueError(f"{path}: missing field {key!r}")
    return ParametricHeadRig(
        np.asarray(d["base_vertices"]), np.asarray(d["faces"]),
        np.asarray(d["uv_coords"]), np.asarray(d["expr_bases"]),
        pose_dim=int(d.get("pose_dim", 3)),
    )


def load_sequence(directory) -> SequenceDataset:
    directory = Path(directory)
    params_path = directory / "params.json"
    if not params_path.exists():
        raise FileNotFoundError(f"missing params.json in {directory}")
    params = json.loads(params_path.read_text())
    for key in ("camera", "theta", "frame_count", "rig"):
        if key not in params:
            raise ValueError(f"{params_path}: missing field {key!r}")
    camera = Camera.from_dict(params["camera"])
    rig = load_rig(directory / params["rig"])

    thetas = np.asarray(params["theta"], dtype=np.float64)
    count = int(params["frame_count"])
    if thetas.ndim != 2 or thetas.shape[0] != count:
        raise ValueError(
            f"{params_path}: frame_count {count} does not match theta rows "
            f"{thetas.shape[0] if thetas.ndim == 2 else 'non-tabular'}")
    if thetas.shape[1] != rig.param_dim:
        raise ValueError(
            f"{params_path}: theta dimension {thetas.shape[1]} does not match "
            f"rig parameter dimension {rig.param_dim}")

    images = []
    for i in range(count):
        frame_path = directory / "frames" / f"{i:06d}.png"
        if not frame_path.exists():
            raise FileNotFoundError(f"missing frame file {frame_path}")
        with Image.open(frame_path) as im:
            arr = np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0
        if arr.shape[:2] != (camera.height, camera.width):
            raise ValueError(f"{frame_path}: image size {arr.shape[:2]} does not "
                             f"match camera ({camera.height}, {camera.width})")
        images.append(arr)
    return SequenceDataset(directory, camera, rig, thetas, images)
