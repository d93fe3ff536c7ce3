"""Offline training loop and evaluation.

Each step samples a batch of frames, renders every item against its own
random background, composites the RGBA target over the same background, takes
an L1 loss and walks the full adjoint chain back to the base Gaussians, the
blendshape deltas and the MLP. Gradients are reduced in item order and one
Adam step is taken per batch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .binding import bind_gaussians, transform_backward, transform_to_deformed
from .color_init import ColorInitState, apply_color_init, estimate_colors
from .dataset import FrameSample, SequenceDataset
from .gaussians import DeltaSet, GaussianGrad, GaussianSet
from .metrics import composite_over, l1_loss, psnr, ssim
from .model import (
    AvatarModel,
    MlpGrad,
    MlpWeights,
    activate,
    activate_backward,
    blend,
    blend_backward,
    logit,
    map_params,
    mlp_backward,
)
from .optim import AdamState, adam_step
from .render import preprocess, rasterize, render_backward
from .scheduler import BatchRenderer


@dataclass
class TrainConfig:
    batch_size: int = 10
    total_steps: int = 5000
    lr_position: float = 0.0008
    lr_opacity: float = 0.25
    lr_scale: float = 0.025
    lr_rotation: float = 0.005
    lr_color: float = 0.0125
    delta_position_scale: float = 0.05
    delta_rotation_scale: float = 0.5
    delta_color_scale: float = 0.5
    lr_mlp: float = 0.001
    num_blendshapes: int = 20
    hidden_dim: int = 128
    uv_resolution: int = 256
    color_init_threshold: float = 0.1
    color_init: bool = True
    use_mlp: bool = True          # False: drive with the first K rig parameters
    init_opacity: float = 0.1
    seed: int = 0
    workers: int = 1
    scheme: str = "two_stage"

    def delta_lrs(self):
        return {
            "position": self.lr_position * self.delta_position_scale,
            "rotation": self.lr_rotation * self.delta_rotation_scale,
            "color": self.lr_color * self.delta_color_scale,
        }


@dataclass
class ParamGradients:
    base: GaussianGrad
    deltas: list
    mlp: MlpGrad

    @classmethod
    def zeros_like(cls, model: AvatarModel) -> "ParamGradients":
        n = model.count
        return cls(
            GaussianGrad.zeros(n),
            [DeltaSet.zeros(n) for _ in model.deltas],
            MlpGrad.zeros_like(model.mlp),
        )

    def add_(self, other: "ParamGradients") -> "ParamGradients":
        self.base.add_(other.base)
        for mine, theirs in zip(self.deltas, other.deltas):
            mine.position += theirs.position
            mine.rotation += theirs.rotation
            mine.color += theirs.color
        self.mlp.add_(other.mlp)
        return self


def init_avatar(rig, config: TrainConfig) -> AvatarModel:
    """Fresh model: Gaussians evenly bound over the UV map, zero deltas, MLP
    with a small random output layer (deltas being zero keeps the first render
    equal to rendering the base model for any rig parameters)."""
    rng = np.random.default_rng(config.seed)
    bindings, positions = bind_gaussians(rig, config.uv_resolution)
    n = bindings.count

    tri = rig.base_vertices[rig.faces]
    area = 0.5 * np.linalg.norm(
        np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=-1).sum()
    spacing = np.sqrt(area / n)

    base = GaussianSet(
        positions,
        np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        np.full((n, 3), np.log(0.55 * spacing)),
        np.full(n, float(logit(np.array(config.init_opacity)))),
        np.zeros((n, 3)),
    )
    deltas = [DeltaSet.zeros(n) for _ in range(config.num_blendshapes)]
    mlp = MlpWeights.create(rig.param_dim, config.num_blendshapes,
                            hidden_dim=config.hidden_dim, rng=rng)
    mlp.w3 = rng.normal(0.0, 0.01, size=mlp.w3.shape)
    return AvatarModel(base, deltas, mlp, bindings)


@dataclass
class FrameContext:
    psi: np.ndarray
    mlp_cache: object
    raw: GaussianSet
    activated: GaussianSet
    mesh: object
    splats: object
    aux: object
    use_mlp: bool


def frame_forward(model: AvatarModel, sample_theta, mesh, camera, background,
                  renderer_item=False, use_mlp=True):
    """Forward chain up to the splat list; rendering happens in the batch
    scheduler, so this returns the world set plus a partial context."""
    if use_mlp:
        psi, mlp_cache = map_params(model.mlp, sample_theta)
    else:
        k = model.num_blendshapes
        psi = np.asarray(sample_theta, dtype=np.float64)[:k]
        mlp_cache = None
    raw = blend(model, psi)
    act = activate(raw)
    world = transform_to_deformed(act, mesh, model.bindings)
    ctx = FrameContext(psi, mlp_cache, raw, act, mesh, None, None, use_mlp)
    return world, ctx


def frame_backward(model: AvatarModel, ctx: FrameContext, grad_image) -> ParamGradients:
    g_world = render_backward(ctx.splats, ctx.aux, grad_image)
    g_act = transform_backward(ctx.activated, ctx.mesh, model.bindings, g_world)
    g_raw = activate_backward(ctx.raw, ctx.activated, g_act)
    g_base, g_deltas, g_psi = blend_backward(model, ctx.psi, g_raw)
    if ctx.use_mlp:
        g_mlp, _ = mlp_backward(model.mlp, ctx.mlp_cache, g_psi)
    else:
        g_mlp = MlpGrad.zeros_like(model.mlp)
    return ParamGradients(g_base, g_deltas, g_mlp)


class Optimizer:
    """Per-attribute Adam groups with the published learning rates."""

    def __init__(self, model: AvatarModel, config: TrainConfig):
        self._adam_step = adam_step
        self.config = config
        self.base_states = {
            name: AdamState.zeros_like(getattr(model.base, name))
            for name in ("position", "rotation", "scale", "opacity", "color")
        }
        self.delta_states = [
            {name: AdamState.zeros_like(getattr(d, name))
             for name in ("position", "rotation", "color")}
            for d in model.deltas
        ]
        self.mlp_states = {
            name: AdamState.zeros_like(getattr(model.mlp, name))
            for name in ("w1", "b1", "w2", "b2", "w3", "b3")
        }

    def step(self, model: AvatarModel, grads: ParamGradients):
        cfg = self.config
        base_lrs = {
            "position": cfg.lr_position, "rotation": cfg.lr_rotation,
            "scale": cfg.lr_scale, "opacity": cfg.lr_opacity, "color": cfg.lr_color,
        }
        for name, lr in base_lrs.items():
            self._adam_step(getattr(model.base, name), getattr(grads.base, name),
                            self.base_states[name], lr)
        delta_lrs = cfg.delta_lrs()
        for d, g, states in zip(model.deltas, grads.deltas, self.delta_states):
            for name, lr in delta_lrs.items():
                self._adam_step(getattr(d, name), getattr(g, name), states[name], lr)
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            self._adam_step(getattr(model.mlp, name), getattr(grads.mlp, name),
                            self.mlp_states[name], cfg.lr_mlp)


@dataclass
class TrainState:
    """Everything a single optimization step needs besides the batch."""

    model: AvatarModel
    optimizer: Optimizer
    renderer: BatchRenderer
    color_state: ColorInitState
    config: TrainConfig
    camera: object


def train_step(state: TrainState, samples, backgrounds, mesh_of):
    """One batch step over pre-sampled frames.

    Returns (batch loss, per-item black-background L1 losses). The black L1
    is derived from the same forward pass (background term subtracted), so it
    costs no extra render.
    """
    model = state.model
    cfg = state.config
    batch = len(samples)

    contexts = []
    items = []
    for sample, bg in zip(samples, backgrounds):
        world, ctx = frame_forward(model, sample.theta, mesh_of(sample),
                                   state.camera, bg, use_mlp=cfg.use_mlp)
        contexts.append(ctx)
        items.append((world, state.camera, bg))

    rendered = state.renderer.render_batch(items)

    losses = np.empty(batch)
    black_losses = np.empty(batch)
    grad_images = []
    for i, ((image, aux), sample, bg) in enumerate(zip(rendered, samples, backgrounds)):
        contexts[i].splats = aux.splats
        contexts[i].aux = aux
        target = composite_over(sample.image, bg)
        loss, grad_image = l1_loss(image, target)
        losses[i] = loss
        grad_images.append(grad_image / batch)
        black_pred = image - aux.transmittance[:, :, None] * bg[None, None, :]
        black_target = sample.image[:, :, :3] * sample.image[:, :, 3:4]
        black_losses[i] = float(np.mean(np.abs(black_pred - black_target)))

    grads = state.renderer.map_items(
        lambda ctx, g: frame_backward(model, ctx, g),
        list(zip(contexts, grad_images)),
    )
    total = ParamGradients.zeros_like(model)
    for g in grads:
        total.add_(g)
    state.optimizer.step(model, total)

    if cfg.color_init and not state.color_state.done:
        _attempt_color_init(state, samples, rendered, backgrounds)
    return float(losses.mean()), black_losses


def _attempt_color_init(state, samples, rendered, backgrounds):
    """Estimate colors from the batch item where each Gaussian splats the
    strongest, then write first-time estimates."""
    stack = np.stack([aux.max_weight for (_, aux) in rendered], axis=0)  # (B, N)
    best_item = np.argmax(stack, axis=0)
    best_weight = stack[best_item, np.arange(stack.shape[1])]
    need = (~state.color_state.visited) & (best_weight > state.color_state.threshold)
    if not np.any(need):
        return
    for i, ((image, aux), sample, bg) in enumerate(zip(rendered, samples, backgrounds)):
        mask = need & (best_item == i)
        if not np.any(mask):
            continue
        target = composite_over(sample.image, bg)
        estimates, eligible = estimate_colors(aux, target, state.color_state.threshold)
        apply_color_init(state.model, estimates, eligible & mask, state.color_state)


def train_offline(dataset: SequenceDataset, config: TrainConfig,
                  frame_indices=None, model: AvatarModel = None):
    """Optimize a fresh (or given) model on the dataset frames.

    Returns (model, log, color_state); the log is a list of per-step records
    {"step", "loss", "wall_ms"}.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    indices = list(frame_indices) if frame_indices is not None else list(range(len(dataset)))
    if not indices:
        raise ValueError("no training frames selected")
    samples = [dataset.frame(i) for i in indices]

    if model is None:
        model = init_avatar(dataset.rig, config)
    color_state = ColorInitState.create(model.count, config.color_init_threshold)
    rng = np.random.default_rng(config.seed)
    checksum_before = model.bindings.checksum()

    log = []
    with BatchRenderer(workers=config.workers, scheme=config.scheme) as renderer:
        state = TrainState(model, Optimizer(model, config), renderer,
                           color_state, config, dataset.camera)
        for step in range(config.total_steps):
            t0 = time.perf_counter()
            picks = rng.integers(0, len(samples), size=config.batch_size)
            batch = [samples[int(p)] for p in picks]
            backgrounds = rng.uniform(0.0, 1.0, size=(config.batch_size, 3))
            loss, _ = train_step(state, batch, backgrounds, dataset.mesh_for)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite loss at step {step}")
            log.append({
                "step": step,
                "loss": loss,
                "wall_ms": (time.perf_counter() - t0) * 1000.0,
            })

    if model.bindings.checksum() != checksum_before:
        raise RuntimeError("bindings mutated during training")
    return model, log, color_state


def smoothed_losses(log, window: int = 100):
    """Moving average of the per-step loss, same length as the log."""
    losses = np.array([rec["loss"] for rec in log])
    if losses.size == 0:
        return losses
    kernel = np.ones(min(window, losses.size)) / min(window, losses.size)
    return np.convolve(losses, kernel, mode="valid")


def render_for_eval(model: AvatarModel, dataset: SequenceDataset, index: int,
                    use_mlp: bool = True):
    sample = dataset.frame(index)
    world, _ = frame_forward(model, sample.theta, dataset.mesh_for(sample),
                             dataset.camera, np.zeros(3), use_mlp=use_mlp)
    image, aux = rasterize(preprocess(world, dataset.camera), dataset.camera, np.zeros(3))
    return image, aux, sample


def evaluate(model: AvatarModel, dataset: SequenceDataset, frame_indices=None,
             use_mlp: bool = True):
    """Per-frame and mean PSNR/SSIM against targets composited over black."""
    indices = list(frame_indices) if frame_indices is not None else list(range(len(dataset)))
    per_frame = []
    for i in indices:
        image, _, sample = render_for_eval(model, dataset, i, use_mlp=use_mlp)
        target = composite_over(sample.image, np.zeros(3))
        per_frame.append({
            "frame": i,
            "psnr": psnr(image, target),
            "ssim": ssim(image, target),
            "l1": float(np.mean(np.abs(image - target))),
        })
    return {
        "frames": per_frame,
        "mean_psnr": float(np.mean([f["psnr"] for f in per_frame])),
        "mean_ssim": float(np.mean([f["ssim"] for f in per_frame])),
        "mean_l1": float(np.mean([f["l1"] for f in per_frame])),
    }
