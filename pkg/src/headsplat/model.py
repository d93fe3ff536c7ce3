"""Reduced-blendshape avatar model.

The avatar is a base Gaussian set plus K learnable delta sets. A small MLP
maps rig parameters to the K blending weights; blending is a plain linear
combination over position, rotation and color, followed by activations that
map raw parameters into their valid ranges. Every differentiable operation
here has an explicit adjoint; the trainer composes them by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussians import DeltaSet, GaussianGrad, GaussianSet


@dataclass
class MlpWeights:
    """Three fully connected layers: input H -> hidden -> hidden -> K.

    Hidden activation is ReLU; the output layer is linear. Production models
    use hidden width 128; tests may shrink it.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h, hidden, k = self.input_dim, self.hidden_dim, self.output_dim
        if self.w1.shape != (hidden, h) or self.b1.shape != (hidden,):
            raise ValueError("layer 1 shapes inconsistent")
        if self.w2.shape != (hidden, hidden) or self.b2.shape != (hidden,):
            raise ValueError("layer 2 shapes inconsistent")
        if self.w3.shape != (k, hidden) or self.b3.shape != (k,):
            raise ValueError("layer 3 shapes inconsistent")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w3.shape[0]

    def copy(self) -> "MlpWeights":
        return MlpWeights(*(getattr(self, n).copy() for n in ("w1", "b1", "w2", "b2", "w3", "b3")))

    @classmethod
    def create(cls, input_dim: int, output_dim: int, hidden_dim: int = 128,
               rng: np.random.Generator | None = None) -> "MlpWeights":
        """Hidden layers get scaled-normal init; the output layer starts at zero
        so the blend weights (and hence the avatar) equal the base model at step 0.
        """
        rng = rng or np.random.default_rng(0)
        s1 = np.sqrt(2.0 / input_dim)
        s2 = np.sqrt(2.0 / hidden_dim)
        return cls(
            w1=rng.normal(0.0, s1, (hidden_dim, input_dim)),
            b1=np.zeros(hidden_dim),
            w2=rng.normal(0.0, s2, (hidden_dim, hidden_dim)),
            b2=np.zeros(hidden_dim),
            w3=np.zeros((output_dim, hidden_dim)),
            b3=np.zeros(output_dim),
        )


@dataclass
class MlpGrad:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @classmethod
    def zeros_like(cls, mlp: MlpWeights) -> "MlpGrad":
        return cls(*(np.zeros_like(getattr(mlp, n)) for n in ("w1", "b1", "w2", "b2", "w3", "b3")))

    def add_(self, other: "MlpGrad") -> "MlpGrad":
        for n in ("w1", "b1", "w2", "b2", "w3", "b3"):
            getattr(self, n).__iadd__(getattr(other, n))
        return self


@dataclass
class AvatarModel:
    """Base Gaussians, K blendshape deltas, the parameter-mapping MLP and the
    mesh bindings the Gaussians were initialized with."""

    base: GaussianSet
    deltas: list  # list[DeltaSet], length K
    mlp: MlpWeights
    bindings: "GaussianBindings"

    def __post_init__(self):
        if len(self.deltas) < 1:
            raise ValueError("need at least one blendshape delta")
        n = self.base.count
        for k, d in enumerate(self.deltas):
            if d.count != n:
                raise ValueError(f"delta {k} has {d.count} Gaussians, base has {n}")
        if self.mlp.output_dim != len(self.deltas):
            raise ValueError("MLP output dim must equal the number of deltas")

    @property
    def num_blendshapes(self) -> int:
        return len(self.deltas)

    @property
    def count(self) -> int:
        return self.base.count

    def copy(self) -> "AvatarModel":
        return AvatarModel(self.base.copy(), [d.copy() for d in self.deltas], self.mlp.copy(), self.bindings)


def map_params(mlp: MlpWeights, theta: np.ndarray):
    """Map rig parameters to blend weights; returns (psi, cache for backward)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (mlp.input_dim,):
        raise ValueError(f"theta has shape {theta.shape}, MLP expects ({mlp.input_dim},)")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta contains non-finite values")
    z1 = mlp.w1 @ theta + mlp.b1
    h1 = np.maximum(z1, 0.0)
    z2 = mlp.w2 @ h1 + mlp.b2
    h2 = np.maximum(z2, 0.0)
    psi = mlp.w3 @ h2 + mlp.b3
    return psi, (theta, z1, h1, z2, h2)


def mlp_backward(mlp: MlpWeights, cache, grad_psi: np.ndarray):
    """Adjoint of map_params. Returns (MlpGrad, grad_theta)."""
    theta, z1, h1, z2, h2 = cache
    grad_psi = np.asarray(grad_psi, dtype=np.float64)
    if grad_psi.shape != (mlp.output_dim,):
        raise ValueError("grad_psi shape mismatch")
    gw3 = np.outer(grad_psi, h2)
    gb3 = grad_psi.copy()
    gh2 = mlp.w3.T @ grad_psi
    gz2 = gh2 * (z2 > 0.0)
    gw2 = np.outer(gz2, h1)
    gb2 = gz2
    gh1 = mlp.w2.T @ gz2
    gz1 = gh1 * (z1 > 0.0)
    gw1 = np.outer(gz1, theta)
    gb1 = gz1
    grad_theta = mlp.w1.T @ gz1
    return MlpGrad(gw1, gb1, gw2, gb2, gw3, gb3), grad_theta


def blend(model: AvatarModel, psi: np.ndarray) -> GaussianSet:
    """Linear blend: base plus psi-weighted deltas on position/rotation/color.

    Opacity and scale are copied from the base. Zero weights are skipped so
    that unit-vector weights recover base + delta bit-exactly.
    """
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape != (model.num_blendshapes,):
        raise ValueError(f"psi has shape {psi.shape}, model has K={model.num_blendshapes}")
    pos = model.base.position.copy()
    rot = model.base.rotation.copy()
    col = model.base.color.copy()
    for k in range(psi.shape[0]):
        w = psi[k]
        if w == 0.0:
            continue
        d = model.deltas[k]
        pos += w * d.position
        rot += w * d.rotation
        col += w * d.color
    return GaussianSet(pos, rot, model.base.scale.copy(), model.base.opacity.copy(), col)


def blend_backward(model: AvatarModel, psi: np.ndarray, grad_out: GaussianGrad):
    """Adjoint of blend.

    Returns (grad_base: GaussianGrad, grad_deltas: list of DeltaSet-shaped
    grads, grad_psi). Opacity/scale gradients pass straight to the base.
    """
    psi = np.asarray(psi, dtype=np.float64)
    k_count = model.num_blendshapes
    if psi.shape != (k_count,):
        raise ValueError("psi shape mismatch")
    grad_base = GaussianGrad(
        grad_out.position.copy(), grad_out.rotation.copy(), grad_out.scale.copy(),
        grad_out.opacity.copy(), grad_out.color.copy(),
    )
    grad_deltas = []
    grad_psi = np.empty(k_count)
    for k in range(k_count):
        d = model.deltas[k]
        grad_deltas.append(DeltaSet(
            psi[k] * grad_out.position,
            psi[k] * grad_out.rotation,
            psi[k] * grad_out.color,
        ))
        grad_psi[k] = (
            np.vdot(d.position, grad_out.position)
            + np.vdot(d.rotation, grad_out.rotation)
            + np.vdot(d.color, grad_out.color)
        )
    return grad_base, grad_deltas, grad_psi


def activate(raw: GaussianSet) -> GaussianSet:
    """Map raw blended parameters to valid Gaussian attributes.

    opacity/color: sigmoid; scale: exp; rotation: normalized; position: passthrough.
    """
    norms = np.linalg.norm(raw.rotation, axis=-1)
    bad = np.flatnonzero(norms < 1e-30)
    if bad.size:
        raise FloatingPointError(f"zero-norm quaternion at Gaussian index {bad[0]}")
    return GaussianSet(
        raw.position.copy(),
        raw.rotation / norms[:, None],
        np.exp(raw.scale),
        _sigmoid(raw.opacity),
        _sigmoid(raw.color),
    )


def activate_backward(raw: GaussianSet, activated: GaussianSet, grad_out: GaussianGrad) -> GaussianGrad:
    """Adjoint of activate, using the saved forward output."""
    norms = np.linalg.norm(raw.rotation, axis=-1, keepdims=True)
    y = activated.rotation
    grad_rot = (grad_out.rotation - y * np.sum(y * grad_out.rotation, axis=-1, keepdims=True)) / norms
    return GaussianGrad(
        grad_out.position.copy(),
        grad_rot,
        grad_out.scale * activated.scale,
        grad_out.opacity * activated.opacity * (1.0 - activated.opacity),
        grad_out.color * activated.color * (1.0 - activated.color),
    )


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p, eps: float = 1e-4):
    """Inverse sigmoid with clamping away from {0, 1}."""
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def orthogonality_metric(model: AvatarModel) -> float:
    """Frobenius deviation of the normalized, flattened blendshape bases from
    an orthonormal family: ||V V^T - I||_F with V the K x d row matrix."""
    rows = []
    for k, d in enumerate(model.deltas):
        v = np.concatenate([d.position.ravel(), d.rotation.ravel(), d.color.ravel()])
        n = np.linalg.norm(v)
        if n < 1e-30:
            raise ValueError(f"degenerate (zero-norm) blendshape basis at index {k}")
        rows.append(v / n)
    v_mat = np.stack(rows, axis=0)
    gram = v_mat @ v_mat.T
    return float(np.linalg.norm(gram - np.eye(v_mat.shape[0]), ord="fro"))
