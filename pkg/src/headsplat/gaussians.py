"""Attribute-array containers for sets of 3D Gaussians.

A :class:`GaussianSet` stores one contiguous array per attribute. The same
container is used for raw (pre-activation) parameters and for activated
values; which one you are holding is a matter of pipeline position, not type.
Blendshape deltas carry only the channels that are blended (position,
rotation, color) and get their own slimmer container.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_f64(a, shape_tail, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise ValueError(f"{name}: expected shape (N,{','.join(map(str, shape_tail))}), got {arr.shape}")
    return arr


@dataclass
class GaussianSet:
    """N Gaussians as parallel attribute arrays.

    position : (N, 3) scene units
    rotation : (N, 4) quaternion, w-x-y-z order
    scale    : (N, 3) log-scale before activation, scene units after
    opacity  : (N,)   logit before activation, [0, 1] after
    color    : (N, 3) logit before activation, [0, 1] RGB after
    """

    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        self.position = _as_f64(self.position, (3,), "position")
        self.rotation = _as_f64(self.rotation, (4,), "rotation")
        self.scale = _as_f64(self.scale, (3,), "scale")
        self.opacity = np.asarray(self.opacity, dtype=np.float64)
        if self.opacity.ndim != 1:
            raise ValueError(f"opacity: expected shape (N,), got {self.opacity.shape}")
        self.color = _as_f64(self.color, (3,), "color")
        n = self.position.shape[0]
        for name in ("rotation", "scale", "opacity", "color"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")

    @property
    def count(self) -> int:
        return self.position.shape[0]

    def copy(self) -> "GaussianSet":
        return GaussianSet(
            self.position.copy(), self.rotation.copy(), self.scale.copy(),
            self.opacity.copy(), self.color.copy(),
        )

    @classmethod
    def zeros(cls, n: int) -> "GaussianSet":
        return cls(
            np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)),
            np.zeros(n), np.zeros((n, 3)),
        )


@dataclass
class DeltaSet:
    """One blendshape basis: additive deltas for position, rotation and color.

    Opacity and scale are never blended, so deltas do not carry them.
    """

    position: np.ndarray
    rotation: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        self.position = _as_f64(self.position, (3,), "position")
        self.rotation = _as_f64(self.rotation, (4,), "rotation")
        self.color = _as_f64(self.color, (3,), "color")
        n = self.position.shape[0]
        if self.rotation.shape[0] != n or self.color.shape[0] != n:
            raise ValueError("delta attribute arrays disagree on N")

    @property
    def count(self) -> int:
        return self.position.shape[0]

    def copy(self) -> "DeltaSet":
        return DeltaSet(self.position.copy(), self.rotation.copy(), self.color.copy())

    @classmethod
    def zeros(cls, n: int) -> "DeltaSet":
        return cls(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)))


@dataclass
class GaussianGrad:
    """Gradient buffer shaped like a GaussianSet, all channels."""

    position: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    color: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GaussianGrad":
        return cls(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)))

    def add_(self, other: "GaussianGrad") -> "GaussianGrad":
        self.position += other.position
        self.rotation += other.rotation
        self.scale += other.scale
        self.opacity += other.opacity
        self.color += other.color
        return self
