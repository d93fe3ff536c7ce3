"""One-shot Gaussian color estimation from observed pixels.

A freshly bound Gaussian acts as a 2D kernel over the image, so its color can
be read off directly as the splat-weighted average of the target pixels. Each
Gaussian is initialized at most once, the first time its peak blend weight
clears the visibility threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AvatarModel, logit
from .render import RenderAux, splat_weight_sums


@dataclass
class ColorInitState:
    visited: np.ndarray          # (N,) bool, one-way False -> True
    threshold: float = 0.1

    @classmethod
    def create(cls, n: int, threshold: float = 0.1) -> "ColorInitState":
        return cls(np.zeros(n, dtype=bool), threshold)

    @property
    def done(self) -> bool:
        return bool(self.visited.all())


def weighted_color_average(weights: np.ndarray, image: np.ndarray):
    """Core estimator: weights (G, P) over flattened pixels, image (P, 3).

    Returns (estimates (G, 3), total weight (G,)). Rows with zero total weight
    get a zero estimate.
    """
    den = weights.sum(axis=1)
    num = weights @ image
    safe = np.where(den > 0.0, den, 1.0)
    return num / safe[:, None], den


def estimate_colors(aux: RenderAux, target: np.ndarray, threshold: float = 0.1):
    """Splat-weighted average of target pixels per Gaussian.

    Returns (estimates (N, 3), eligible (N,) bool). A Gaussian is eligible
    when its maximum per-pixel blend weight exceeds the threshold; estimates
    of ineligible Gaussians are still returned but unused by callers.
    """
    target = np.asarray(target, dtype=np.float64)
    cam = aux.splats.camera
    if target.shape != (cam.height, cam.width, 3):
        raise ValueError(f"target shape {target.shape} does not match the render "
                         f"({cam.height}, {cam.width}, 3)")
    num, den = splat_weight_sums(aux, target)
    eligible = aux.max_weight > threshold
    bad = eligible & (den <= 0.0)
    if np.any(bad):
        raise RuntimeError(
            f"Gaussian {int(np.flatnonzero(bad)[0])} exceeds the weight threshold "
            "but accumulated zero total weight")
    safe = np.where(den > 0.0, den, 1.0)
    return num / safe[:, None], eligible


def apply_color_init(model: AvatarModel, estimates: np.ndarray, eligible: np.ndarray,
                     state: ColorInitState):
    """Write eligible, first-time estimates into the base color logits.

    Returns the number of Gaussians initialized. Already-visited Gaussians are
    never touched again.
    """
    fresh = eligible & ~state.visited
    if not np.any(fresh):
        return 0
    model.base.color[fresh] = logit(estimates[fresh])
    state.visited[fresh] = True
    return int(fresh.sum())
