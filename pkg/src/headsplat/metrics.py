"""Image losses and quality metrics."""

from __future__ import annotations

import numpy as np

PSNR_CAP = 99.0


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error over all pixels and channels.

    Returns (loss, grad wrt pred) with grad = sign / (H * W * C).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """10 log10(1 / MSE) on [0, 1] images, capped at 99 dB for exact matches."""
    mse = float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter2_valid(image, kernel1d):
    """Separable valid-mode 2D filtering of (H, W) with an odd 1D kernel."""
    k = kernel1d.shape[0]
    from numpy.lib.stride_tricks import sliding_window_view
    rows = sliding_window_view(image, k, axis=0) @ kernel1d       # (H-k+1, W)
    return sliding_window_view(rows, k, axis=1) @ kernel1d        # (H-k+1, W-k+1)


def ssim(pred: np.ndarray, target: np.ndarray, window_size: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity with a Gaussian window, channels averaged.

    Standard constants on a [0, 1] dynamic range; valid-mode windows.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("shape mismatch")
    if pred.ndim == 2:
        pred = pred[:, :, None]
        target = target[:, :, None]
    c1 = k1 * k1
    c2 = k2 * k2
    win = _gaussian_window(window_size, sigma)
    vals = []
    for ch in range(pred.shape[2]):
        x = pred[:, :, ch]
        y = target[:, :, ch]
        mu_x = _filter2_valid(x, win)
        mu_y = _filter2_valid(y, win)
        xx = _filter2_valid(x * x, win) - mu_x * mu_x
        yy = _filter2_valid(y * y, win) - mu_y * mu_y
        xy = _filter2_valid(x * y, win) - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / (
            (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        )
        vals.append(float(s.mean()))
    return float(np.mean(vals))


def composite_over(rgba: np.ndarray, background) -> np.ndarray:
    """Straight-alpha RGBA (H, W, 4) composited over a background color."""
    rgba = np.asarray(rgba, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    alpha = rgba[:, :, 3:4]
    return rgba[:, :, :3] * alpha + (1.0 - alpha) * bg[None, None, :]
