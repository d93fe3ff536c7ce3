import math

import numpy as np
import pytest

from headsplat.metrics import composite_over, l1_loss, psnr, ssim
from headsplat.optim import AdamState, adam_step


# ------------------------------------------------------------------- l1_loss

def test_l1_equal_images():
    img = np.random.default_rng(0).uniform(0, 1, (6, 6, 3))
    loss, grad = l1_loss(img, img)
    assert loss == 0.0
    assert not grad.any()


def test_l1_constant_offset():
    rng = np.random.default_rng(1)
    target = rng.uniform(0, 0.4, (5, 5, 3))
    loss, grad = l1_loss(target + 0.5, target)
    assert abs(loss - 0.5) < 1e-12
    assert np.allclose(grad, 1.0 / target.size)


def test_l1_matches_scalar_loop():
    rng = np.random.default_rng(2)
    pred = rng.uniform(0, 1, (4, 4, 3))
    target = rng.uniform(0, 1, (4, 4, 3))
    loss, grad = l1_loss(pred, target)
    acc = 0.0
    for v1, v2 in zip(pred.ravel(), target.ravel()):
        acc += abs(v1 - v2)
    assert abs(loss - acc / pred.size) < 1e-12
    for i in (0, 7, 33):
        expected = math.copysign(1.0 / pred.size, pred.ravel()[i] - target.ravel()[i])
        assert grad.ravel()[i] == expected


def test_l1_shape_mismatch():
    with pytest.raises(ValueError):
        l1_loss(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))


# ---------------------------------------------------------------------- adam

def test_adam_zero_grad_fresh_state():
    p = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros_like(p)
    adam_step(p, np.zeros(3), state, lr=0.1)
    assert np.array_equal(p, [1.0, -2.0, 3.0])


def test_adam_first_step_is_signed_lr():
    for g in (0.3, -1.7, 42.0):
        p = np.array([5.0])
        state = AdamState.zeros_like(p)
        adam_step(p, np.array([g]), state, lr=0.01)
        # bias-corrected first step: -lr * g / (|g| + eps') ~ -lr * sign(g)
        assert abs((p[0] - 5.0) + 0.01 * np.sign(g)) < 1e-6


def test_adam_deterministic():
    rng = np.random.default_rng(3)
    grads = [rng.normal(size=(4, 3)) for _ in range(10)]

    def run():
        p = np.ones((4, 3))
        state = AdamState.zeros_like(p)
        for g in grads:
            adam_step(p, g, state, lr=0.05)
        return p

    assert np.array_equal(run(), run())


def test_adam_shape_check():
    p = np.zeros(3)
    with pytest.raises(ValueError):
        adam_step(p, np.zeros(4), AdamState.zeros_like(p), lr=0.1)


# ---------------------------------------------------------------- psnr, ssim

def test_psnr_exact_match_capped():
    img = np.full((8, 8, 3), 0.3)
    assert psnr(img, img) == 99.0


def test_psnr_constant_offset_closed_form():
    rng = np.random.default_rng(4)
    target = rng.uniform(0, 0.8, (16, 16, 3))
    value = psnr(target + 0.1, target)
    assert abs(value - 20.0) < 1e-9


def test_ssim_self_is_one():
    rng = np.random.default_rng(5)
    img = rng.uniform(0, 1, (24, 24, 3))
    assert abs(ssim(img, img) - 1.0) < 1e-12


def test_ssim_luminance_shift_below_one():
    rng = np.random.default_rng(6)
    img = rng.uniform(0, 0.3, (24, 24, 3))
    assert ssim(img + 0.5, img) < 1.0


def test_ssim_sensible_ordering():
    rng = np.random.default_rng(7)
    img = rng.uniform(0, 1, (24, 24, 3))
    slightly_off = np.clip(img + rng.normal(0, 0.02, img.shape), 0, 1)
    very_off = rng.uniform(0, 1, img.shape)
    assert ssim(slightly_off, img) > ssim(very_off, img)


# ----------------------------------------------------------------- composite

def test_composite_over_background():
    rgba = np.zeros((2, 2, 4))
    rgba[0, 0] = [1.0, 0.0, 0.0, 1.0]
    rgba[0, 1] = [1.0, 0.0, 0.0, 0.5]
    bg = np.array([0.0, 0.0, 1.0])
    out = composite_over(rgba, bg)
    assert np.allclose(out[0, 0], [1.0, 0.0, 0.0])
    assert np.allclose(out[0, 1], [0.5, 0.0, 0.5])
    assert np.allclose(out[1, 1], bg)
