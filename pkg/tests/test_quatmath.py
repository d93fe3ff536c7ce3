import numpy as np
import pytest

from headsplat.quatmath import (
    axis_angle_to_matrix,
    matrix_to_quat,
    quat_multiply,
    quat_multiply_backward_right,
    quat_normalize,
    quat_normalize_backward,
    quat_to_matrix,
    quat_to_matrix_backward,
)
from conftest import central_difference, assert_grad_close


def test_normalize_unit():
    q = np.array([[2.0, 0.0, 0.0, 0.0]])
    assert np.allclose(quat_normalize(q), [[1.0, 0.0, 0.0, 0.0]])


def test_normalize_zero_raises():
    with pytest.raises(FloatingPointError, match="index 1"):
        quat_normalize(np.array([[1.0, 0, 0, 0], [0.0, 0, 0, 0]]))


def test_quat_to_matrix_identity():
    m = quat_to_matrix(np.array([[1.0, 0.0, 0.0, 0.0]]))
    assert np.allclose(m[0], np.eye(3))


def test_quat_matrix_round_trip(rng):
    q = rng.normal(size=(50, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    m = quat_to_matrix(q)
    q2 = matrix_to_quat(m)
    q2 /= np.linalg.norm(q2, axis=-1, keepdims=True)
    # round trip recovers the quaternion up to sign
    dot = np.abs(np.sum(q * q2, axis=-1))
    assert np.all(dot > 1.0 - 1e-12)


def test_quat_multiply_identity(rng):
    q = rng.normal(size=(10, 4))
    ident = np.tile([1.0, 0.0, 0.0, 0.0], (10, 1))
    assert np.allclose(quat_multiply(ident, q), q)
    assert np.allclose(quat_multiply(q, ident), q)


def test_quat_multiply_matches_rotation_composition(rng):
    a = rng.normal(size=(20, 4))
    a /= np.linalg.norm(a, axis=-1, keepdims=True)
    b = rng.normal(size=(20, 4))
    b /= np.linalg.norm(b, axis=-1, keepdims=True)
    ab = quat_multiply(a, b)
    assert np.allclose(quat_to_matrix(ab), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


def test_quat_to_matrix_backward(rng):
    q = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 3, 3))

    def f(qq):
        return float(np.sum(quat_to_matrix(qq) * w))

    analytic = quat_to_matrix_backward(q, w)
    numeric = central_difference(f, q.copy())
    assert_grad_close(analytic, numeric)


def test_quat_normalize_backward(rng):
    q = rng.normal(size=(4, 4)) + 2.0
    w = rng.normal(size=(4, 4))

    def f(qq):
        return float(np.sum((qq / np.linalg.norm(qq, axis=-1, keepdims=True)) * w))

    analytic = quat_normalize_backward(q, w)
    numeric = central_difference(f, q.copy())
    assert_grad_close(analytic, numeric)


def test_quat_multiply_backward_right(rng):
    a = rng.normal(size=(5, 4))
    b = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, 4))

    def f(bb):
        return float(np.sum(quat_multiply(a, bb) * w))

    analytic = quat_multiply_backward_right(a, w)
    numeric = central_difference(f, b.copy())
    assert_grad_close(analytic, numeric)


def test_axis_angle_zero():
    assert np.allclose(axis_angle_to_matrix(np.zeros(3)), np.eye(3))


def test_axis_angle_quarter_turn():
    m = axis_angle_to_matrix(np.array([0.0, 0.0, np.pi / 2.0]))
    assert np.allclose(m @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)
