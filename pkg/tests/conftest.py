import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def central_difference(f, x, step=1e-6):
    """Central finite differences of scalar f over a flat copy of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * step)
    return grad.reshape(x.shape)


def assert_grad_close(analytic, numeric, rel_tol=1e-5, abs_floor=1e-8):
    """Entrywise: pass if |a - n| <= abs_floor or relative error < rel_tol."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = (diff > abs_floor) & (diff > rel_tol * scale)
    if np.any(bad):
        i = int(np.argmax(np.where(bad, diff / np.maximum(scale, 1e-300), 0.0)))
        raise AssertionError(
            f"gradient mismatch at flat index {i}: analytic={analytic[i]!r} "
            f"numeric={numeric[i]!r} ({int(bad.sum())} of {bad.size} entries failing)"
        )


def max_grad_error(analytic, numeric, abs_floor=1e-8):
    """Largest relative error over entries exceeding the absolute floor."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= abs_floor, 0.0, diff / np.maximum(scale, 1e-300))
    return float(rel.max()) if rel.size else 0.0
