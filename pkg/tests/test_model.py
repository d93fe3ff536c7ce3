import numpy as np
import pytest

from headsplat.gaussians import DeltaSet, GaussianGrad, GaussianSet
from headsplat.model import (
    AvatarModel,
    MlpWeights,
    activate,
    activate_backward,
    blend,
    blend_backward,
    logit,
    map_params,
    mlp_backward,
    orthogonality_metric,
)
from headsplat.binding import GaussianBindings
from conftest import central_difference, assert_grad_close


def random_gaussians(rng, n):
    return GaussianSet(
        rng.normal(size=(n, 3)),
        rng.normal(size=(n, 4)) + np.array([2.0, 0, 0, 0]),
        rng.normal(scale=0.5, size=(n, 3)),
        rng.normal(size=n),
        rng.normal(size=(n, 3)),
    )


def random_deltas(rng, n, k):
    return [
        DeltaSet(rng.normal(scale=0.1, size=(n, 3)),
                 rng.normal(scale=0.1, size=(n, 4)),
                 rng.normal(scale=0.1, size=(n, 3)))
        for _ in range(k)
    ]


def dummy_bindings(n):
    return GaussianBindings(np.zeros(n, dtype=np.int64), np.tile([1.0, 0.0, 0.0], (n, 1)))


def random_model(rng, n=7, k=5, h=4, hidden=16):
    mlp = MlpWeights(
        rng.normal(size=(hidden, h)), rng.normal(size=hidden),
        rng.normal(size=(hidden, hidden)), rng.normal(size=hidden),
        rng.normal(size=(k, hidden)), rng.normal(size=k),
    )
    return AvatarModel(random_gaussians(rng, n), random_deltas(rng, n, k), mlp, dummy_bindings(n))


# ---------------------------------------------------------------- map_params

def test_map_params_zero_output_layer(rng):
    mlp = MlpWeights.create(5, 3, hidden_dim=16, rng=rng)
    psi, _ = map_params(mlp, rng.normal(size=5))
    assert np.array_equal(psi, np.zeros(3))


def test_map_params_zero_input_gives_bias(rng):
    hidden = 8
    mlp = MlpWeights(
        rng.normal(size=(hidden, 4)), np.zeros(hidden),
        rng.normal(size=(hidden, hidden)), np.zeros(hidden),
        rng.normal(size=(2, hidden)), np.array([0.3, -0.7]),
    )
    psi, _ = map_params(mlp, np.zeros(4))
    assert np.array_equal(psi, mlp.b3)


def test_map_params_matches_dense_reimplementation():
    rng = np.random.default_rng(42)
    mlp = MlpWeights(
        rng.normal(size=(16, 6)), rng.normal(size=16),
        rng.normal(size=(16, 16)), rng.normal(size=16),
        rng.normal(size=(3, 16)), rng.normal(size=3),
    )
    theta = rng.normal(size=6)
    psi, _ = map_params(mlp, theta)
    # independent straightforward re-evaluation
    h1 = np.maximum(mlp.w1.dot(theta) + mlp.b1, 0.0)
    h2 = np.maximum(mlp.w2.dot(h1) + mlp.b2, 0.0)
    expected = mlp.w3.dot(h2) + mlp.b3
    assert np.allclose(psi, expected, rtol=0, atol=1e-14)


def test_map_params_dimension_mismatch(rng):
    mlp = MlpWeights.create(5, 3, hidden_dim=16, rng=rng)
    with pytest.raises(ValueError):
        map_params(mlp, np.zeros(4))


# --------------------------------------------------------------------- blend

def test_blend_zero_weights_copies_base(rng):
    model = random_model(rng)
    out = blend(model, np.zeros(model.num_blendshapes))
    for name in ("position", "rotation", "scale", "opacity", "color"):
        assert np.array_equal(getattr(out, name), getattr(model.base, name))


def test_blend_basis_selection_exact(rng):
    model = random_model(rng)
    for k in range(model.num_blendshapes):
        e_k = np.zeros(model.num_blendshapes)
        e_k[k] = 1.0
        out = blend(model, e_k)
        assert np.array_equal(out.position, model.base.position + model.deltas[k].position)
        assert np.array_equal(out.rotation, model.base.rotation + model.deltas[k].rotation)
        assert np.array_equal(out.color, model.base.color + model.deltas[k].color)
        assert np.array_equal(out.scale, model.base.scale)
        assert np.array_equal(out.opacity, model.base.opacity)


def test_blend_matches_double_loop_oracle(rng):
    model = random_model(rng, n=7, k=5)
    psi = rng.normal(size=5)
    out = blend(model, psi)
    for n in range(model.count):
        for name in ("position", "rotation", "color"):
            acc = getattr(model.base, name)[n].copy()
            for k in range(5):
                acc = acc + psi[k] * getattr(model.deltas[k], name)[n]
            assert np.array_equal(getattr(out, name)[n], acc)


def test_blend_linearity(rng):
    model = random_model(rng)
    k = model.num_blendshapes
    psi1, psi2 = rng.normal(size=k), rng.normal(size=k)
    a, b = 0.37, -1.4
    lhs = blend(model, a * psi1 + b * psi2)
    s1, s2 = blend(model, psi1), blend(model, psi2)
    for name in ("position", "rotation", "color"):
        rhs = (a * getattr(s1, name) + b * getattr(s2, name)
               - (a + b - 1.0) * getattr(model.base, name))
        assert np.allclose(getattr(lhs, name), rhs, rtol=0, atol=1e-12)


def test_blend_psi_length_mismatch(rng):
    model = random_model(rng)
    with pytest.raises(ValueError):
        blend(model, np.zeros(model.num_blendshapes + 1))


# ------------------------------------------------------------------ activate

def test_activate_fixed_points():
    raw = GaussianSet(
        np.zeros((1, 3)), np.array([[2.0, 0, 0, 0]]), np.zeros((1, 3)),
        np.zeros(1), np.zeros((1, 3)),
    )
    act = activate(raw)
    assert act.opacity[0] == 0.5
    assert np.array_equal(act.scale[0], np.ones(3))
    assert np.array_equal(act.rotation[0], [1.0, 0, 0, 0])
    assert np.allclose(act.color[0], 0.5)


def test_activate_zero_quaternion_reports_index(rng):
    raw = random_gaussians(rng, 3)
    raw.rotation[2] = 0.0
    with pytest.raises(FloatingPointError, match="index 2"):
        activate(raw)


def test_activate_output_always_valid(rng):
    for trial in range(20):
        n = 12
        raw = GaussianSet(
            rng.normal(scale=10, size=(n, 3)),
            rng.normal(scale=5, size=(n, 4)) + 0.1,
            rng.uniform(-20, 5, size=(n, 3)),
            rng.uniform(-40, 40, size=n),
            rng.uniform(-40, 40, size=(n, 3)),
        )
        act = activate(raw)
        assert np.all(np.abs(np.linalg.norm(act.rotation, axis=-1) - 1.0) < 1e-6)
        assert np.all((act.opacity >= 0) & (act.opacity <= 1))
        assert np.all((act.color >= 0) & (act.color <= 1))
        assert np.all(act.scale > 0)


# ----------------------------------------------------------------- backwards

def test_blend_backward_zero_psi(rng):
    model = random_model(rng)
    n = model.count
    grad_out = GaussianGrad(
        rng.normal(size=(n, 3)), rng.normal(size=(n, 4)), rng.normal(size=(n, 3)),
        rng.normal(size=n), rng.normal(size=(n, 3)),
    )
    g_base, g_deltas, g_psi = blend_backward(model, np.zeros(model.num_blendshapes), grad_out)
    assert np.array_equal(g_base.position, grad_out.position)
    for gd in g_deltas:
        assert not gd.position.any() and not gd.rotation.any() and not gd.color.any()


def test_blend_backward_single_unit(rng):
    model = random_model(rng, k=1)
    n = model.count
    grad_out = GaussianGrad(
        rng.normal(size=(n, 3)), rng.normal(size=(n, 4)), rng.normal(size=(n, 3)),
        rng.normal(size=n), rng.normal(size=(n, 3)),
    )
    _, g_deltas, _ = blend_backward(model, np.ones(1), grad_out)
    assert np.array_equal(g_deltas[0].position, grad_out.position)
    assert np.array_equal(g_deltas[0].rotation, grad_out.rotation)
    assert np.array_equal(g_deltas[0].color, grad_out.color)


def test_blend_backward_finite_differences(rng):
    model = random_model(rng, n=4, k=3)
    n, k = model.count, 3
    psi = rng.normal(size=k)
    w = {name: rng.normal(size=getattr(blend(model, psi), name).shape)
         for name in ("position", "rotation", "scale", "opacity", "color")}

    def loss_of(model_, psi_):
        out = blend(model_, psi_)
        return sum(float(np.sum(getattr(out, name) * w[name])) for name in w)

    grad_out = GaussianGrad(w["position"], w["rotation"], w["scale"], w["opacity"], w["color"])
    g_base, g_deltas, g_psi = blend_backward(model, psi, grad_out)

    numeric = central_difference(lambda p: loss_of(model, p), psi.copy())
    assert_grad_close(g_psi, numeric)

    numeric = central_difference(
        lambda x: loss_of(
            AvatarModel(GaussianSet(x, model.base.rotation, model.base.scale,
                                    model.base.opacity, model.base.color),
                        model.deltas, model.mlp, model.bindings),
            psi),
        model.base.position.copy())
    assert_grad_close(g_base.position, numeric)

    numeric = central_difference(
        lambda x: loss_of(
            AvatarModel(model.base,
                        [DeltaSet(x, model.deltas[0].rotation, model.deltas[0].color)]
                        + model.deltas[1:],
                        model.mlp, model.bindings),
            psi),
        model.deltas[0].position.copy())
    assert_grad_close(g_deltas[0].position, numeric)


def test_mlp_backward_zero_grad(rng):
    mlp = MlpWeights.create(4, 2, hidden_dim=8, rng=rng)
    theta = rng.normal(size=4)
    _, cache = map_params(mlp, theta)
    g, g_theta = mlp_backward(mlp, cache, np.zeros(2))
    assert not g.w1.any() and not g.w3.any() and not g_theta.any()


def test_mlp_backward_linear_regime_outer_product(rng):
    h, hidden, k = 3, 8, 2
    w1 = np.zeros((hidden, h))
    w1[:h, :h] = np.eye(h)
    w2 = np.zeros((hidden, hidden))
    w2[:h, :h] = np.eye(h)
    mlp = MlpWeights(w1, np.zeros(hidden), w2, np.zeros(hidden),
                     rng.normal(size=(k, hidden)), rng.normal(size=k))
    theta = rng.uniform(0.5, 2.0, size=h)   # strictly positive: ReLU inactive
    _, cache = map_params(mlp, theta)
    grad_psi = rng.normal(size=k)
    g, _ = mlp_backward(mlp, cache, grad_psi)
    assert np.allclose(g.w3[:, :h], np.outer(grad_psi, theta), atol=1e-14)
    assert np.array_equal(g.w3[:, h:], np.zeros((k, hidden - h)))


def test_mlp_backward_finite_differences(rng):
    mlp = MlpWeights(
        rng.normal(size=(8, 4)), rng.normal(size=8),
        rng.normal(size=(8, 8)), rng.normal(size=8),
        rng.normal(size=(3, 8)), rng.normal(size=3),
    )
    theta = rng.normal(size=4)
    w = rng.normal(size=3)

    psi, cache = map_params(mlp, theta)
    g, g_theta = mlp_backward(mlp, cache, w)

    for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
        def f(x, name=name):
            m2 = mlp.copy()
            setattr(m2, name, x)
            return float(np.dot(map_params(m2, theta)[0], w))
        numeric = central_difference(f, getattr(mlp, name).copy())
        assert_grad_close(getattr(g, name), numeric)

    numeric = central_difference(lambda t: float(np.dot(map_params(mlp, t)[0], w)), theta.copy())
    assert_grad_close(g_theta, numeric)


def test_activate_backward_finite_differences(rng):
    raw = random_gaussians(rng, 5)
    act = activate(raw)
    w = {name: rng.normal(size=getattr(act, name).shape)
         for name in ("position", "rotation", "scale", "opacity", "color")}
    grad_out = GaussianGrad(w["position"], w["rotation"], w["scale"], w["opacity"], w["color"])
    g = activate_backward(raw, act, grad_out)

    for name in ("position", "rotation", "scale", "opacity", "color"):
        def f(x, name=name):
            raw2 = raw.copy()
            setattr(raw2, name, x)
            out = activate(raw2)
            return sum(float(np.sum(getattr(out, n2) * w[n2])) for n2 in w)
        numeric = central_difference(f, getattr(raw, name).copy())
        assert_grad_close(getattr(g, name), numeric)


# ------------------------------------------------------------- orthogonality

def test_orthogonality_orthonormal_rows():
    n = 4
    deltas = []
    for k in range(3):
        d = DeltaSet.zeros(n)
        d.position[k, k % 3] = 1.0   # disjoint support: orthonormal after flatten
        deltas.append(d)
    base = GaussianSet.zeros(n)
    base.rotation[:, 0] = 1.0
    mlp = MlpWeights.create(4, 3, hidden_dim=8)
    model = AvatarModel(base, deltas, mlp, dummy_bindings(n))
    assert orthogonality_metric(model) <= 1e-6


def test_orthogonality_identical_rows():
    n = 4
    d = DeltaSet.zeros(n)
    d.position[0] = [1.0, 2.0, 3.0]
    base = GaussianSet.zeros(n)
    base.rotation[:, 0] = 1.0
    model = AvatarModel(base, [d, d.copy()], MlpWeights.create(4, 2, hidden_dim=8), dummy_bindings(n))
    # direct evaluation: VV^T - I = [[0, 1], [1, 0]], Frobenius norm sqrt(2)
    gram_dev = np.array([[0.0, 1.0], [1.0, 0.0]])
    expected = float(np.sqrt(np.sum(gram_dev * gram_dev)))
    assert abs(orthogonality_metric(model) - expected) < 1e-12


def test_orthogonality_random_model_finite(rng):
    model = random_model(rng)
    e = orthogonality_metric(model)
    assert np.isfinite(e) and e >= 0.0


def test_orthogonality_degenerate_basis_reported():
    n = 3
    base = GaussianSet.zeros(n)
    base.rotation[:, 0] = 1.0
    model = AvatarModel(base, [DeltaSet.zeros(n)], MlpWeights.create(4, 1, hidden_dim=8), dummy_bindings(n))
    with pytest.raises(ValueError, match="index 0"):
        orthogonality_metric(model)


def test_logit_inverts_sigmoid():
    assert logit(0.5) == 0.0
    assert np.isfinite(logit(1.0)) and np.isfinite(logit(0.0))
