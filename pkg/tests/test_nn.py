"""Gradient and kernel tests for the numeric layer."""

import numpy as np
import pytest

from gensfc import nn
from gensfc.errors import StructuralError

RNG = np.random.default_rng(1234)
TOL = 1e-4


def random_graph(n, p=0.5, rng=RNG):
    a = (rng.random((n, n)) < p).astype(float)
    a = np.triu(a, 1)
    a = a + a.T
    return a


# ---------------------------------------------------------------------------
# normalized adjacency


def test_normalized_adjacency_isolated_node():
    assert np.array_equal(nn.normalized_adjacency(np.zeros((1, 1))), [[1.0]])


def test_normalized_adjacency_pair():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(nn.normalized_adjacency(a), 0.5)


def test_normalized_adjacency_regular_graph_row_sums():
    # 4-cycle: 2-regular
    a = np.zeros((4, 4))
    for i in range(4):
        a[i, (i + 1) % 4] = a[(i + 1) % 4, i] = 1.0
    out = nn.normalized_adjacency(a)
    assert np.allclose(out.sum(axis=1), 1.0)


def test_normalized_adjacency_symmetric_and_contractive():
    for trial in range(5):
        a = random_graph(6, rng=np.random.default_rng(trial))
        out = nn.normalized_adjacency(a)
        assert np.allclose(out, out.T)
        # spectral radius via power iteration
        v = np.ones(6) / np.sqrt(6)
        for _ in range(200):
            v = out @ v
            v /= np.linalg.norm(v)
        radius = abs(v @ out @ v)
        assert radius <= 1.0 + 1e-9


def test_normalized_adjacency_rejects_asymmetric():
    with pytest.raises(StructuralError):
        nn.normalized_adjacency(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(StructuralError):
        nn.normalized_adjacency(np.eye(2))


# ---------------------------------------------------------------------------
# GCN forward/backward


def test_gcn_identity_weights_single_node():
    x = np.array([[-1.0, 2.0, 0.5]])
    out, _ = nn.gcn_forward([np.eye(3)], np.array([[1.0]]), x)
    assert np.array_equal(out, np.maximum(x, 0.0))


def test_gcn_zero_weights():
    x = RNG.standard_normal((4, 3))
    adj = nn.normalized_adjacency(random_graph(4))
    out, _ = nn.gcn_forward([np.zeros((3, 5))], adj, x)
    assert np.all(out == 0.0)


def test_gcn_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    adj = nn.normalized_adjacency(random_graph(5, rng=rng))
    x = rng.standard_normal((5, 4))
    target = rng.standard_normal((5, 3))
    params = {
        "w0": nn.xavier_uniform((4, 6), rng),
        "w1": nn.xavier_uniform((6, 3), rng),
    }

    def loss_fn(p):
        out, cache = nn.gcn_forward([p["w0"], p["w1"]], adj, x)
        diff = out - target
        loss = 0.5 * float((diff * diff).sum())
        wgrads, _ = nn.gcn_backward(cache, adj, diff)
        return loss, {"w0": wgrads[0], "w1": wgrads[1]}

    assert nn.finite_diff_check(loss_fn, params, seed=0) < TOL


def test_gcn_input_gradient():
    rng = np.random.default_rng(8)
    adj = nn.normalized_adjacency(random_graph(4, rng=rng))
    w = nn.xavier_uniform((3, 3), rng)
    x0 = rng.standard_normal((4, 3))
    params = {"x": x0}

    def loss_fn(p):
        out, cache = nn.gcn_forward([w], adj, p["x"])
        loss = float(out.sum())
        _, dx = nn.gcn_backward(cache, adj, np.ones_like(out))
        return loss, {"x": dx}

    assert nn.finite_diff_check(loss_fn, params, seed=1) < TOL


# ---------------------------------------------------------------------------
# pooling and dense


def test_mean_pool_basic():
    row = np.array([[1.0, 2.0, 3.0]])
    assert np.array_equal(nn.mean_pool(row), row[0])
    same = np.tile(row, (5, 1))
    assert np.allclose(nn.mean_pool(same), row[0])


def test_mean_pool_gradient():
    rng = np.random.default_rng(9)
    h0 = rng.standard_normal((6, 3))
    coeff = rng.standard_normal(3)
    params = {"h": h0}

    def loss_fn(p):
        pooled = nn.mean_pool(p["h"])
        loss = float(pooled @ coeff)
        return loss, {"h": nn.mean_pool_backward(coeff, p["h"].shape[0])}

    assert nn.finite_diff_check(loss_fn, params, seed=2) < 1e-8


def test_dense_gradients():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((7, 4))
    target = rng.standard_normal((7, 2))
    params = {"w": nn.xavier_uniform((4, 2), rng), "b": rng.standard_normal(2)}

    def loss_fn(p):
        out, cache = nn.dense_forward(x, p["w"], p["b"])
        diff = out - target
        loss = 0.5 * float((diff * diff).sum())
        dw, db, _ = nn.dense_backward(cache, diff)
        return loss, {"w": dw, "b": db}

    assert nn.finite_diff_check(loss_fn, params, seed=3) < TOL


# ---------------------------------------------------------------------------
# softmax family


def test_softmax_uniform_logits():
    lp = nn.log_softmax(np.zeros(5))
    assert np.allclose(np.exp(lp), 0.2)
    assert np.exp(nn.log_softmax(RNG.standard_normal((3, 8)))).sum(axis=1) == pytest.approx(
        np.ones(3)
    )


def test_log_softmax_gradient():
    rng = np.random.default_rng(11)
    upstream = rng.standard_normal(6)
    params = {"z": rng.standard_normal(6)}

    def loss_fn(p):
        lp = nn.log_softmax(p["z"])
        loss = float(lp @ upstream)
        return loss, {"z": nn.log_softmax_backward(lp, upstream)}

    assert nn.finite_diff_check(loss_fn, params, seed=4) < TOL


def test_softmax_xent_gradient_and_value():
    rng = np.random.default_rng(12)
    targets = np.array([2, 0, 1])
    params = {"z": rng.standard_normal((3, 4))}

    def loss_fn(p):
        loss, grad = nn.softmax_xent(p["z"], targets)
        return loss, {"z": grad}

    loss, _ = nn.softmax_xent(np.zeros((3, 4)), targets)
    assert loss == pytest.approx(np.log(4.0))
    assert nn.finite_diff_check(loss_fn, params, seed=5) < TOL


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_grads_leave_params():
    bundle = nn.ParamBundle(params={"w": np.array([1.0, -2.0])})
    before = bundle["w"].copy()
    bundle.adam_step({"w": np.zeros(2)}, lr=0.1)
    assert np.allclose(bundle["w"], before, atol=1e-12)


def test_adam_reduces_quadratic():
    bundle = nn.ParamBundle(params={"w": np.array([3.0])})
    for _ in range(50):
        grad = 2.0 * bundle["w"]
        bundle.adam_step({"w": grad}, lr=0.1)
    assert abs(bundle["w"][0]) < 3.0


def test_adam_scalar_reference_step():
    # by-hand Adam step: w=1, g=0.5, lr=0.1, beta1=0.9, beta2=0.999
    bundle = nn.ParamBundle(params={"w": np.array([1.0])})
    bundle.adam_step({"w": np.array([0.5])}, lr=0.1)
    m_hat = (0.1 * 0.5) / (1 - 0.9)
    v_hat = (0.001 * 0.25) / (1 - 0.999)
    expected = 1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert bundle["w"][0] == pytest.approx(expected, rel=1e-12)


def test_param_bundle_rejects_duplicates():
    bundle = nn.ParamBundle()
    bundle.add("w", np.zeros(2))
    with pytest.raises(ValueError):
        bundle.add("w", np.zeros(2))


# ---------------------------------------------------------------------------
# finite-diff checker self-tests


def test_finite_diff_linear_loss_is_exact():
    coeff = np.array([1.5, -2.0, 0.5])
    params = {"w": np.array([0.3, 0.7, -0.2])}

    def loss_fn(p):
        return float(p["w"] @ coeff), {"w": coeff.copy()}

    assert nn.finite_diff_check(loss_fn, params, seed=6) < 1e-9


def test_finite_diff_flags_corrupted_gradient():
    coeff = np.array([1.5, -2.0, 0.5])
    params = {"w": np.array([0.3, 0.7, -0.2])}

    def loss_fn(p):
        wrong = coeff.copy()
        wrong[1] *= 1.5  # deliberate corruption
        return float(p["w"] @ coeff), {"w": wrong}

    assert nn.finite_diff_check(loss_fn, params, seed=7) > 0.1
