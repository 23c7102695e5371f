import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corerl.nn import (AdamState, DenseNet, Layer, adam_step, grad_check, load_tensors, logsumexp,
                       save_tensors, softmax)


def jitter_biases(net, rng):
    # zero biases put many pre-activations exactly on the relu kink, where
    # central differences are meaningless
    for p_name, p in net.params().items():
        if p_name.endswith(".b") or p_name.endswith("bn_shift"):
            p[...] = rng.normal(0, 0.1, p.shape)


def test_identity_layer():
    net = DenseNet([Layer(np.eye(3), np.zeros(3), "linear")])
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(net(x), x)


def test_relu():
    net = DenseNet([Layer(np.eye(2), np.zeros(2), "relu")])
    assert net(np.array([[-1.0, 2.0]])).tolist() == [[0.0, 2.0]]
    _, cache = net.forward(np.array([[-1.0, 2.0]]))
    _, g_in = net.backward(cache, np.ones((1, 2)))
    assert g_in.tolist() == [[0.0, 1.0]]


def test_linear_weight_gradient():
    rng = np.random.default_rng(0)
    net = DenseNet([Layer(rng.normal(size=(3, 2)), np.zeros(2), "linear")])
    x, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    _, cache = net.forward(x)
    grads, _ = net.backward(cache, g)
    assert np.allclose(grads["0.W"], x.T @ g)


def test_dropout_mask_deterministic():
    net = DenseNet.mlp([4, 32, 2], np.random.default_rng(0), dropout=0.5)
    x = np.ones((3, 4))
    a, _ = net.forward(x, "train", np.random.default_rng(5))
    b, _ = net.forward(x, "train", np.random.default_rng(5))
    assert np.array_equal(a, b)
    assert np.array_equal(net(x), net(x))


def test_dropout_needs_rng():
    net = DenseNet.mlp([2, 4, 1], np.random.default_rng(0), dropout=0.2)
    with pytest.raises(ValueError, match="rng"):
        net.forward(np.ones((2, 2)), "train")


def test_dim_mismatch_and_foreign_cache():
    rng = np.random.default_rng(0)
    a = DenseNet.mlp([3, 4, 2], rng)
    b = DenseNet.mlp([3, 4, 2], rng)
    with pytest.raises(ValueError, match="input"):
        a(np.ones((1, 4)))
    _, cache = a.forward(np.ones((1, 3)))
    with pytest.raises(ValueError, match="cache"):
        b.backward(cache, np.ones((1, 2)))


def test_non_chaining_layers_rejected():
    with pytest.raises(ValueError, match="chain"):
        DenseNet([Layer(np.ones((2, 3)), np.zeros(3)), Layer(np.ones((4, 1)), np.zeros(1))])


def test_infer_mode_uses_running_stats():
    net = DenseNet.mlp([2, 4, 1], np.random.default_rng(0), batch_norm=True)
    x = np.random.default_rng(1).normal(size=(8, 2))
    before = net(x)
    net.forward(x, "train", np.random.default_rng(0))
    after = net(x)
    assert not np.array_equal(before, after)
    assert np.array_equal(after, net(x))


@pytest.mark.parametrize("batch_norm,dropout", [(False, 0.0), (True, 0.0), (True, 0.3)])
def test_two_layer_grad_check(batch_norm, dropout):
    rng = np.random.default_rng(2)
    net = DenseNet.mlp([3, 5, 4, 2], rng, batch_norm=batch_norm, dropout=dropout)
    jitter_biases(net, rng)
    x, target = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))

    def loss_fn():
        out, cache = net.forward(x, "train", np.random.default_rng(9))
        diff = out - target
        grads, _ = net.backward(cache, 2 * diff / diff.size)
        return float((diff ** 2).mean()), grads

    report = grad_check(loss_fn, net.params())
    assert report.passed, report


def test_grad_check_square():
    x = np.array([3.0])
    report = grad_check(lambda: (float(x[0] ** 2), {"x": 2 * x.copy()}), {"x": x})
    assert report.max_rel_error < 1e-6
    bad = grad_check(lambda: (float(x[0] ** 2), {"x": 3 * x.copy()}), {"x": x})
    assert not bad.passed and bad.worst_param == "x"


def test_adam_examples():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState(lr=0.001))
    assert p["w"][0] == pytest.approx(-0.001, rel=1e-4)
    p = {"w": np.array([1.0])}
    adam_step(p, {"w": np.array([0.0])}, AdamState(lr=0.01, weight_decay=0.1))
    assert p["w"][0] == pytest.approx(0.999, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.integers(1, 5))
def test_adam_zero_grad_identity(values, steps):
    p = {"w": np.array(values)}
    before = p["w"].copy()
    state = AdamState(lr=0.1)
    for _ in range(steps):
        adam_step(p, {"w": np.zeros_like(before)}, state)
    assert np.array_equal(p["w"], before)
    assert state.t == steps


def test_adam_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(lr=0.1))


def test_tensor_container_round_trip(tmp_path):
    net = DenseNet.mlp([3, 4, 2], np.random.default_rng(0), batch_norm=True)
    save_tensors(tmp_path / "n.jsonl", net.state(), {"kind": "test"})
    tensors, meta = load_tensors(tmp_path / "n.jsonl")
    assert meta == {"kind": "test"}
    other = DenseNet.mlp([3, 4, 2], np.random.default_rng(1), batch_norm=True)
    other.load_state(tensors)
    x = np.random.default_rng(2).normal(size=(5, 3))
    assert np.array_equal(net(x), other(x))


def test_softmax_logsumexp_stable():
    x = np.array([[1000.0, 1000.0], [0.0, 0.0]])
    assert np.allclose(logsumexp(x), [1000 + np.log(2), np.log(2)])
    assert np.allclose(softmax(x), 0.5)
