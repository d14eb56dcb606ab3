import numpy as np
import pytest

from aeguard.data import LabeledDataset, make_clusters
from aeguard.errors import ConfigError, DataError, NumericError, ShapeError
from aeguard.nn import (
    Conv2d, Dense, Flatten, MaxPool2d, Network, ReLU, TrainConfig, build_network, forward,
    forward_batch, forward_with_capture, loss_and_grads, softmax_cross_entropy, train_classifier,
)
from aeguard.tensor import Rng
from oracles import central_difference, conv2d_loops, dense_relu_chain, grads_close, maxpool_loops


def test_identity_dense_network():
    net = Network((3,), [Dense(3, 3, np.eye(3), np.zeros(3))])
    x = np.array([0.5, -2.0, 7.0])
    np.testing.assert_array_equal(forward(net, x), x)


def test_relu_definition():
    net = Network((2,), [ReLU()])
    assert forward(net, np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]


def test_hand_mlp_matches_matrix_chain(hand_mlp):
    net, (w1, b1, w2, b2) = hand_mlp
    x = np.array([0.7, -0.3])
    want = dense_relu_chain(x, [(w1.tolist(), b1, True), (w2.tolist(), b2, False)])
    np.testing.assert_allclose(forward(net, x), want, rtol=0, atol=1e-12)


def test_forward_is_pure(hand_mlp):
    net, _ = hand_mlp
    x = np.array([1.5, 0.25])
    assert forward(net, x).tobytes() == forward(net, x).tobytes()


def test_forward_shape_error_names_layer(hand_mlp):
    net, _ = hand_mlp
    with pytest.raises(ShapeError, match="hidden"):
        forward(net, np.zeros(3))


def test_capture_examples(hand_mlp):
    net, (w1, b1, _, _) = hand_mlp
    x = np.array([0.7, -0.3])
    logits, trace = forward_with_capture(net, x, [])
    assert trace.points == []
    assert logits.tobytes() == forward(net, x).tobytes()

    logits, trace = forward_with_capture(net, x, ["out"])
    np.testing.assert_array_equal(trace["out"], logits.reshape(-1))

    _, trace = forward_with_capture(net, x, ["hidden"])
    np.testing.assert_allclose(trace["hidden"], dense_relu_chain(x, [(w1.tolist(), b1, True)]), atol=1e-12)


def test_capture_order_and_unknown_layer(hand_mlp):
    net, _ = hand_mlp
    _, trace = forward_with_capture(net, np.ones(2), ["out", "hidden"])
    assert trace.points == ["hidden", "out"]
    with pytest.raises(ConfigError):
        forward_with_capture(net, np.ones(2), ["nope"])


def test_capture_never_perturbs_logits(rng):
    net = build_network((1, 8, 8), [
        {"kind": "conv2d", "out_ch": 3, "kernel": 3}, {"kind": "relu"}, {"kind": "maxpool2d", "window": 2},
        {"kind": "flatten"}, {"kind": "dense", "out": 10}, {"kind": "relu"}, {"kind": "dense", "out": 4},
    ], rng)
    xs = rng.normal((20, 1, 8, 8))
    for x in xs:
        plain = forward(net, x)
        for points in ([], ["conv2d0"], ["dense4", "flatten3"], list(net.names)):
            logits, _ = forward_with_capture(net, x, points)
            assert logits.tobytes() == plain.tobytes()


def test_network_shape_composition():
    with pytest.raises(ShapeError):
        Network((4,), [Dense(4, 3), Dense(2, 2)])
    with pytest.raises(ShapeError):
        Network((4,), [Dense(4, 3)], num_classes=5)
    with pytest.raises(ConfigError):
        Network((4,), [Dense(4, 4), Dense(4, 2)], ["a", "a"])
    with pytest.raises(ShapeError):
        Dense(3, 2, np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        Conv2d(1, 2, 3, weight=np.zeros((2, 1, 2, 2)))


# -- conv / pool against loops -----------------------------------------------

@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_six_loop_oracle(stride):
    for seed in range(10):
        r = Rng(seed)
        layer = Conv2d(2, 3, 3, stride, r.normal((3, 2, 3, 3)), r.normal(3))
        x = r.normal((2, 2, 7, 6))
        np.testing.assert_allclose(layer.forward(x), conv2d_loops(x, layer.weight, layer.bias, stride),
                                   rtol=0, atol=1e-10)


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 1), (2, 1)])
def test_maxpool_matches_loops(window, stride, rng):
    x = rng.normal((2, 3, 7, 7))
    np.testing.assert_array_equal(MaxPool2d(window, stride).forward(x), maxpool_loops(x, window, stride))


# -- gradients vs central differences ----------------------------------------

def _layer_gradcheck(layer, x, r):
    y = layer.forward(x)
    proj = r.normal(y.shape)

    def f():
        return float(np.sum(proj * layer.forward(x)))

    gx, gp = layer.backward(x, y, proj)
    ok = grads_close(gx, central_difference(f, x))
    for name in layer.param_names:
        ok &= grads_close(gp[name], central_difference(f, getattr(layer, name)))
    return ok


def _away_from_zero(a, eps=1e-3):
    return np.where(np.abs(a) < eps, eps * np.sign(a) + eps * (a == 0), a)


@pytest.mark.parametrize("kind", ["dense", "relu", "conv2d", "maxpool2d", "flatten"])
def test_layer_gradients(kind):
    for seed in range(5):
        r = Rng(1000 + seed)
        if kind == "dense":
            layer, x = Dense(5, 4, r.normal((4, 5)), r.normal(4)), r.normal((3, 5))
        elif kind == "relu":
            layer, x = ReLU(), _away_from_zero(r.normal((3, 6)))
        elif kind == "conv2d":
            layer, x = Conv2d(2, 3, 3, 2, r.normal((3, 2, 3, 3)), r.normal(3)), r.normal((2, 2, 7, 7))
        elif kind == "maxpool2d":
            layer, x = MaxPool2d(2, 2), r.normal((2, 2, 6, 6))
        else:
            layer, x = Flatten(), r.normal((2, 2, 3, 3))
        assert _layer_gradcheck(layer, x, r), f"{kind} seed {seed}"


def test_network_gradient_through_softmax_ce(rng):
    net = build_network((1, 6, 6), [
        {"kind": "conv2d", "out_ch": 2, "kernel": 3}, {"kind": "relu"}, {"kind": "maxpool2d", "window": 2},
        {"kind": "flatten"}, {"kind": "dense", "out": 5}, {"kind": "relu"}, {"kind": "dense", "out": 3},
    ], rng)
    x, y = rng.normal((4, 1, 6, 6)), np.array([0, 2, 1, 2])
    _, grads, _ = loss_and_grads(net, x, y, softmax_cross_entropy)
    for layer, g in zip(net.layers, grads):
        for name in layer.param_names:
            num = central_difference(lambda: loss_and_grads(net, x, y, softmax_cross_entropy)[0],
                                     getattr(layer, name))
            assert grads_close(g[name], num)


# -- training -----------------------------------------------------------------

def _blobs(seed=0, n=100):
    return make_clusters(Rng(seed), 2, 2, n, 6.0)


def _mlp(seed=1):
    return build_network((2,), [{"kind": "dense", "out": 8}, {"kind": "relu"}, {"kind": "dense", "out": 2}], Rng(seed))


def test_zero_learning_rate_leaves_parameters(rng):
    net = _mlp()
    trained, hist = train_classifier(net, _blobs(), TrainConfig(epochs=4, lr=0.0, batch_size=16), rng)
    for a, b in zip(net.layers, trained.layers):
        for name in a.param_names:
            assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    np.testing.assert_allclose(hist.epoch_losses, hist.epoch_losses[0], rtol=1e-12)


def test_separable_blobs_reach_high_accuracy(rng):
    from sklearn.linear_model import LogisticRegression

    data = _blobs()
    # oracle: the task is linearly separable enough for a linear model first
    oracle = LogisticRegression().fit(data.inputs, data.labels)
    assert oracle.score(data.inputs, data.labels) >= 0.99
    _, hist = train_classifier(_mlp(), data, TrainConfig(epochs=50, lr=0.05, batch_size=16), rng)
    assert hist.train_accuracy >= 0.99
    assert hist.epoch_losses[-1] < hist.epoch_losses[0]


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=3, lr=0.05, batch_size=8)
    a, _ = train_classifier(_mlp(), _blobs(), cfg, Rng(5))
    b, _ = train_classifier(_mlp(), _blobs(), cfg, Rng(5))
    assert all(np.array_equal(la.weight, lb.weight) for la, lb in zip(a.layers, b.layers) if la.param_names)


def test_training_errors(rng):
    data = _blobs()
    bad = LabeledDataset(data.inputs, np.where(data.labels == 1, 2, 0))
    with pytest.raises(DataError):
        train_classifier(_mlp(), bad, TrainConfig(epochs=1), rng)
    with pytest.raises(ConfigError):
        train_classifier(_mlp(), data, TrainConfig(epochs=0), rng)
    with pytest.raises(ConfigError):
        train_classifier(_mlp(), data, TrainConfig(batch_size=0), rng)
    huge = LabeledDataset(data.inputs * 1e200, data.labels)
    with np.errstate(all="ignore"), pytest.raises(NumericError, match=r"epoch 0, batch \d+"):
        train_classifier(_mlp(), huge, TrainConfig(epochs=1, lr=1.0), rng)


def test_forward_batch_matches_rows(hand_mlp):
    net, _ = hand_mlp
    xs = Rng(3).normal((5, 2))
    np.testing.assert_allclose(forward_batch(net, xs), [forward(net, x) for x in xs], rtol=0, atol=1e-12)
