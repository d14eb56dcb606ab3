"""Minimal feed-forward engine: layers, inference with activation capture, SGD.

Every layer works on a batch whose leading axis is the sample axis. Per-sample
shapes exclude that axis: images are (channels, height, width), vectors (dim,).
"""

import copy
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, NumericError, ShapeError
from .tensor import as_tensor


class Layer:
    kind = None
    param_names = ()

    def params(self):
        return {n: getattr(self, n) for n in self.param_names}

    def output_shape(self, in_shape):
        raise NotImplementedError

    def forward(self, x):
        raise NotImplementedError

    def backward(self, x, y, grad):
        """Return ``(grad_input, {param_name: grad_param})`` for one batch."""
        raise NotImplementedError

    def config(self):
        """Integer shape header identifying the layer (used by serialization)."""
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"
    param_names = ("weight", "bias")

    def __init__(self, in_dim, out_dim, weight=None, bias=None):
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"dense dims must be positive, got ({in_dim}, {out_dim})")
        self.weight = as_tensor(np.zeros((self.out_dim, self.in_dim)) if weight is None else weight)
        self.bias = as_tensor(np.zeros(self.out_dim) if bias is None else bias)
        if self.weight.shape != (self.out_dim, self.in_dim):
            raise ShapeError(f"dense weight must be {(self.out_dim, self.in_dim)}, got {self.weight.shape}")
        if self.bias.shape != (self.out_dim,):
            raise ShapeError(f"dense bias must be {(self.out_dim,)}, got {self.bias.shape}")

    def fan_in(self):
        return self.in_dim

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.in_dim,):
            raise ShapeError(f"expects input shape ({self.in_dim},), got {tuple(in_shape)}")
        return (self.out_dim,)

    def forward(self, x):
        return x @ self.weight.T + self.bias

    def backward(self, x, y, grad):
        return grad @ self.weight, {"weight": grad.T @ x, "bias": grad.sum(axis=0)}

    def config(self):
        return (self.in_dim, self.out_dim)


class ReLU(Layer):
    kind = "relu"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, y, grad):
        return grad * (x > 0), {}

    def config(self):
        return ()


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (math.prod(in_shape),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def backward(self, x, y, grad):
        return grad.reshape(x.shape), {}

    def config(self):
        return ()


def _windows(x, k, s):
    # (N, C, H, W) -> (N, C, Ho, Wo, k, k) strided view, no copy
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


class Conv2d(Layer):
    """Valid (unpadded) 2-D cross-correlation with square kernels."""

    kind = "conv2d"
    param_names = ("weight", "bias")

    def __init__(self, in_ch, out_ch, kernel, stride=1, weight=None, bias=None):
        self.in_ch, self.out_ch = int(in_ch), int(out_ch)
        self.kernel, self.stride = int(kernel), int(stride)
        if min(self.in_ch, self.out_ch, self.kernel, self.stride) < 1:
            raise ConfigError(f"conv2d parameters must be positive: {self.config()}")
        wshape = (self.out_ch, self.in_ch, self.kernel, self.kernel)
        self.weight = as_tensor(np.zeros(wshape) if weight is None else weight)
        self.bias = as_tensor(np.zeros(self.out_ch) if bias is None else bias)
        if self.weight.shape != wshape:
            raise ShapeError(f"conv2d weight must be {wshape}, got {self.weight.shape}")
        if self.bias.shape != (self.out_ch,):
            raise ShapeError(f"conv2d bias must be ({self.out_ch},), got {self.bias.shape}")

    def fan_in(self):
        return self.in_ch * self.kernel * self.kernel

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"expects ({self.in_ch}, H, W) input, got {tuple(in_shape)}")
        _, h, w = in_shape
        if h < self.kernel or w < self.kernel:
            raise ShapeError(f"input {tuple(in_shape)} smaller than kernel {self.kernel}")
        return (self.out_ch, (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1)

    def forward(self, x):
        win = _windows(x, self.kernel, self.stride)
        out = np.tensordot(win, self.weight, axes=([1, 4, 5], [1, 2, 3]))
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + self.bias[None, :, None, None]

    def backward(self, x, y, grad):
        k, s = self.kernel, self.stride
        win = _windows(x, k, s)
        gw = np.tensordot(grad, win, axes=([0, 2, 3], [0, 2, 3]))
        gb = grad.sum(axis=(0, 2, 3))
        ho, wo = grad.shape[2], grad.shape[3]
        gx = np.zeros_like(x)
        for i in range(k):
            for j in range(k):
                contrib = np.tensordot(grad, self.weight[:, :, i, j], axes=([1], [0]))
                gx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += contrib.transpose(0, 3, 1, 2)
        return gx, {"weight": gw, "bias": gb}

    def config(self):
        return (self.in_ch, self.out_ch, self.kernel, self.stride)


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, window, stride=None):
        self.window = int(window)
        self.stride = self.window if stride is None else int(stride)
        if self.window < 1 or self.stride < 1:
            raise ConfigError(f"maxpool2d window/stride must be positive: {self.config()}")

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"expects (C, H, W) input, got {tuple(in_shape)}")
        c, h, w = in_shape
        if h < self.window or w < self.window:
            raise ShapeError(f"input {tuple(in_shape)} smaller than window {self.window}")
        return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)

    def forward(self, x):
        return _windows(x, self.window, self.stride).max(axis=(4, 5))

    def backward(self, x, y, grad):
        # gradient routed to the first maximal element of each window
        k, s = self.window, self.stride
        ho, wo = y.shape[2], y.shape[3]
        gx = np.zeros_like(x)
        taken = np.zeros(y.shape, dtype=bool)
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(None), slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))
                hit = (x[sl] == y) & ~taken
                gx[sl] += np.where(hit, grad, 0.0)
                taken |= hit
        return gx, {}

    def config(self):
        return (self.window, self.stride)


LAYER_KINDS = {cls.kind: cls for cls in (Dense, ReLU, Conv2d, MaxPool2d, Flatten)}


class Network:
    """Ordered layer stack with unique layer names.

    ``input_shape`` is the per-sample input shape. The final layer must emit a
    vector of length ``num_classes``.
    """

    def __init__(self, input_shape, layers, names=None, num_classes=None):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = list(layers)
        if not self.layers:
            raise ConfigError("a network needs at least one layer")
        if names is None:
            names = [f"{layer.kind}{i}" for i, layer in enumerate(self.layers)]
        self.names = [str(n) for n in names]
        if len(self.names) != len(self.layers):
            raise ConfigError(f"{len(self.names)} names for {len(self.layers)} layers")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"layer names must be unique: {self.names}")

        self.shapes = []
        shape = self.input_shape
        for name, layer in zip(self.names, self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {name!r} ({layer.kind}): {e}") from None
            self.shapes.append(shape)
        if len(shape) != 1:
            raise ShapeError(f"final layer must output a vector, got shape {shape}")
        if num_classes is not None and shape[0] != num_classes:
            raise ShapeError(f"final output length {shape[0]} != num_classes {num_classes}")
        self.num_classes = shape[0]

    def __repr__(self):
        body = ", ".join(f"{n}:{l.kind}{l.config()}" for n, l in zip(self.names, self.layers))
        return f"Network(input={self.input_shape}, [{body}])"

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"unknown layer name {name!r}; known: {self.names}") from None

    def capture_index(self, name):
        """Layer whose output is recorded for capture point ``name``.

        That is the named layer itself, or the ReLU immediately after it.
        """
        i = self.index(name)
        if i + 1 < len(self.layers) and self.layers[i + 1].kind == "relu":
            return i + 1
        return i

    def capture_dim(self, name):
        return math.prod(self.shapes[self.capture_index(name)])

    def copy(self):
        return copy.deepcopy(self)


def build_network(input_shape, layer_specs, rng, names=None):
    """Build a network from dict specs, drawing He-normal weights from ``rng``.

    Specs: ``{"kind": "dense", "out": 32}``, ``{"kind": "relu"}``,
    ``{"kind": "conv2d", "out_ch": 6, "kernel": 5, "stride": 1}``,
    ``{"kind": "maxpool2d", "window": 2, "stride": 2}``, ``{"kind": "flatten"}``.
    Input dims/channels are inferred from the preceding layer. A spec may
    carry a ``"name"``.
    """
    layers, spec_names = [], []
    shape = tuple(input_shape)
    for i, spec in enumerate(layer_specs):
        kind = spec.get("kind")
        if kind == "dense":
            if len(shape) != 1:
                raise ShapeError(f"layer {i}: dense needs a vector input, got {shape}; add a flatten layer")
            layer = Dense(shape[0], spec["out"])
        elif kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"layer {i}: conv2d needs (C, H, W) input, got {shape}")
            layer = Conv2d(shape[0], spec["out_ch"], spec["kernel"], spec.get("stride", 1))
        elif kind == "maxpool2d":
            layer = MaxPool2d(spec["window"], spec.get("stride"))
        elif kind == "relu":
            layer = ReLU()
        elif kind == "flatten":
            layer = Flatten()
        else:
            raise ConfigError(f"layer {i}: unknown kind {kind!r}; expected one of {sorted(LAYER_KINDS)}")
        if layer.param_names:
            std = math.sqrt(2.0 / layer.fan_in())
            layer.weight = rng.normal(layer.weight.shape, 0.0, std)
        shape = layer.output_shape(shape)
        layers.append(layer)
        spec_names.append(spec.get("name", f"{kind}{i}"))
    return Network(input_shape, layers, names if names is not None else spec_names)


def _run(net, x, keep):
    """Run a batch through ``net``, keeping outputs of layer indices in ``keep``."""
    kept = {}
    for i, (name, layer) in enumerate(zip(net.names, net.layers)):
        x = layer.forward(x)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite activation at layer {name!r}")
        if i in keep:
            kept[i] = x
    return x, kept


def _check_batch(net, x):
    x = as_tensor(x)
    if x.shape[1:] != net.input_shape:
        raise ShapeError(
            f"layer {net.names[0]!r}: expected per-sample input shape {net.input_shape}, got {x.shape[1:]}")
    return x


def _check_single(net, x):
    x = as_tensor(x)
    if x.shape != net.input_shape:
        raise ShapeError(f"layer {net.names[0]!r}: expected input shape {net.input_shape}, got {x.shape}")
    return x


def forward_batch(net, x):
    """Logits of shape (n, num_classes) for a batch of n inputs."""
    return _run(net, _check_batch(net, x), ())[0]


def forward(net, x):
    """Logits for a single input of shape ``net.input_shape``."""
    return forward_batch(net, _check_single(net, x)[None])[0]


@dataclass
class ActivationTrace:
    """Flattened intermediate outputs keyed by capture point, in network order."""

    activations: dict
    logits: np.ndarray

    def __getitem__(self, name):
        return self.activations[name]

    def __contains__(self, name):
        return name in self.activations

    @property
    def points(self):
        return list(self.activations)


def _ordered_points(net, capture_points):
    points = list(dict.fromkeys(capture_points))
    return sorted(points, key=net.index)


def forward_batch_with_capture(net, x, capture_points):
    """Like :func:`forward_batch` but also returns ``{name: (n, dim) array}``."""
    x = _check_batch(net, x)
    points = _ordered_points(net, capture_points)
    idx = {p: net.capture_index(p) for p in points}
    logits, kept = _run(net, x, set(idx.values()))
    acts = {p: kept[i].reshape(x.shape[0], -1) for p, i in idx.items()}
    return logits, acts


def forward_with_capture(net, x, capture_points):
    x = _check_single(net, x)
    logits, acts = forward_batch_with_capture(net, x[None], capture_points)
    return logits[0], ActivationTrace({p: a[0] for p, a in acts.items()}, logits[0])


# -- training ---------------------------------------------------------------

def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def mse_loss(output, target):
    """Mean over samples of per-sample MSE, with gradient w.r.t. ``output``."""
    d = output - target
    return float(np.mean(d * d)), 2.0 * d / d.size


def loss_and_grads(net, x, target, loss_fn):
    """Batch loss and per-layer parameter gradients (list aligned with layers)."""
    acts = [x]
    for layer in net.layers:
        acts.append(layer.forward(acts[-1]))
    loss, grad = loss_fn(acts[-1], target)
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        grad, pg = net.layers[i].backward(acts[i], acts[i + 1], grad)
        grads[i] = pg
    return loss, grads, grad


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.05
    batch_size: int = 32

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not math.isfinite(self.lr) or self.lr < 0:
            raise ConfigError(f"lr must be finite and >= 0, got {self.lr}")


@dataclass
class TrainHistory:
    epoch_losses: list = field(default_factory=list)
    train_accuracy: float = float("nan")


def sgd_fit(net, inputs, targets, loss_fn, cfg, rng):
    """Plain minibatch SGD on a copy of ``net``; returns ``(net, epoch_losses)``.

    The per-epoch shuffle comes from ``rng.split(epoch)``, so the order is a
    function of (seed, epoch) only. Epoch loss is the sample-weighted mean of
    batch losses.
    """
    cfg.validate()
    net = net.copy()
    n = inputs.shape[0]
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.split(epoch).permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads, _ = loss_and_grads(net, inputs[idx], targets[idx], loss_fn)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {b}")
            total += loss * len(idx)
            if cfg.lr:
                for layer, g in zip(net.layers, grads):
                    for pname, pg in g.items():
                        setattr(layer, pname, getattr(layer, pname) - cfg.lr * pg)
        losses.append(total / n)
    return net, losses


def accuracy(net, inputs, labels, batch_size=1024):
    correct = 0
    for start in range(0, len(labels), batch_size):
        pred = forward_batch(net, inputs[start:start + batch_size]).argmax(axis=1)
        correct += int((pred == labels[start:start + batch_size]).sum())
    return correct / len(labels)


def train_classifier(net, data, cfg, rng):
    """Train ``net`` on a LabeledDataset with softmax cross-entropy.

    Returns a new network and a :class:`TrainHistory`; ``net`` is untouched.
    """
    inputs, labels = as_tensor(data.inputs), np.asarray(data.labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= net.num_classes):
        bad = int(labels[(labels < 0) | (labels >= net.num_classes)][0])
        raise DataError(f"label {bad} outside [0, {net.num_classes})")
    _check_batch(net, inputs)
    trained, losses = sgd_fit(net, inputs, labels, softmax_cross_entropy, cfg, rng)
    return trained, TrainHistory(losses, accuracy(trained, inputs, labels))


def predict(net, inputs, batch_size=1024):
    return np.concatenate([forward_batch(net, inputs[s:s + batch_size]).argmax(axis=1)
                           for s in range(0, len(inputs), batch_size)]).astype(np.int64)

