"""AutoEncoder assertions bound to one capture point of a target network."""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, IntegrityError, NumericError, ParseError, ShapeError, StateError
from .nn import Dense, Network, ReLU, TrainConfig, forward_batch, mse_loss, sgd_fit
from .serialize import Reader, decode_network, encode_network
from .tensor import as_tensor, mse, mse_rows

DEFAULT_DEPTH = 5
ASSERTION_TAG = b"ASRT"
DEFAULT_AE_TRAIN = TrainConfig(epochs=30, lr=0.05, batch_size=32)


@dataclass(frozen=True)
class AeSpec:
    """Symmetric width chain: halves towards the bottleneck, then doubles back."""

    input_dim: int
    depth: int = DEFAULT_DEPTH
    layer_widths: tuple = field(init=False)

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.depth < 3 or self.depth % 2 == 0:
            raise ConfigError(f"AE depth must be an odd integer >= 3, got {self.depth}")
        half = [self.input_dim]
        for _ in range(self.depth // 2):
            half.append(max(half[-1] // 2, 1))
        object.__setattr__(self, "layer_widths", tuple(half + half[-2::-1]))

    @classmethod
    def from_widths(cls, widths):
        """Spec with an explicit symmetric width chain (for ablations)."""
        widths = tuple(int(w) for w in widths)
        if len(widths) < 3 or len(widths) % 2 == 0 or widths != widths[::-1] or min(widths) < 1:
            raise ConfigError(f"widths must be a symmetric chain of odd length >= 3, got {widths}")
        spec = cls(widths[0], len(widths))
        object.__setattr__(spec, "layer_widths", widths)
        return spec


def build_ae(input_dim, depth=DEFAULT_DEPTH):
    return AeSpec(int(input_dim), int(depth))


def ae_network(spec, rng):
    """Dense chain over ``spec.layer_widths``; ReLU on hidden layers, linear output."""
    widths = spec.layer_widths
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(Dense(a, b, rng.normal((b, a), 0.0, math.sqrt(2.0 / a))))
        if i < len(widths) - 2:
            layers.append(ReLU())
    return Network((widths[0],), layers)


def reconstruction_losses(ae, activations, batch_size=4096):
    """Per-sample MSE between each row and its reconstruction."""
    x = as_tensor(activations)
    out = [mse_rows(x[s:s + batch_size], forward_batch(ae, x[s:s + batch_size]))
           for s in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


@dataclass
class Assertion:
    layer_name: str
    ae: Network
    mean_loss: float
    threshold: float = None
    delta: float = None

    @property
    def input_dim(self):
        return self.ae.input_shape[0]

    @property
    def calibrated(self):
        return self.threshold is not None


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    loss: float

    def __bool__(self):
        return self.passed


def train_assertion(spec, activations, cfg, rng, layer_name=""):
    """Fit an AE to captured activations; the returned assertion is uncalibrated.

    ``mean_loss`` is the mean reconstruction MSE of the trained AE over the
    same activations, measured in one pass after training.
    """
    x = as_tensor(activations)
    if x.ndim != 2 or len(x) == 0:
        raise DataError(f"need a non-empty (n, {spec.input_dim}) activation array, got shape {x.shape}")
    if x.shape[1] != spec.input_dim:
        raise ShapeError(f"activations have dim {x.shape[1]}, AE expects {spec.input_dim}")
    ae = ae_network(spec, rng.split(0))
    ae, _ = sgd_fit(ae, x, x, mse_loss, cfg, rng.split(1))
    mean_loss = float(np.mean(reconstruction_losses(ae, x)))
    if not math.isfinite(mean_loss):
        raise NumericError(f"non-finite mean reconstruction loss for assertion {layer_name!r}")
    return Assertion(layer_name, ae, mean_loss)


def assertion_check(ir, assertion):
    """Reconstruct ``ir`` and fail iff the MSE strictly exceeds the threshold."""
    if assertion.threshold is None:
        raise StateError(f"assertion {assertion.layer_name!r} has no threshold; calibrate it first")
    ir = as_tensor(ir).reshape(-1)
    if ir.shape[0] != assertion.input_dim:
        raise ShapeError(f"assertion {assertion.layer_name!r}: input has {ir.shape[0]} values, "
                         f"AE expects {assertion.input_dim}")
    rv = forward_batch(assertion.ae, ir[None])[0]
    loss = mse(ir, rv)
    return CheckResult(not loss > assertion.threshold, loss)


# -- file format: SNET network + trailer --------------------------------------

def _opt(x):
    return float("nan") if x is None else float(x)


def encode_assertion(a):
    name = a.layer_name.encode("utf-8")
    trailer = struct.pack("<H", len(name)) + name
    trailer += struct.pack("<dBdd", a.mean_loss, a.threshold is not None, _opt(a.threshold), _opt(a.delta))
    return encode_network(a.ae) + ASSERTION_TAG + trailer


def decode_assertion(buf):
    ae, end = decode_network(buf)
    r = Reader(buf, end)
    if r.take(4, "assertion tag") != ASSERTION_TAG:
        raise ParseError("missing assertion trailer tag", end)
    name = r.string("layer name")
    mean_loss = r.f64("mean_loss")
    has_thr = r.u8("threshold flag")
    threshold = r.f64("threshold")
    delta = r.f64("delta")
    if not r.done():
        raise ParseError(f"{len(buf) - r.pos} unexpected trailing bytes", r.pos)
    if has_thr not in (0, 1):
        raise ParseError(f"threshold flag must be 0 or 1, got {has_thr}", r.pos - 17)
    widths = [ae.input_shape[0]] + [l.out_dim for l in ae.layers if l.kind == "dense"]
    if widths[-1] != widths[0]:
        raise IntegrityError(f"AE output dim {widths[-1]} != input dim {widths[0]}")
    return Assertion(name, ae, mean_loss,
                     threshold if has_thr else None,
                     None if math.isnan(delta) else delta)


def save_assertion(a, path):
    with open(path, "wb") as f:
        f.write(encode_assertion(a))


def load_assertion(path):
    with open(path, "rb") as f:
        return decode_assertion(f.read())
