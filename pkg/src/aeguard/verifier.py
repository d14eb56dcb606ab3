"""Guarded model: target network plus calibrated assertions.

Validity follows the all-assertions-pass rule. Every assertion is evaluated
even after one fails so callers get per-layer losses; the validity bit is the
same as stopping at the first failure.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assertion import assertion_check, load_assertion, reconstruction_losses, save_assertion
from .calibration import calibration_report, recalibrate
from .errors import ConfigError, FormatError, IntegrityError, ShapeError, StateError, VersionError
from .nn import forward_batch_with_capture, forward_with_capture
from .serialize import load_model, save_model

BUNDLE_FORMAT_VERSION = 1
MANIFEST = "manifest.json"
MODEL_FILE = "model.snet"
REPORT_FILE = "calibration.json"
PARAMETRIC = ("dense", "conv2d")


def default_capture_points(net, count=2):
    """Last ``count`` dense/conv layers, excluding the layer producing logits."""
    idx = [i for i, l in enumerate(net.layers) if l.kind in PARAMETRIC]
    if idx and idx[-1] == len(net.layers) - 1:
        idx = idx[:-1]
    return [net.names[i] for i in idx[-count:]] if count > 0 else []


@dataclass
class GuardedModel:
    net: object
    assertions: list
    delta: float
    capture_points: list = None

    def __post_init__(self):
        layers = [a.layer_name for a in self.assertions]
        if self.capture_points is None:
            self.capture_points = layers
        self.capture_points = list(self.capture_points)
        if sorted(layers) != sorted(self.capture_points) or len(set(layers)) != len(layers):
            raise ConfigError(f"assertion layers {layers} must match capture points "
                              f"{self.capture_points} one-to-one")
        for a in self.assertions:
            dim = self.net.capture_dim(a.layer_name)
            if a.input_dim != dim:
                raise ShapeError(f"assertion {a.layer_name!r}: AE input dim {a.input_dim} "
                                 f"!= capture point size {dim}")
        # evaluate in SL order
        order = {p: i for i, p in enumerate(self.capture_points)}
        self.assertions = sorted(self.assertions, key=lambda a: order[a.layer_name])

    def recalibrated(self, delta):
        return GuardedModel(self.net, recalibrate(self.assertions, delta), delta, self.capture_points)

    def _require_calibrated(self):
        for a in self.assertions:
            if a.threshold is None:
                raise StateError(f"assertion {a.layer_name!r} is not calibrated")


@dataclass
class AssertionOutcome:
    layer: str
    loss: float
    threshold: float
    passed: bool


@dataclass
class Verdict:
    validity: bool
    logits: np.ndarray
    predicted_class: int
    per_assertion: list = field(default_factory=list)
    anomaly_score: float = 0.0

    def to_json(self):
        return {
            "validity": self.validity,
            "predicted_class": self.predicted_class,
            "anomaly_score": self.anomaly_score,
            "logits": self.logits.tolist(),
            "per_assertion": [vars(o) for o in self.per_assertion],
        }


def loss_ratio(loss, mean_loss):
    if mean_loss == 0:
        return math.inf if loss > 0 else 0.0
    return loss / mean_loss


def verify_input(gm, x):
    gm._require_calibrated()
    logits, trace = forward_with_capture(gm.net, x, gm.capture_points)
    outcomes, score = [], 0.0
    for a in gm.assertions:
        r = assertion_check(trace[a.layer_name], a)
        outcomes.append(AssertionOutcome(a.layer_name, r.loss, a.threshold, r.passed))
        score = max(score, loss_ratio(r.loss, a.mean_loss))
    return Verdict(all(o.passed for o in outcomes), logits, int(np.argmax(logits)), outcomes, score)


def anomaly_score(gm, x):
    return verify_input(gm, x).anomaly_score


@dataclass
class BatchVerdict:
    """Column-wise verdicts for a batch: ``losses`` is (n, n_assertions)."""

    validity: np.ndarray
    logits: np.ndarray
    predicted_class: np.ndarray
    losses: np.ndarray
    anomaly_scores: np.ndarray


def verify_batch(gm, inputs, batch_size=1024):
    """Vectorised :func:`verify_input` over a stacked batch."""
    gm._require_calibrated()
    logits, losses = [], []
    for s in range(0, len(inputs), batch_size):
        lg, acts = forward_batch_with_capture(gm.net, inputs[s:s + batch_size], gm.capture_points)
        logits.append(lg)
        losses.append(np.stack([reconstruction_losses(a.ae, acts[a.layer_name]) for a in gm.assertions], axis=1)
                      if gm.assertions else np.zeros((len(lg), 0)))
    logits, losses = np.concatenate(logits), np.concatenate(losses)
    thr = np.array([a.threshold for a in gm.assertions])
    validity = ~np.any(losses > thr, axis=1)
    ratios = np.zeros_like(losses)
    for k, a in enumerate(gm.assertions):
        ratios[:, k] = [loss_ratio(v, a.mean_loss) for v in losses[:, k]]
    scores = ratios.max(axis=1) if gm.assertions else np.zeros(len(logits))
    return BatchVerdict(validity, logits, logits.argmax(axis=1), losses, scores)


# -- bundle on disk ------------------------------------------------------------

def save_bundle(gm, directory, counts=None):
    """Write model, assertion files, calibration report and manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_model(gm.net, d / MODEL_FILE)
    files = []
    for i, a in enumerate(gm.assertions):
        name = f"assertion_{i}.snet"
        save_assertion(a, d / name)
        files.append(name)
    counts = counts if counts is not None else [0] * len(gm.assertions)
    with open(d / REPORT_FILE, "w") as f:
        json.dump(calibration_report(gm.assertions, gm.delta, counts), f, indent=2)
        f.write("\n")
    manifest = {"format_version": BUNDLE_FORMAT_VERSION, "capture_points": gm.capture_points,
                "delta": gm.delta, "model": MODEL_FILE, "assertions": files, "calibration_report": REPORT_FILE}
    with open(d / MANIFEST, "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(manifest, dict):
        raise FormatError(f"{path}: manifest must be a JSON object")
    version = manifest.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported bundle format_version {version!r}")
    for key in ("capture_points", "delta", "model", "assertions"):
        if key not in manifest:
            raise FormatError(f"{path}: missing field {key!r}")
    return manifest


def load_bundle(directory):
    d = Path(directory)
    manifest = read_manifest(d)
    net = load_model(d / manifest["model"])
    assertions = [load_assertion(d / f) for f in manifest["assertions"]]
    delta = manifest["delta"]
    for a in assertions:
        if a.threshold is not None and a.delta != delta:
            raise IntegrityError(f"assertion {a.layer_name!r} calibrated at delta {a.delta}, manifest says {delta}")
    try:
        return GuardedModel(net, assertions, delta, manifest["capture_points"])
    except (ConfigError, ShapeError) as e:
        raise IntegrityError(f"bundle {d}: {e}") from None
