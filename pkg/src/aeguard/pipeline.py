"""End-to-end stages: capture, fit + calibrate assertions, evaluate detection."""

import math

import numpy as np

from .assertion import DEFAULT_AE_TRAIN, build_ae, train_assertion
from .calibration import DEFAULT_DELTA, CalibrationConfig, calibrate
from .data import LabeledDataset, fit_shape, inject_invalid
from .errors import ConfigError, ShapeError
from .metrics import evaluate_scores
from .nn import forward_batch_with_capture
from .verifier import GuardedModel, default_capture_points, verify_batch


def capture_all(net, inputs, points, batch_size=1024):
    """``{point: (n, dim) array}`` of captured activations for every input."""
    chunks = {p: [] for p in points}
    for s in range(0, len(inputs), batch_size):
        _, acts = forward_batch_with_capture(net, inputs[s:s + batch_size], points)
        for p in points:
            chunks[p].append(acts[p])
    return {p: np.concatenate(c) for p, c in chunks.items()}


def resolve_capture_points(net, capture_points):
    if capture_points == "auto":
        points = default_capture_points(net)
        if not points:
            raise ConfigError("assertions.capture_points: \"auto\" found no hidden dense/conv layer")
        return points
    points = list(capture_points)
    for p in points:
        net.index(p)
    if len(set(points)) != len(points):
        raise ConfigError(f"assertions.capture_points: duplicate layer names in {points}")
    return points


def fit_guard(net, inputs, rng, capture_points="auto", depth=5, ae_train=DEFAULT_AE_TRAIN,
              delta=DEFAULT_DELTA, holdout=0.0):
    """Train one assertion per capture point and calibrate at ``delta``.

    With ``holdout > 0`` a random fraction of ``inputs`` is kept out of AE
    training and used for calibration only. Returns ``(guarded_model, m)``
    where ``m`` is the number of calibration samples.
    """
    points = resolve_capture_points(net, capture_points)
    cfg = CalibrationConfig(delta, points)
    fit_x = cal_x = inputs
    if holdout:
        order = rng.split(1_000_003).permutation(len(inputs))
        k = math.floor(holdout * len(inputs))
        if k == 0 or k == len(inputs):
            raise ConfigError(f"assertions.holdout: {holdout} leaves an empty split of {len(inputs)} samples")
        cal_x, fit_x = inputs[order[:k]], inputs[order[k:]]
    acts = capture_all(net, fit_x, points)
    assertions = [train_assertion(build_ae(acts[p].shape[1], depth), acts[p], ae_train, rng.split(i), p)
                  for i, p in enumerate(points)]
    cal_acts = acts if cal_x is fit_x else capture_all(net, cal_x, points)
    calibrated = calibrate(assertions, cal_acts, cfg)
    return GuardedModel(net, calibrated, delta, points), len(cal_x)


def conform(dataset, shape):
    """Reshape (same element count) or center-crop/pad samples to ``shape``."""
    shape = tuple(shape)
    if dataset.sample_shape == shape:
        return dataset
    if math.prod(dataset.sample_shape) == math.prod(shape):
        return dataset.reshaped(shape)
    if len(dataset.sample_shape) == len(shape):
        return LabeledDataset(fit_shape(dataset.inputs, shape), dataset.labels, dataset.validity_labels)
    if len(shape) == 3 and shape[0] == 1 and len(dataset.sample_shape) == 2:
        return conform(dataset.reshaped((1,) + dataset.sample_shape), shape)
    raise ShapeError(f"cannot adapt samples of shape {dataset.sample_shape} to model input {shape}")


def mixed_set(valid_test, invalid_pool, fraction, rng):
    mixed = inject_invalid(valid_test, invalid_pool, fraction, rng)
    if not mixed.validity_labels.any():
        raise ConfigError(f"fraction: {fraction} x {len(valid_test)} test items floors to zero injected "
                          "invalid inputs; raise the fraction or use a larger test set")
    return mixed


def evaluate_guard(gm, mixed, sweep=True):
    """Score a mixed set; returns ``(EvalReport, BatchVerdict)``."""
    bv = verify_batch(gm, mixed.inputs)
    report = evaluate_scores(~bv.validity, bv.anomaly_scores, mixed.validity_labels, gm.delta, sweep)
    return report, bv
