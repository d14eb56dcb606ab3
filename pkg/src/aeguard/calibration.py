"""Per-assertion loss thresholds: a single scale coefficient times the mean
training reconstruction loss."""

import math
from collections.abc import Mapping
from dataclasses import dataclass, field, replace

import numpy as np

from .assertion import reconstruction_losses
from .errors import ConfigError, DataError, DomainError

DEFAULT_DELTA = 3.0
RECOMMENDED_DELTA_BAND = (2.0, 4.0)


@dataclass
class CalibrationConfig:
    delta: float = DEFAULT_DELTA
    capture_points: list = field(default_factory=list)

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ConfigError(f"delta must be a finite value > 0, got {self.delta}")


def compute_threshold(losses, delta):
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise DataError("cannot compute a threshold from an empty loss list")
    if not np.all(np.isfinite(losses)) or np.any(losses < 0):
        raise DomainError("losses must be finite and non-negative")
    if not delta > 0:
        raise DomainError(f"delta must be > 0, got {delta}")
    return float(delta * np.mean(losses))


def _stack_point(traces, layer):
    """(m, dim) activations for ``layer`` from batched or per-sample traces."""
    if isinstance(traces, Mapping):
        if layer not in traces:
            raise DataError(f"sample 0: capture point {layer!r} missing from traces")
        return np.asarray(traces[layer], dtype=np.float64)
    rows = []
    for j, t in enumerate(traces):
        if layer not in t:
            raise DataError(f"sample {j}: capture point {layer!r} missing from trace")
        rows.append(t[layer])
    return np.stack(rows) if rows else np.zeros((0, 0))


def calibrate(assertions, traces, cfg):
    """Return copies of ``assertions`` with ``mean_loss`` and ``threshold`` set.

    ``traces`` is either a sequence of per-sample ActivationTraces or a mapping
    ``{layer: (m, dim) array}``. AE parameters are shared, never modified.
    """
    out = []
    for a in assertions:
        acts = _stack_point(traces, a.layer_name)
        if len(acts) == 0:
            raise DataError(f"no calibration samples for {a.layer_name!r}")
        losses = reconstruction_losses(a.ae, acts)
        mean_loss = float(np.mean(losses))
        out.append(replace(a, mean_loss=mean_loss, threshold=cfg.delta * mean_loss, delta=cfg.delta))
    return out


def recalibrate(assertions, delta):
    """Thresholds at a new ``delta`` from the stored mean losses (no data pass)."""
    CalibrationConfig(delta)
    return [replace(a, threshold=delta * a.mean_loss, delta=delta) for a in assertions]


def calibration_report(assertions, delta, counts):
    return {
        "delta": delta,
        "per_assertion": [
            {"layer": a.layer_name, "mean_loss": a.mean_loss, "threshold": a.threshold, "m": int(m)}
            for a, m in zip(assertions, counts)
        ],
    }
