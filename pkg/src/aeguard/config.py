"""JSON pipeline configuration with field-path validation errors."""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .assertion import DEFAULT_AE_TRAIN
from .calibration import DEFAULT_DELTA
from .errors import ConfigError
from .nn import LAYER_KINDS, TrainConfig

DATASET_ROLES = ("train", "test", "invalid_pool")


@dataclass
class AssertionSettings:
    capture_points: object = "auto"
    depth: int = 5
    train: TrainConfig = field(default_factory=lambda: replace(DEFAULT_AE_TRAIN))
    holdout: float = 0.0


@dataclass
class PipelineConfig:
    seed: int
    input_shape: tuple
    layers: list
    train: TrainConfig
    data: dict
    assertions: AssertionSettings = field(default_factory=AssertionSettings)
    delta: float = DEFAULT_DELTA
    fraction: float = 0.5
    out_dir: Path = Path("out")
    base_dir: Path = Path(".")

    def dataset_spec(self, role):
        if role not in self.data:
            raise ConfigError(f"data.{role}: required for this command")
        return self.data[role]


def _get(d, key, path, kind, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field".lstrip("."))
        return default
    v = d[key]
    ok = isinstance(v, kind) and not (kind in (int, (int, float)) and isinstance(v, bool))
    if not ok:
        raise ConfigError(f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, got {v!r}".lstrip("."))
    return v


def _train_config(d, path, defaults):
    if d is None:
        return defaults
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    cfg = TrainConfig(_get(d, "epochs", path, int, defaults.epochs),
                      float(_get(d, "lr", path, (int, float), defaults.lr)),
                      _get(d, "batch_size", path, int, defaults.batch_size))
    try:
        cfg.validate()
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None
    return cfg


def _check_dataset(spec, path, base_dir, must_exist):
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected an object")
    kind = spec.get("kind")
    files = {"idx": ("images", "labels"), "npz": ("path",), "clusters": ()}
    if kind not in files:
        raise ConfigError(f"{path}.kind: expected one of {sorted(files)}, got {kind!r}")
    for key in files[kind]:
        p = _get(spec, key, path, str, required=True)
        if must_exist and not (base_dir / p).exists():
            raise ConfigError(f"{path}.{key}: file not found: {base_dir / p}")
    if kind == "clusters":
        for key in ("num_classes", "dim", "samples_per_class"):
            if _get(spec, key, path, int, required=True) < 1:
                raise ConfigError(f"{path}.{key}: must be >= 1")
        if _get(spec, "separation", path, (int, float), required=True) <= 0:
            raise ConfigError(f"{path}.separation: must be > 0")


def parse_config(raw, base_dir=".", seed=None, out_dir=None, need=()):
    """Validate a config dict. ``need`` lists dataset roles whose files must exist."""
    base_dir = Path(base_dir)
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    if seed is None:
        seed = _get(raw, "seed", "", int, 0)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {seed}")

    model = _get(raw, "model", "", dict, required=True)
    shape = _get(model, "input_shape", "model", list, required=True)
    if not shape or not all(isinstance(s, int) and s > 0 for s in shape):
        raise ConfigError(f"model.input_shape: expected a list of positive integers, got {shape!r}")
    layers = _get(model, "layers", "model", list, required=True)
    for i, spec in enumerate(layers):
        if not isinstance(spec, dict) or spec.get("kind") not in LAYER_KINDS:
            raise ConfigError(f"model.layers[{i}].kind: expected one of {sorted(LAYER_KINDS)}")

    train = _train_config(raw.get("train"), "train", TrainConfig())

    data = _get(raw, "data", "", dict, {})
    for role, spec in data.items():
        if role not in DATASET_ROLES:
            raise ConfigError(f"data.{role}: unknown dataset role; expected one of {list(DATASET_ROLES)}")
        _check_dataset(spec, f"data.{role}", base_dir, must_exist=role in need)
    for role in need:
        if role not in data:
            raise ConfigError(f"data.{role}: missing required field")

    a_raw = _get(raw, "assertions", "", dict, {})
    defaults = AssertionSettings()
    cps = a_raw.get("capture_points", "auto")
    if cps != "auto" and not (isinstance(cps, list) and all(isinstance(c, str) for c in cps)):
        raise ConfigError(f"assertions.capture_points: expected \"auto\" or a list of layer names, got {cps!r}")
    depth = _get(a_raw, "depth", "assertions", int, defaults.depth)
    if depth < 3 or depth % 2 == 0:
        raise ConfigError(f"assertions.depth: must be an odd integer >= 3, got {depth}")
    holdout = float(_get(a_raw, "holdout", "assertions", (int, float), 0.0))
    if not 0 <= holdout < 1:
        raise ConfigError(f"assertions.holdout: must lie in [0, 1), got {holdout}")
    settings = AssertionSettings(cps, depth, _train_config(a_raw.get("train"), "assertions.train", defaults.train),
                                 holdout)

    delta = float(_get(raw, "delta", "", (int, float), DEFAULT_DELTA))
    if not (math.isfinite(delta) and delta > 0):
        raise ConfigError(f"delta: must be > 0, got {delta}")
    fraction = float(_get(raw, "fraction", "", (int, float), 0.5))
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction: must lie in (0, 1), got {fraction}")

    if out_dir is None:
        out_dir = base_dir / _get(raw, "out_dir", "", str, "out")
    return PipelineConfig(seed, tuple(shape), layers, train, data, settings, delta, fraction,
                          Path(out_dir), base_dir)


def load_config(path, seed=None, out_dir=None, need=()):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"--config: file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"--config: invalid JSON in {path}: {e}") from None
    return parse_config(raw, path.parent, seed, out_dir, need)
