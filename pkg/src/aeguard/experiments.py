"""Reproducible detection experiments.

``synthetic_detection`` runs entirely on generated Gaussian blobs.
``scenario_one`` needs Fashion-MNIST (valid) and MNIST (invalid) IDX files on
disk; it trains a LeNet-like CNN and sweeps delta over the recommended band.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assertion import DEFAULT_AE_TRAIN
from .calibration import DEFAULT_DELTA, RECOMMENDED_DELTA_BAND
from .data import cluster_centroids, find_idx_pair, load_idx, make_clusters
from .nn import TrainConfig, accuracy, build_network, train_classifier
from .pipeline import evaluate_guard, fit_guard, mixed_set
from .tensor import Rng, stage_seed

log = logging.getLogger(__name__)


@dataclass
class SyntheticConfig:
    seed: int = 0
    num_classes: int = 4
    dim: int = 16
    separation: float = 6.0
    samples_per_class: int = 500
    test_per_class: int = 250
    invalid_clusters: int = 2
    invalid_offset: float = -2.5  # per-coordinate shift of the invalid pool's center
    hidden: tuple = (32, 16)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, lr=0.05, batch_size=32))
    ae_train: TrainConfig = field(default_factory=lambda: DEFAULT_AE_TRAIN)
    delta: float = DEFAULT_DELTA
    fraction: float = 0.5


@dataclass
class DetectionResult:
    tpr: float
    fpr: float
    auc: float
    delta: float
    test_accuracy: float
    seconds: float
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)


def mlp_layers(hidden, num_classes):
    layers = []
    for h in hidden:
        layers += [{"kind": "dense", "out": h}, {"kind": "relu"}]
    return layers + [{"kind": "dense", "out": num_classes}]


def min_pool_distance(cfg):
    """Smallest distance between a valid and an invalid centroid (in sigma units)."""
    valid = cluster_centroids(cfg.num_classes, cfg.dim, cfg.separation)
    invalid = cluster_centroids(cfg.invalid_clusters, cfg.dim, cfg.separation,
                                np.full(cfg.dim, cfg.invalid_offset))
    return float(np.linalg.norm(valid[:, None] - invalid[None], axis=-1).min())


def synthetic_detection(cfg=None):
    cfg = cfg or SyntheticConfig()
    t0 = time.perf_counter()
    rng = Rng(cfg.seed)
    k, d = cfg.num_classes, cfg.dim
    train = make_clusters(rng.split(0), k, d, cfg.samples_per_class, cfg.separation)
    test = make_clusters(rng.split(1), k, d, cfg.test_per_class, cfg.separation)
    pool = make_clusters(rng.split(2), cfg.invalid_clusters, d, cfg.test_per_class, cfg.separation,
                         np.full(d, cfg.invalid_offset))

    net = build_network((d,), mlp_layers(cfg.hidden, k), rng.split(3))
    net, _ = train_classifier(net, train, cfg.train, rng.split(4))
    hidden = [n for n, l in zip(net.names, net.layers) if l.kind == "dense"][:-1]
    gm, _ = fit_guard(net, train.inputs, rng.split(5), hidden, ae_train=cfg.ae_train, delta=cfg.delta)
    report, _ = evaluate_guard(gm, mixed_set(test, pool, cfg.fraction, rng.split(6)))
    return DetectionResult(report.tpr, report.fpr, report.auc, cfg.delta,
                           accuracy(net, test.inputs, test.labels), time.perf_counter() - t0,
                           {"capture_points": hidden, "min_pool_distance": min_pool_distance(cfg)})


# -- Fashion-MNIST (valid) vs MNIST digits (invalid) --------------------------

LENET = [
    {"kind": "conv2d", "out_ch": 6, "kernel": 5}, {"kind": "relu"}, {"kind": "maxpool2d", "window": 2},
    {"kind": "conv2d", "out_ch": 16, "kernel": 5}, {"kind": "relu"}, {"kind": "maxpool2d", "window": 2},
    {"kind": "flatten"},
    {"kind": "dense", "out": 120}, {"kind": "relu"},
    {"kind": "dense", "out": 84}, {"kind": "relu"},
    {"kind": "dense", "out": 10},
]


@dataclass
class ScenarioConfig:
    data_dir: Path = Path("data")
    seed: int = 0
    train_limit: int = 60000
    test_limit: int = 10000
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=6, lr=0.05, batch_size=32))
    ae_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10, lr=0.05, batch_size=32))
    deltas: tuple = (2.0, 2.5, 3.0, 3.5, 4.0)
    fraction: float = 0.5


def scenario_dirs(data_dir):
    """``(fashion_dir, mnist_dir)`` when both IDX sets are present, else None."""
    base = Path(data_dir)
    fashion, mnist = base / "fashion-mnist", base / "mnist"
    for d in (fashion, mnist):
        if find_idx_pair(d, "train") is None or find_idx_pair(d, "t10k") is None:
            return None
    return fashion, mnist


def _load(directory, split, limit, rng):
    ds = load_idx(*find_idx_pair(directory, split))
    if limit < len(ds):
        ds = ds.subset(np.sort(rng.permutation(len(ds))[:limit]))
    return ds.reshaped((1,) + ds.sample_shape)


def scenario_one(cfg):
    """Train, guard and sweep delta. Returns a dict with one row per delta."""
    dirs = scenario_dirs(cfg.data_dir)
    if dirs is None:
        raise FileNotFoundError(f"Fashion-MNIST/MNIST IDX files not found under {cfg.data_dir}")
    fashion, mnist = dirs
    t0 = time.perf_counter()
    rng = Rng(stage_seed(cfg.seed, "scenario-one"))
    train = _load(fashion, "train", cfg.train_limit, rng.split(0))
    test = _load(fashion, "t10k", cfg.test_limit, rng.split(1))
    pool = _load(mnist, "t10k", cfg.test_limit, rng.split(2))

    net = build_network(train.sample_shape, LENET, rng.split(3))
    net, hist = train_classifier(net, train, cfg.train, rng.split(4))
    test_acc = accuracy(net, test.inputs, test.labels)
    log.info("target model: train acc %.4f test acc %.4f", hist.train_accuracy, test_acc)

    gm, _ = fit_guard(net, train.inputs, rng.split(5), "auto", ae_train=cfg.ae_train, delta=cfg.deltas[0])
    mixed = mixed_set(test, pool, cfg.fraction, rng.split(6))
    rows, auc = [], None
    for delta in cfg.deltas:
        report, bv = evaluate_guard(gm.recalibrated(delta), mixed, sweep=auc is None)
        auc = report.auc if auc is None else auc
        rows.append({"delta": delta, "tpr": report.tpr, "fpr": report.fpr,
                     "flagged": int((~bv.validity).sum())})
    return {"test_accuracy": test_acc, "auc": auc, "capture_points": gm.capture_points, "sweep": rows,
            "band": list(RECOMMENDED_DELTA_BAND), "seconds": time.perf_counter() - t0}


def best_in_band(rows, max_fpr):
    """Highest-TPR sweep row whose FPR stays within ``max_fpr``."""
    ok = [r for r in rows if r["fpr"] <= max_fpr]
    return max(ok, key=lambda r: r["tpr"]) if ok else None
