"""Autoencoder-based runtime assertions that flag out-of-distribution inputs
to a feed-forward classifier."""

__version__ = "0.1.0"

from .assertion import Assertion, AeSpec, assertion_check, build_ae, train_assertion
from .calibration import CalibrationConfig, calibrate, compute_threshold
from .data import LabeledDataset, inject_invalid, load_idx, make_clusters
from .metrics import EvalReport, confusion, roc_auc
from .nn import Network, TrainConfig, build_network, forward, forward_with_capture, train_classifier
from .serialize import load_model, save_model
from .tensor import Rng
from .verifier import GuardedModel, Verdict, anomaly_score, verify_input
