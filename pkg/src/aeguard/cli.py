"""Command-line front end.

Exit codes: 0 success (``check``: input valid), 1 input invalid (``check``
only), 2 usage/config/bundle error, 3 runtime or numeric failure.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationConfig
from .config import load_config
from .data import load_dataset
from .errors import AeGuardError, ConfigError, FormatError, IntegrityError, NumericError, ParseError, ShapeError
from .metrics import write_report
from .nn import accuracy, build_network, train_classifier
from .pipeline import conform, evaluate_guard, fit_guard, mixed_set
from .serialize import load_model, save_model
from .tensor import Rng, stage_seed
from .verifier import load_bundle, save_bundle, verify_input

log = logging.getLogger("aeguard")

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _dataset(cfg, role, shape):
    spec = cfg.dataset_spec(role)
    rng = Rng(stage_seed(cfg.seed, f"data:{role}"))
    try:
        return conform(load_dataset(spec, rng, cfg.base_dir), shape)
    except (FormatError, ParseError, IntegrityError, ShapeError, OSError) as e:
        raise UsageError(f"data.{role}: {e}") from None


def _load_bundle(path):
    try:
        return load_bundle(path)
    except (AeGuardError, OSError, KeyError, TypeError) as e:
        raise UsageError(f"malformed bundle {path}: {e}") from None


def _write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)
        f.write("\n")


def cmd_train_model(args):
    cfg = load_config(args.config, args.seed, args.out, need=("train",))
    rng = Rng(stage_seed(cfg.seed, "train-model"))
    net = build_network(cfg.input_shape, cfg.layers, rng.split(0))
    train = _dataset(cfg, "train", cfg.input_shape)
    net, hist = train_classifier(net, train, cfg.train, rng.split(1))
    for epoch, loss in enumerate(hist.epoch_losses):
        log.info("epoch %d loss %.6f", epoch, loss)
    result = {"epoch_losses": hist.epoch_losses, "train_accuracy": hist.train_accuracy}
    if "test" in cfg.data:
        test = _dataset(cfg, "test", cfg.input_shape)
        result["test_accuracy"] = accuracy(net, test.inputs, test.labels)
    log.info("train accuracy %.4f test accuracy %s", hist.train_accuracy, result.get("test_accuracy"))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_model(net, cfg.out_dir / "model.snet")
    _write_json(result, cfg.out_dir / "train_log.json")
    return EXIT_OK


def cmd_fit_assertions(args):
    cfg = load_config(args.config, args.seed, args.out, need=("train",))
    model_path = Path(args.model) if args.model else cfg.out_dir / "model.snet"
    try:
        net = load_model(model_path)
    except (AeGuardError, OSError) as e:
        raise UsageError(f"--model: {e}") from None
    train = _dataset(cfg, "train", net.input_shape)
    holdout = cfg.assertions.holdout if args.holdout is None else args.holdout
    if not 0 <= holdout < 1:
        raise ConfigError(f"--holdout: must lie in [0, 1), got {holdout}")
    delta = cfg.delta if args.delta is None else args.delta
    CalibrationConfig(delta)
    gm, m = fit_guard(net, train.inputs, Rng(stage_seed(cfg.seed, "fit-assertions")),
                      cfg.assertions.capture_points, cfg.assertions.depth, cfg.assertions.train, delta, holdout)
    for a in gm.assertions:
        log.info("assertion %s: dim %d mean_loss %.6g threshold %.6g", a.layer_name, a.input_dim,
                 a.mean_loss, a.threshold)
    out = Path(args.bundle) if args.bundle else cfg.out_dir / "bundle"
    save_bundle(gm, out, [m] * len(gm.assertions))
    print(out)
    return EXIT_OK


def cmd_calibrate(args):
    gm = _load_bundle(args.bundle)
    CalibrationConfig(args.delta)
    report_path = Path(args.bundle) / "calibration.json"
    try:
        counts = [e["m"] for e in json.loads(report_path.read_text())["per_assertion"]]
    except (OSError, ValueError, KeyError, TypeError):
        counts = None
    out = Path(args.out) if args.out else Path(f"{Path(args.bundle).as_posix().rstrip('/')}-delta{args.delta:g}")
    if out.resolve() == Path(args.bundle).resolve():
        raise UsageError("--out must differ from --bundle; commands never modify their inputs")
    save_bundle(gm.recalibrated(args.delta), out, counts)
    print(out)
    return EXIT_OK


def _read_input(path, shape):
    path = Path(path)
    try:
        if path.suffix == ".npy":
            x = np.load(path, allow_pickle=False)
        else:
            x = np.asarray(json.loads(path.read_text()), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise UsageError(f"--input: cannot decode {path}: {e}") from None
    if x.size != np.prod(shape):
        raise UsageError(f"--input: {x.size} values cannot form model input shape {tuple(shape)}")
    return x.reshape(shape).astype(np.float64)


def cmd_check(args):
    gm = _load_bundle(args.bundle)
    x = _read_input(args.input, gm.net.input_shape)
    verdict = verify_input(gm, x)
    json.dump(verdict.to_json(), sys.stdout)
    sys.stdout.write("\n")
    return EXIT_OK if verdict.validity else EXIT_INVALID


def cmd_evaluate(args):
    gm = _load_bundle(args.bundle)
    cfg = load_config(args.config, args.seed, args.out, need=("test", "invalid_pool"))
    fraction = cfg.fraction if args.fraction is None else args.fraction
    test = _dataset(cfg, "test", gm.net.input_shape)
    pool = _dataset(cfg, "invalid_pool", gm.net.input_shape)
    mixed = mixed_set(test, pool, fraction, Rng(stage_seed(cfg.seed, "evaluate")))
    report, bv = evaluate_guard(gm, mixed, sweep=not args.no_sweep)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "eval_report.json", out / "roc.csv" if report.roc_points else None)
    with open(out / "scores.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "truly_invalid", "flagged_invalid", "anomaly_score", "predicted_class"])
        for i in range(len(mixed)):
            w.writerow([i, int(mixed.validity_labels[i]), int(not bv.validity[i]),
                        repr(float(bv.anomaly_scores[i])), int(bv.predicted_class[i])])
    log.info("tpr %.4f fpr %.4f auc %.4f", report.tpr, report.fpr, report.auc)
    print(json.dumps({"tpr": report.tpr, "fpr": report.fpr, "auc": report.auc, "delta": report.delta}))
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (overrides config out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="aeguard", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-model", parents=[common], help="train the target classifier")
    s.set_defaults(func=cmd_train_model, needs_config=True)

    s = sub.add_parser("fit-assertions", parents=[common], help="train and calibrate assertions")
    s.add_argument("--model", help="model file (default: <out>/model.snet)")
    s.add_argument("--bundle", help="bundle directory to write (default: <out>/bundle)")
    s.add_argument("--delta", type=float, help="override the config delta")
    s.add_argument("--holdout", type=float, help="fraction of training data reserved for calibration")
    s.set_defaults(func=cmd_fit_assertions, needs_config=True)

    s = sub.add_parser("calibrate", parents=[common], help="re-threshold a bundle at a new delta")
    s.add_argument("--bundle", required=True)
    s.add_argument("--delta", type=float, required=True)
    s.set_defaults(func=cmd_calibrate, needs_config=False)

    s = sub.add_parser("check", parents=[common], help="verify one input (exit 0 valid, 1 invalid)")
    s.add_argument("--bundle", required=True)
    s.add_argument("--input", required=True, help=".npy or JSON array")
    s.set_defaults(func=cmd_check, needs_config=False)

    s = sub.add_parser("evaluate", parents=[common], help="TPR/FPR/AUC on an injected test set")
    s.add_argument("--bundle", required=True)
    s.add_argument("--fraction", type=float, help="share of test items replaced by invalid inputs")
    s.add_argument("--no-sweep", action="store_true", help="skip the ROC sweep")
    s.set_defaults(func=cmd_evaluate, needs_config=True)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    if args.needs_config and not args.config:
        print(f"aeguard {args.command}: --config is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as e:
        print(f"aeguard {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, AeGuardError) as e:
        print(f"aeguard {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
