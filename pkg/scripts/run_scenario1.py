"""Fashion-MNIST (valid) vs MNIST digits (invalid) with a LeNet-like CNN.

Expects ``<data>/fashion-mnist`` and ``<data>/mnist`` each holding the four
standard IDX files (optionally gzipped). See ``fetch_idx.py``.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from aeguard.experiments import ScenarioConfig, best_in_band, scenario_dirs, scenario_one
from aeguard.nn import TrainConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", default="data")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-limit", type=int, default=60000)
    p.add_argument("--test-limit", type=int, default=10000)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--out", help="optional JSON result file")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, stream=sys.stderr)

    if scenario_dirs(args.data) is None:
        print(f"IDX files not found under {args.data}; run scripts/fetch_idx.py first", file=sys.stderr)
        return 2
    cfg = ScenarioConfig(Path(args.data), args.seed, args.train_limit, args.test_limit,
                         TrainConfig(args.epochs, 0.05, 32))
    res = scenario_one(cfg)
    res["best_at_fpr_0.15"] = best_in_band(res["sweep"], 0.15)
    print(json.dumps(res, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(res, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
