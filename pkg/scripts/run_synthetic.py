"""Synthetic blob detection over several seeds; prints one JSON line per seed."""

import argparse
import json

import numpy as np

from aeguard.experiments import SyntheticConfig, synthetic_detection


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--delta", type=float, default=3.0)
    p.add_argument("--out", help="optional JSON file for all results")
    args = p.parse_args()

    results = []
    for seed in range(args.seeds):
        res = synthetic_detection(SyntheticConfig(seed=seed, delta=args.delta)).to_json()
        res["seed"] = seed
        print(json.dumps(res))
        results.append(res)
    aucs, tprs, fprs = (np.array([r[k] for r in results]) for k in ("auc", "tpr", "fpr"))
    print(f"auc min {aucs.min():.4f} median {np.median(aucs):.4f} | tpr min {tprs.min():.3f} "
          f"median {np.median(tprs):.3f} | fpr max {fprs.max():.3f}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(results, f, indent=2)


if __name__ == "__main__":
    main()
