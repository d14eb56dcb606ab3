"""Download the MNIST and Fashion-MNIST IDX files (needs network access)."""

import argparse
import urllib.request
from pathlib import Path

from aeguard.data import IDX_FILES, MNIST_URLS


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data", default="data")
    args = p.parse_args()
    for name, base in MNIST_URLS.items():
        d = Path(args.data) / name
        d.mkdir(parents=True, exist_ok=True)
        for f in IDX_FILES:
            target = d / f"{f}.gz"
            if target.exists():
                continue
            print(f"fetching {base}{f}.gz")
            urllib.request.urlretrieve(f"{base}{f}.gz", target)


if __name__ == "__main__":
    main()
