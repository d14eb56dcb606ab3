"""Datasets: IDX loading, synthetic Gaussian clusters, invalid-input injection."""

import gzip
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError, IntegrityError, ParseError, ShapeError
from .tensor import Rng, as_tensor

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Label assigned to injected out-of-distribution items; they have no class.
NO_CLASS = -1

MNIST_URLS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "fashion-mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}
IDX_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


@dataclass
class LabeledDataset:
    """Stacked inputs of shape (n, *sample_shape) with integer labels.

    ``validity_labels`` marks truly-invalid items in evaluation sets.
    """

    inputs: np.ndarray
    labels: np.ndarray
    validity_labels: np.ndarray = None

    def __post_init__(self):
        self.inputs = as_tensor(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim < 2:
            raise ShapeError(f"inputs must be stacked as (n, ...), got shape {self.inputs.shape}")
        if len(self.labels) != len(self.inputs):
            raise DataError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.validity_labels is not None:
            self.validity_labels = np.asarray(self.validity_labels, dtype=bool)
            if len(self.validity_labels) != len(self.inputs):
                raise DataError(f"{len(self.inputs)} inputs but {len(self.validity_labels)} validity labels")

    def __len__(self):
        return len(self.labels)

    @property
    def sample_shape(self):
        return self.inputs.shape[1:]

    def reshaped(self, shape):
        """Same data with each sample reshaped (row-major, data unchanged)."""
        shape = tuple(shape)
        if math.prod(shape) != math.prod(self.sample_shape):
            raise ShapeError(f"cannot reshape samples of {self.sample_shape} to {shape}")
        return LabeledDataset(self.inputs.reshape((len(self),) + shape), self.labels, self.validity_labels)

    def subset(self, idx):
        v = None if self.validity_labels is None else self.validity_labels[idx]
        return LabeledDataset(self.inputs[idx], self.labels[idx], v)

    def save_npz(self, path):
        arrays = {"inputs": self.inputs, "labels": self.labels}
        if self.validity_labels is not None:
            arrays["validity_labels"] = self.validity_labels
        np.savez(path, **arrays)

    @classmethod
    def load_npz(cls, path):
        with np.load(path) as z:
            return cls(z["inputs"], z["labels"], z["validity_labels"] if "validity_labels" in z else None)


# -- IDX -------------------------------------------------------------------

def _read_bytes(path):
    path = Path(path)
    with (gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")) as f:
        return f.read()


def parse_idx(buf, expected_magic):
    """Decode an unsigned-byte IDX buffer into a uint8 array."""
    if len(buf) < 4:
        raise ParseError("truncated IDX magic", len(buf))
    magic = struct.unpack(">I", buf[:4])[0]
    if magic != expected_magic:
        raise FormatError(f"IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    end_header = 4 + 4 * ndim
    if len(buf) < end_header:
        raise ParseError("truncated IDX dimension header", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:end_header])
    n = math.prod(dims)
    if len(buf) < end_header + n:
        raise ParseError(f"truncated IDX payload: {len(buf) - end_header} of {n} bytes", len(buf))
    if len(buf) > end_header + n:
        raise ParseError(f"{len(buf) - end_header - n} trailing bytes after IDX payload", end_header + n)
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=end_header).reshape(dims)


def load_idx(images_path, labels_path):
    images = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC)
    labels = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IntegrityError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return LabeledDataset(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def encode_idx(array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise DataError(f"IDX writer supports uint8 payloads only, got {array.dtype}")
    magic = 0x00000800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def write_idx(path, array):
    with open(path, "wb") as f:
        f.write(encode_idx(array))


def write_idx_dataset(images_path, labels_path, dataset):
    """Write a [0, 1]-scaled dataset back to an IDX pair."""
    pixels = np.rint(dataset.inputs * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise DataError("pixel values outside [0, 1] cannot be stored as IDX bytes")
    write_idx(images_path, pixels.astype(np.uint8))
    write_idx(labels_path, dataset.labels.astype(np.uint8))


def file_manifest(images_path, labels_path, source):
    def digest(p):
        return hashlib.sha256(Path(p).read_bytes()).hexdigest()

    return {"images": str(images_path), "labels": str(labels_path), "source": source,
            "sha256": {"images": digest(images_path), "labels": digest(labels_path)}}


def find_idx_pair(directory, split):
    """Locate ``{split}-images-idx3-ubyte[.gz]`` and labels in ``directory``."""
    directory = Path(directory)
    found = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        for suffix in ("", ".gz"):
            p = directory / f"{split}-{kind}{suffix}"
            if p.exists():
                found.append(p)
                break
        else:
            return None
    return tuple(found)


# -- synthetic -------------------------------------------------------------

def cluster_centroids(num_classes, dim, separation, center=None):
    """Centroids with pairwise spacing ``separation`` (unit stddev units).

    Scaled basis vectors when ``num_classes <= dim``; otherwise evenly spaced
    along the first axis. ``center`` shifts every centroid.
    """
    c = np.zeros((num_classes, dim))
    if num_classes <= dim:
        c[np.arange(num_classes), np.arange(num_classes)] = separation / math.sqrt(2.0)
    else:
        c[:, 0] = separation * np.arange(num_classes)
    if center is not None:
        c += as_tensor(center)
    return c


def make_clusters(rng, num_classes, dim, samples_per_class, separation, center=None):
    """Gaussian blobs with unit within-class stddev, class-major order."""
    if num_classes < 1 or samples_per_class < 1:
        raise ConfigError(f"num_classes and samples_per_class must be >= 1, got {num_classes}, {samples_per_class}")
    if dim < 2:
        raise ConfigError(f"dim must be >= 2, got {dim}")
    if not separation > 0:
        raise ConfigError(f"separation must be > 0, got {separation}")
    if center is not None and np.shape(center) not in ((), (dim,)):
        raise ShapeError(f"center must be a scalar or length-{dim} vector")
    centroids = cluster_centroids(num_classes, dim, separation, center)
    noise = rng.normal((num_classes, samples_per_class, dim))
    inputs = (centroids[:, None, :] + noise).reshape(-1, dim)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    return LabeledDataset(inputs, labels)


# -- evaluation sets ---------------------------------------------------------

def fit_shape(inputs, shape):
    """Center-crop and/or zero-pad each sample to ``shape`` (same rank)."""
    inputs = as_tensor(inputs)
    shape = tuple(shape)
    if len(shape) != inputs.ndim - 1:
        raise ShapeError(f"cannot fit samples of rank {inputs.ndim - 1} to shape {shape}")
    out = np.zeros((inputs.shape[0],) + shape)
    src, dst = [slice(None)], [slice(None)]
    for have, want in zip(inputs.shape[1:], shape):
        if have >= want:
            lo = (have - want) // 2
            src.append(slice(lo, lo + want))
            dst.append(slice(None))
        else:
            lo = (want - have) // 2
            src.append(slice(None))
            dst.append(slice(lo, lo + have))
    out[tuple(dst)] = inputs[tuple(src)]
    return out


def inject_invalid(valid_test, invalid_pool, fraction, rng):
    """Replace ``floor(fraction * n)`` random positions with pool items.

    Pool items are drawn without replacement when the pool is large enough.
    Replaced positions get ``validity_labels == True`` and label ``NO_CLASS``.
    """
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    if len(invalid_pool) == 0:
        raise DataError("invalid pool is empty")
    if invalid_pool.sample_shape != valid_test.sample_shape:
        raise ShapeError(f"invalid pool samples {invalid_pool.sample_shape} do not match "
                         f"valid samples {valid_test.sample_shape}; fit them with fit_shape first")
    n = len(valid_test)
    k = math.floor(fraction * n)
    inputs = valid_test.inputs.copy()
    labels = valid_test.labels.copy()
    flags = np.zeros(n, dtype=bool)
    if k:
        pos = rng.choice(n, k, replace=False)
        src = rng.choice(len(invalid_pool), k, replace=len(invalid_pool) < k)
        inputs[pos] = invalid_pool.inputs[src]
        labels[pos] = NO_CLASS
        flags[pos] = True
    return LabeledDataset(inputs, labels, flags)


def load_dataset(spec, rng=None, base_dir="."):
    """Load a dataset from a JSON-style spec.

    ``{"kind": "idx", "images": ..., "labels": ...}``,
    ``{"kind": "npz", "path": ...}`` or
    ``{"kind": "clusters", "num_classes", "dim", "samples_per_class", "separation", "center"?, "seed"?}``.
    """
    kind = spec.get("kind")
    base = Path(base_dir)
    if kind == "idx":
        return load_idx(base / spec["images"], base / spec["labels"])
    if kind == "npz":
        return LabeledDataset.load_npz(base / spec["path"])
    if kind == "clusters":
        if "seed" in spec:
            rng = Rng(spec["seed"])
        if rng is None:
            raise ConfigError("clusters dataset needs a seed")
        return make_clusters(rng, spec["num_classes"], spec["dim"], spec["samples_per_class"],
                             spec["separation"], spec.get("center"))
    raise ConfigError(f"unknown dataset kind {kind!r}; expected idx, npz or clusters")


def dump_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
