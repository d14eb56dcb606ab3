"""Dense float64 arrays and seeded randomness.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C order.
The helpers here add the shape checks the rest of the package relies on:
no implicit broadcasting, loud shape errors.
"""

import zlib

import numpy as np

from .errors import DomainError, ShapeError

DTYPE = np.float64

_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def as_tensor(x):
    """Return ``x`` as a C-contiguous float64 array (copying only if needed)."""
    return np.ascontiguousarray(x, dtype=DTYPE)


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def elementwise(op, a, b):
    a, b = as_tensor(a), as_tensor(b)
    if op not in _OPS:
        raise DomainError(f"unknown elementwise op {op!r}; expected one of {sorted(_OPS)}")
    _same_shape(a, b, op)
    return _OPS[op](a, b)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b


def mse(a, b):
    """Mean squared error over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mse")
    if a.size == 0:
        raise DomainError("mse of empty tensors is undefined")
    d = a - b
    return float(np.mean(d * d))


def mse_rows(a, b):
    """Per-row MSE of two (n, d) arrays; row i equals ``mse(a[i], b[i])``."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mse_rows")
    if a.ndim != 2 or a.shape[1] == 0:
        raise DomainError(f"mse_rows expects a non-empty (n, d) array, got {a.shape}")
    d = a - b
    return np.mean(d * d, axis=1)


def stage_seed(seed, tag):
    """Derive a per-stage seed as ``seed XOR crc32(tag)``."""
    return (int(seed) ^ zlib.crc32(tag.encode("utf-8"))) & 0xFFFFFFFFFFFFFFFF


class Rng:
    """Counter-based (Philox) random stream owned by one caller.

    Two instances built from the same seed yield the same sequence of draws.
    Use :meth:`split` to hand independent streams to workers or sub-stages.
    """

    def __init__(self, seed):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise DomainError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.Philox(key=seed))

    def __repr__(self):
        return f"Rng(seed={self.seed})"

    def split(self, index):
        """Independent child stream for ``(seed, index)``; does not advance self."""
        state = np.random.SeedSequence([self.seed, int(index)]).generate_state(2, np.uint32)
        return Rng(int(state[0]) | (int(state[1]) << 32))

    def normal(self, shape, mean=0.0, stddev=1.0):
        return draw_normal(self, shape, mean, stddev)

    def uniform(self, shape, low=0.0, high=1.0):
        return self._gen.uniform(low, high, size=shape).astype(DTYPE)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)


def draw_normal(rng, shape, mean=0.0, stddev=1.0):
    if stddev < 0:
        raise DomainError(f"stddev must be non-negative, got {stddev}")
    shape = tuple(shape) if np.iterable(shape) else (int(shape),)
    if stddev == 0:
        return np.full(shape, mean, dtype=DTYPE)
    return rng._gen.normal(mean, stddev, size=shape).astype(DTYPE)
