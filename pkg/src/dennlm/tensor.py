"""Dense numeric kernel shared by the network code.

Matrices are plain row-major numpy arrays. The working precision is taken
from the ``DENNLM_PRECISION`` environment variable (``32`` or ``64``,
default ``32``); gradient checks and oracles run in 64-bit.
"""

import os
import warnings

import numpy as np

PRECISION_ENV = "DENNLM_PRECISION"
CE_FLOOR = 1e-30


def default_dtype():
    value = os.environ.get(PRECISION_ENV, "32").strip()
    if value == "32":
        return np.float32
    if value == "64":
        return np.float64
    raise ValueError(f"{PRECISION_ENV} must be 32 or 64, got {value!r}")


class Rng:
    """Seeded, splittable random stream.

    Backed by the Philox counter-based generator, so a given seed yields
    the same stream on every platform.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def split(self, *keys):
        """Independent child stream keyed by integers; does not advance self."""
        ss = np.random.SeedSequence([self.seed, *map(int, keys)])
        return Rng(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def normal(self, size):
        return self._gen.standard_normal(size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice_without_replacement(self, n, k):
        return self._gen.choice(n, size=k, replace=False)

    def uniform(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)


def check_finite(x, what="matrix"):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite entries in {what}")
    return x


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-d matrices")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def tanh_elem(x):
    return np.tanh(x)


def sigmoid_elem(x):
    x = np.asarray(x)
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x):
    x = np.asarray(x)
    z = x - x.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def cross_entropy_rows(p, targets):
    """Mean natural-log cross-entropy of row distributions ``p`` at ``targets``."""
    p = np.asarray(p)
    targets = np.asarray(targets)
    picked = p[np.arange(len(targets)), targets].astype(np.float64)
    if np.any(picked <= 0.0):
        warnings.warn(f"zero target probability clamped at {CE_FLOOR:g}", RuntimeWarning, stacklevel=2)
        picked = np.maximum(picked, CE_FLOOR)
    return float(-np.mean(np.log(picked)))


def gaussian_init(rng, rows, cols, stddev, dtype=None):
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    dtype = dtype or default_dtype()
    return (rng.normal((rows, cols)) * stddev).astype(dtype)
