"""Dense float64 matrices and reproducible random streams.

A "matrix" throughout the package is a C-contiguous 2-D ``numpy.ndarray`` of
``float64``: batches are rows, features are columns.

Randomness comes from :class:`Rng`, a thin owner of a numpy ``Generator``
driven by the Philox-4x64 counter-based bit generator. Philox output is fully
specified by its key and counter, so a given seed reproduces the same stream on
every platform. Child streams are derived through ``SeedSequence`` spawn keys,
which lets independent consumers (weight init, per-pathway dropout, batch
shuffling, data splitting) draw without perturbing one another.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

FLOAT = np.float64


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a contiguous float64 matrix, rejecting anything not 2-D."""
    arr = np.ascontiguousarray(x, dtype=FLOAT)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{what} contains non-finite entries")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def column_moments(x) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and biased (divide-by-rows) variance, each shaped 1 x cols."""
    x = as_matrix(x)
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise DomainError(f"column_moments needs a non-empty matrix, got shape {x.shape}")
    mean = x.mean(axis=0, keepdims=True)
    # One refinement pass removes the rounding error of the first mean
    # (exact for constant columns).
    mean = mean + (x - mean).mean(axis=0, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=0, keepdims=True)
    return mean, var


class Rng:
    """Single-owner random stream. Not safe to share between threads."""

    def __init__(self, seed: int, *key: int):
        if seed < 0 or seed >= 2**64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, *key: int) -> "Rng":
        """A new, independent stream identified by ``key`` under the same seed."""
        return Rng(self.seed, *self.key, *key)

    def normal(self, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
        return rng_normal(self, rows, cols, mean, stddev)

    def uniform(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.random((rows, cols), dtype=FLOAT)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def standard_normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size, dtype=FLOAT)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"


def rng_normal(rng: Rng, rows: int, cols: int, mean: float = 0.0, stddev: float = 1.0) -> np.ndarray:
    if stddev < 0:
        raise DomainError(f"stddev must be >= 0, got {stddev}")
    if stddev == 0:
        return np.full((rows, cols), float(mean), dtype=FLOAT)
    z = rng.standard_normal((rows, cols))
    return np.ascontiguousarray(mean + stddev * z)
