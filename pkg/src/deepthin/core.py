"""Dense matrix helpers, deterministic RNG, and shared numeric utilities.

Dense matrices throughout the library are plain 2-D numpy arrays in
row-major (C) order. ``as_matrix`` is the single validation gate: every
public operation funnels its array inputs through it, so downstream code
can assume a finite, contiguous, floating-point 2-D array.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, DimensionError

FLOAT32 = np.float32
FLOAT64 = np.float64

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def as_matrix(a, *, dtype=None, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a 2-D, C-contiguous float array.

    Raises ``DimensionError`` for non-2-D input and ``ArgumentError`` for
    non-finite entries. Only copies when layout or dtype conversion
    requires it.
    """
    arr = np.asarray(a)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if dtype is None:
        dtype = arr.dtype if arr.dtype in _ALLOWED_DTYPES else FLOAT64
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} contains non-finite entries")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: one seed, one bit-identical stream."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Derive ``count`` independent child generators from one seed.

    Children are a pure function of (seed, index); parallel callers get
    the same streams regardless of scheduling or thread count.
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(c) for c in children]


def sample_normal(rng: np.random.Generator, mean: float, stddev: float, shape) -> np.ndarray:
    """i.i.d. normal samples with the given mean and standard deviation."""
    if stddev < 0:
        raise ArgumentError(f"stddev must be >= 0, got {stddev}")
    # scale-after-draw keeps the stream identical for every stddev,
    # and makes stddev=0 return the mean exactly
    return rng.standard_normal(shape) * stddev + mean


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape checking.

    This is the reference multiply used by oracles and training. It is
    deterministic for fixed inputs within a process; the fused kernel has
    its own, stricter thread-count-independence guarantee.
    """
    am = as_matrix(a, name="left operand")
    bm = as_matrix(b, name="right operand")
    if am.shape[1] != bm.shape[0]:
        raise DimensionError(
            f"cannot multiply {am.shape[0]}x{am.shape[1]} by {bm.shape[0]}x{bm.shape[1]}"
        )
    out_dtype = np.result_type(am.dtype, bm.dtype)
    return np.matmul(am.astype(out_dtype, copy=False), bm.astype(out_dtype, copy=False))


def max_abs_diff(a, b) -> float:
    """Largest elementwise absolute difference; infinity on shape mismatch."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return float("inf")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a.astype(FLOAT64) - b.astype(FLOAT64))))


def rel_error(actual, expected) -> float:
    """Max absolute difference scaled by the largest expected magnitude."""
    expected = np.asarray(expected, dtype=FLOAT64)
    scale = float(np.max(np.abs(expected))) if expected.size else 0.0
    return max_abs_diff(actual, expected) / (scale if scale > 0 else 1.0)
