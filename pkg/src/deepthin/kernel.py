"""Fused inference on the compressed form, with partial-product reuse.

``fused_matmul`` computes Y = X @ decompress(fp) without materializing the
dense matrix. Each output column is covered by "runs": maximal contiguous
segments of the flattened auxiliary vector lying within one auxiliary row.
A run contributes (xf scalar) * dot(input slice, wf segment); the dot is
computed once per distinct (wf offset, input slice) pair and reused by
every column whose phase produces the same pair, then scaled afterwards
(scale-after-dot, one extra multiply per run instead of one per element).

Columns j and j' share all their run dot products exactly when they share
a phase, (j*q) % n, so reuse repeats with period n / gcd(n, q) columns.
The set of distinct dot products for one input row is exactly a set of
sliding-window correlation coefficients between that row and wf, which is
what the implementation computes.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import FLOAT32, FLOAT64, as_matrix, matmul
from .errors import ArgumentError, DimensionError, UnsupportedConfigurationError
from .factor import FactorPair, decompress
from .planner import LayerPlan

_COMBINE_CHUNK_BYTES = 64 << 20

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")


def apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "tanh":
        return np.tanh(z)
    raise ArgumentError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def activation_grad(name: str, z: np.ndarray) -> np.ndarray:
    """Elementwise derivative at pre-activation z (relu'(0) defined as 0)."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    raise ArgumentError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


@dataclass
class OpCount:
    """Multiply/add counts of the canonical run-memoized algorithm.

    A run of length L costs L multiplies and L-1 adds for its dot product
    (only on first evaluation), plus one scale multiply per evaluation and
    one accumulation add per evaluation after a column's first run. The
    vectorized implementation performs the same dot products in batched
    form; these counters describe that algorithm, not numpy's internals.
    """

    multiplies: int = 0
    adds: int = 0


@dataclass
class ReuseTable:
    """Hit/miss accounting for partial-product reuse within one multiply.

    ``misses`` counts distinct run dot products actually computed;
    ``hits`` counts run evaluations served from the table. Their sum is
    the total number of run evaluations requested. With
    ``record_entries`` the table also stores each computed dot keyed by
    (wf_offset, input_row, run_start, run_length); run_start is part of
    the key because interior runs share offset 0 and full length but pair
    with different input slices.
    """

    hits: int = 0
    misses: int = 0
    record_entries: bool = False
    entries: dict[tuple[int, int, int, int], float] = field(default_factory=dict)


class _Layout:
    """Precomputed run/reuse structure for one (q, r_dim, n) plan; rank 1."""

    def __init__(self, plan: LayerPlan):
        q, r, n = plan.q, plan.r_dim, plan.n
        g = math.gcd(n, q)
        self.period = n // g
        self.n_phases = min(self.period, r)
        self.n_lags = q + n - 1
        step = q // g  # auxiliary rows advanced per period of columns

        offsets: list[np.ndarray] = []
        starts: list[np.ndarray] = []
        lengths: list[np.ndarray] = []
        xrow0: list[np.ndarray] = []
        kcount = np.empty(self.n_phases, dtype=np.int64)
        for t in range(self.n_phases):
            p = (t * q) % n
            t0 = np.concatenate(([0], np.arange(n - p, q, n))) if n - p < q else np.zeros(1, int)
            o = np.zeros_like(t0)
            o[0] = p
            length = np.minimum(n - o, q - t0)
            offsets.append(o)
            starts.append(t0)
            lengths.append(length)
            xrow0.append((t * q + t0) // n)
            kcount[t] = t0.size
        self.kcount = kcount
        self.offsets = offsets
        self.starts = starts
        self.lengths = lengths

        self.distinct_runs = int(kcount.sum())
        self.sum_distinct_len = int(sum(int(l.sum()) for l in lengths))
        cols_per_phase = (r - np.arange(self.n_phases) + self.period - 1) // self.period
        self.total_runs = int((kcount * cols_per_phase).sum())

        kmax = int(kcount.max())
        self.kmax = kmax
        lag = np.zeros((r, kmax), dtype=np.int64)
        xrow = np.zeros((r, kmax), dtype=np.int64)
        mask = np.zeros((r, kmax), dtype=FLOAT64)
        for t in range(self.n_phases):
            k = int(kcount[t])
            cols = np.arange(t, r, self.period)
            lag[cols, :k] = (n - 1) + starts[t] - offsets[t]
            xrow[cols, :k] = xrow0[t][None, :] + (np.arange(cols.size) * step)[:, None]
            mask[cols, :k] = 1.0
        self.lag = lag
        self.xrow = xrow
        self.mask = mask


@lru_cache(maxsize=128)
def _layout_for(plan: LayerPlan) -> _Layout:
    return _Layout(plan)


def _scaled_weights(fp: FactorPair, layout: _Layout) -> np.ndarray:
    """xf gathered into the (r_dim, kmax) combine table; cached per pair."""
    cached = getattr(fp, "_combine_weights", None)
    if cached is None:
        xf = fp.xf.ravel().astype(FLOAT64)
        cached = xf[layout.xrow] * layout.mask
        object.__setattr__(fp, "_combine_weights", cached)
    return cached


class ReusePrediction(tuple):
    """(distinct_runs, total_runs) per input row."""

    __slots__ = ()

    def __new__(cls, distinct_runs: int, total_runs: int):
        return super().__new__(cls, (distinct_runs, total_runs))

    @property
    def distinct_runs(self) -> int:
        return self[0]

    @property
    def total_runs(self) -> int:
        return self[1]


def predict_reuse(plan: LayerPlan, batch: int = 1) -> ReusePrediction:
    """Analytic reuse forecast for one input row of a fused multiply.

    ``distinct_runs`` counts distinct (wf segment, input slice) dot
    products; ``total_runs`` counts run evaluations over all columns. A
    fused multiply over ``batch`` rows must report exactly
    misses == distinct_runs * batch and
    hits == total_runs * batch - misses.
    """
    if batch < 1:
        raise ArgumentError(f"batch must be >= 1, got {batch}")
    q, r, n = plan.q, plan.r_dim, plan.n
    period = n // math.gcd(n, q)
    distinct = 0
    total = 0
    for t in range(min(period, r)):
        p = (t * q) % n
        runs = 1 + (p + q - 1) // n
        cols = (r - t + period - 1) // period
        distinct += runs
        total += runs * cols
    return ReusePrediction(distinct, total)


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("DEEPTHIN_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ArgumentError(f"threads must be >= 1, got {threads}")
    return threads


def _combine_block(y, dots, xfw, lag, cols):
    gathered = dots[:, lag[cols]]
    y[:, cols] = np.einsum("bjk,jk->bj", gathered, xfw[cols])


def fused_matmul(
    x,
    fp: FactorPair,
    *,
    reuse: ReuseTable | None = None,
    threads: int | None = None,
) -> tuple[np.ndarray, OpCount]:
    """Y = X @ decompress(fp), computed directly from the factors.

    Per input row, every distinct run dot product is computed exactly once
    (as a block of sliding correlations against wf) and reused by all
    columns sharing the phase, then scaled by its single xf entry. The
    result is float32 when both input and factors are float32 (with
    64-bit internal accumulation), float64 otherwise. For a fixed input,
    results are bit-identical for every thread count.
    """
    if fp.plan.rank != 1:
        raise UnsupportedConfigurationError(
            f"fused path supports rank 1 only, got rank {fp.plan.rank}")
    xm = as_matrix(x, name="input")
    plan = fp.plan
    if xm.shape[1] != plan.q:
        raise DimensionError(
            f"cannot multiply {xm.shape[0]}x{xm.shape[1]} by compressed "
            f"{plan.q}x{plan.r_dim}")
    threads = _resolve_threads(threads)
    layout = _layout_for(plan)
    batch, q = xm.shape
    r, n = plan.r_dim, plan.n

    out32 = xm.dtype == FLOAT32 and fp.dtype == FLOAT32
    x64 = xm.astype(FLOAT64, copy=False)
    wf = fp.wf.ravel().astype(FLOAT64, copy=False)

    # all distinct run dot products per row are correlation coefficients:
    # dots[b, (n-1) + run_start - wf_offset] == x[b, s:s+L] . wf[o:o+L]
    dots = np.empty((batch, layout.n_lags), dtype=FLOAT64)
    for b in range(batch):
        dots[b] = np.correlate(x64[b], wf, mode="full")

    xfw = _scaled_weights(fp, layout)
    y = np.empty((batch, r), dtype=FLOAT64)
    # column blocks bound the gather temporaries and carry the parallelism;
    # each worker owns disjoint output columns, so per-cell reduction order
    # (and therefore every bit of the result) is independent of thread count
    chunk = max(1, _COMBINE_CHUNK_BYTES // (8 * batch * layout.kmax))
    n_blocks = min(r, max(-(-r // chunk), threads))
    blocks = np.array_split(np.arange(r), n_blocks)
    if threads == 1 or len(blocks) == 1:
        for cols in blocks:
            _combine_block(y, dots, xfw, layout.lag, cols)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda cols: _combine_block(y, dots, xfw, layout.lag, cols), blocks))

    ops = OpCount(
        multiplies=batch * (layout.sum_distinct_len + layout.total_runs),
        adds=batch * (layout.sum_distinct_len - layout.distinct_runs)
        + batch * (layout.total_runs - r),
    )
    if reuse is not None:
        reuse.misses += layout.distinct_runs * batch
        reuse.hits += layout.total_runs * batch - layout.distinct_runs * batch
        if reuse.record_entries:
            for t in range(layout.n_phases):
                offs, sts, lens = layout.offsets[t], layout.starts[t], layout.lengths[t]
                lags = (n - 1) + sts - offs
                for b in range(batch):
                    row = dots[b]
                    for o, s, l, k in zip(offs, sts, lens, lags):
                        reuse.entries[(int(o), b, int(s), int(l))] = float(row[k])
    return (y.astype(FLOAT32) if out32 else y), ops


def layer_forward(
    x,
    fp: FactorPair,
    bias,
    activation: str = "identity",
    *,
    threads: int | None = None,
) -> np.ndarray:
    """One layer: activation(X @ W + bias) on the compressed form.

    Rank-1 pairs take the fused path; higher ranks fall back to
    decompress-then-multiply with a warning.
    """
    bias = np.asarray(bias, dtype=FLOAT64).ravel()
    if bias.shape[0] != fp.plan.r_dim:
        raise DimensionError(
            f"bias length {bias.shape[0]} != output width {fp.plan.r_dim}")
    if fp.plan.rank == 1:
        z, _ = fused_matmul(x, fp, threads=threads)
    else:
        warnings.warn(
            f"rank {fp.plan.rank} pair: fused path requires rank 1, "
            "falling back to decompress + matmul", RuntimeWarning, stacklevel=2)
        z = matmul(x, decompress(fp))
    return apply_activation(activation, z + bias)
