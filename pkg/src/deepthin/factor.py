"""The compressed representation: factors, initialization, re-layout, decompression.

The stored form of a q x r_dim matrix W is a pair of rank factors whose
product is an auxiliary m x n matrix. Flattening that product row-major
into a vector v and filling W column-major (v[k] -> W[k % q, k // q])
breaks the row/column proportionality a plain low-rank product would
impose, while keeping each output column contiguous in v. The trailing
m*n - q*r_dim elements of v are sliced off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import as_matrix, sample_normal
from .errors import ArgumentError, DimensionError
from .planner import LayerPlan


@dataclass(frozen=True)
class FactorPair:
    """Learnable factors (xf: m x rank, wf: rank x n) plus their plan.

    Immutable once constructed; safe to share across threads.
    """

    xf: np.ndarray
    wf: np.ndarray
    plan: LayerPlan

    def __post_init__(self):
        xf = as_matrix(self.xf, name="xf")
        wf = as_matrix(self.wf, name="wf")
        p = self.plan
        if xf.shape != (p.m, p.rank):
            raise DimensionError(f"xf must be {p.m}x{p.rank}, got {xf.shape[0]}x{xf.shape[1]}")
        if wf.shape != (p.rank, p.n):
            raise DimensionError(f"wf must be {p.rank}x{p.n}, got {wf.shape[0]}x{wf.shape[1]}")
        # own private read-only copies; never flip flags on caller arrays
        if xf.flags.writeable:
            xf = xf.copy()
        if wf.flags.writeable:
            wf = wf.copy()
        xf.setflags(write=False)
        wf.setflags(write=False)
        object.__setattr__(self, "xf", xf)
        object.__setattr__(self, "wf", wf)

    @property
    def dtype(self):
        return np.result_type(self.xf.dtype, self.wf.dtype)

    def with_values(self, xf: np.ndarray, wf: np.ndarray) -> "FactorPair":
        return FactorPair(xf=xf, wf=wf, plan=self.plan)


def init_factors(plan: LayerPlan, sigma: float, rng: np.random.Generator) -> FactorPair:
    """Variance-preserving random initialization.

    xf entries are N(0, sigma^2) and wf entries N(0, 1/rank), so every
    reconstructed weight, a sum of rank independent zero-mean products,
    has variance sigma^2 regardless of rank.
    """
    if not sigma > 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")
    xf = sample_normal(rng, 0.0, sigma, (plan.m, plan.rank))
    wf = sample_normal(rng, 0.0, 1.0 / math.sqrt(plan.rank), (plan.rank, plan.n))
    return FactorPair(xf=xf, wf=wf, plan=plan)


def relayout_index(flat: int, plan: LayerPlan) -> tuple[int, int]:
    """Destination (row, col) in the q x r_dim matrix for v[flat].

    The flattened auxiliary vector fills the target column-major, so one
    output column is built from consecutive v entries and may span
    multiple (or only part of a) row of the auxiliary matrix.
    """
    if not 0 <= flat < plan.q * plan.r_dim:
        raise ArgumentError(
            f"flat index {flat} out of range for {plan.q}x{plan.r_dim} target")
    return flat % plan.q, flat // plan.q


def decompress(fp: FactorPair) -> np.ndarray:
    """Materialize the dense q x r_dim matrix from the factors."""
    p = fp.plan
    v = np.matmul(fp.xf, fp.wf).ravel()
    qr = p.q * p.r_dim
    # column-major fill of the leading qr elements; surplus tail discarded
    return np.ascontiguousarray(v[:qr].reshape(p.r_dim, p.q).T)


def phase(col: int, plan: LayerPlan) -> int:
    """Offset into wf at which target column ``col`` begins.

    Columns sharing a phase slice wf identically, so the number of
    distinct phases, n / gcd(n, q), is the repetition period of scaled
    blocks across the columns.
    """
    if not 0 <= col < plan.r_dim:
        raise ArgumentError(f"col {col} out of range for r_dim {plan.r_dim}")
    return (col * plan.q) % plan.n


def phase_count(plan: LayerPlan) -> int:
    """Number of distinct phases over all columns: n / gcd(n, q), capped by r_dim."""
    return min(plan.n // math.gcd(plan.n, plan.q), plan.r_dim)
