"""Comparison methods with honest size accounting: hashing, pruning, rank factors.

These exist so the trainer and the size reports can compare the main
method against the alternatives it claims to beat, under storage
accounting that charges each method what it would really cost on disk
(CSR overhead for pruned, bin values only for hashed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import FLOAT64, as_matrix
from .errors import ArgumentError, DimensionError, InfeasiblePlanError, ScheduleError

# 64-bit mixing hash, fixed for cross-platform reproducibility:
#   x = row*K1 ^ col*K2 ^ seed, then two xorshift-multiply rounds
#   (shift 33, multipliers M1 then M2), bin = x mod K
_K1 = 0x9E3779B97F4A7C15
_K2 = 0xC2B2AE3D27D4EB4F
_M1 = 0xFF51AFD7ED558CCD
_M2 = 0xC4CEB9FE1A85EC53
_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    x = (x ^ (x >> 33)) & _MASK64
    x = (x * _M1) & _MASK64
    x = (x ^ (x >> 33)) & _MASK64
    x = (x * _M2) & _MASK64
    return x


@dataclass(frozen=True)
class HashedLayer:
    """K learnable bin values; the cell->bin mapping is recomputed from the seed."""

    bins: np.ndarray
    q: int
    r_dim: int
    hash_seed: int

    def __post_init__(self):
        bins = np.ascontiguousarray(self.bins, dtype=FLOAT64).ravel()
        if bins.size < 1:
            raise ArgumentError("bins must hold at least one value")
        object.__setattr__(self, "bins", bins)

    @property
    def k(self) -> int:
        return self.bins.size

    def stored_bytes(self, value_bytes: int = 4) -> int:
        # values plus the 8-byte seed; the mapping itself is never stored
        return self.k * value_bytes + 8


def hashed_lookup(layer: HashedLayer, row: int, col: int) -> float:
    """Weight at (row, col): bins[mix(row, col, seed) mod K]."""
    if not (0 <= row < layer.q and 0 <= col < layer.r_dim):
        raise ArgumentError(f"cell ({row}, {col}) outside {layer.q}x{layer.r_dim}")
    x = (row * _K1) ^ (col * _K2) ^ (layer.hash_seed & _MASK64)
    return float(layer.bins[_mix64(x & _MASK64) % layer.k])


def hash_index_matrix(q: int, r_dim: int, hash_seed: int, k: int) -> np.ndarray:
    """The full (q, r_dim) cell->bin index map, vectorized; bit-equal to
    ``hashed_lookup`` cell by cell."""
    rows = np.arange(q, dtype=np.uint64)[:, None] * np.uint64(_K1)
    cols = np.arange(r_dim, dtype=np.uint64)[None, :] * np.uint64(_K2)
    x = rows ^ cols ^ np.uint64(hash_seed & _MASK64)
    for mult in (_M1, _M2):
        x = x ^ (x >> np.uint64(33))
        x = x * np.uint64(mult)
    return (x % np.uint64(k)).astype(np.int64)


def materialize_hashed(layer: HashedLayer) -> np.ndarray:
    return layer.bins[hash_index_matrix(layer.q, layer.r_dim, layer.hash_seed, layer.k)]


def csr_size(nnz: int, rows: int, value_bytes: int = 4, index_bytes: int = 4) -> int:
    """Bytes to store an nnz-element sparse matrix in CSR form."""
    if min(nnz, rows, value_bytes, index_bytes) < 0:
        raise ArgumentError("csr_size arguments must be >= 0")
    return nnz * value_bytes + nnz * index_bytes + (rows + 1) * index_bytes


def csr_budget_nnz(q: int, r_dim: int, alpha: float,
                   value_bytes: int = 4, index_bytes: int = 4) -> int:
    """Largest nnz whose CSR size fits in alpha * dense bytes."""
    budget = Fraction(alpha) * (q * r_dim * value_bytes)
    free = budget - (q + 1) * index_bytes
    if free < 0:
        return 0
    return int(free / (value_bytes + index_bytes))


@dataclass(frozen=True)
class PrunedLayer:
    """Dense weights behind a 0/1 mask driven by a density schedule."""

    weights: np.ndarray
    mask: np.ndarray
    schedule: tuple[tuple[int, float], ...]

    def __post_init__(self):
        w = as_matrix(self.weights, dtype=FLOAT64, name="weights")
        m = as_matrix(self.mask, dtype=FLOAT64, name="mask")
        if w.shape != m.shape:
            raise DimensionError(f"mask shape {m.shape} != weights shape {w.shape}")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ArgumentError("mask entries must be 0 or 1")
        sched = tuple(sorted((int(s), float(d)) for s, d in self.schedule))
        densities = [d for _, d in sched]
        if any(later > earlier for earlier, later in zip(densities, densities[1:])):
            raise ScheduleError("schedule densities must be non-increasing")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "schedule", sched)

    @property
    def nnz(self) -> int:
        return int(self.mask.sum())

    @property
    def density(self) -> float:
        return self.nnz / self.mask.size


def fresh_pruned(weights: np.ndarray, schedule: Sequence[tuple[int, float]]) -> PrunedLayer:
    w = as_matrix(weights, dtype=FLOAT64, name="weights")
    return PrunedLayer(weights=w, mask=np.ones_like(w), schedule=tuple(schedule))


def prune_step(layer: PrunedLayer, step: int) -> PrunedLayer:
    """Apply the schedule entry for ``step``; a no-op for unscheduled steps.

    Zeroes the mask over the smallest-magnitude surviving weights until the
    target density is reached; ties break by (row, col) order. Survivor
    sets are nested: pruning only ever removes from current survivors.
    """
    target = dict(layer.schedule).get(step)
    if target is None:
        return layer
    total = layer.mask.size
    target_nnz = int(round(target * total))
    current = layer.nnz
    if target_nnz > current:
        raise ScheduleError(
            f"schedule step {step} asks for density {target:.4g} "
            f"({target_nnz} weights) but only {current} survive")
    if target_nnz == current:
        return layer
    rows, cols = np.nonzero(layer.mask)
    magnitudes = np.abs(layer.weights[rows, cols])
    order = np.lexsort((cols, rows, magnitudes))
    kill = order[: current - target_nnz]
    mask = layer.mask.copy()
    mask[rows[kill], cols[kill]] = 0.0
    return PrunedLayer(weights=layer.weights, mask=mask, schedule=layer.schedule)


def density_schedule(q: int, r_dim: int, alpha: float, steps: Sequence[int]) -> tuple[tuple[int, float], ...]:
    """Geometric ramp from dense down to the CSR-budget density over ``steps``.

    The last entry lands exactly on the density whose nnz fits the CSR
    byte budget for ``alpha``, so a layer pruned through the whole
    schedule meets its storage target exactly.
    """
    if not steps:
        return ()
    total = q * r_dim
    final_nnz = csr_budget_nnz(q, r_dim, alpha)
    final = final_nnz / total
    ramp_floor = max(final, 1.0 / total)
    out = []
    for i, step in enumerate(sorted(steps), start=1):
        density = ramp_floor ** (i / len(steps))
        out.append((step, max(density, final)))
    out[-1] = (out[-1][0], final)
    return tuple(out)


@dataclass(frozen=True)
class RankFactLayer:
    """Plain rank factorization: W = xf @ wf with outer dims pinned to the target."""

    xf: np.ndarray
    wf: np.ndarray

    def __post_init__(self):
        xf = as_matrix(self.xf, dtype=FLOAT64, name="xf")
        wf = as_matrix(self.wf, dtype=FLOAT64, name="wf")
        if xf.shape[1] != wf.shape[0]:
            raise DimensionError(
                f"rank mismatch: xf is {xf.shape[0]}x{xf.shape[1]}, "
                f"wf is {wf.shape[0]}x{wf.shape[1]}")
        object.__setattr__(self, "xf", xf)
        object.__setattr__(self, "wf", wf)

    @property
    def rank(self) -> int:
        return self.xf.shape[1]

    @property
    def stored_elems(self) -> int:
        return self.xf.size + self.wf.size

    def materialize(self) -> np.ndarray:
        return np.matmul(self.xf, self.wf)


def plan_rank_network(
    shapes: Sequence[tuple[str, int, int]],
    target_ratio: float,
) -> dict[str, int]:
    """Per-matrix ranks for plain factorization under a global ratio.

    A q x r matrix at rank k stores k*(q+r) values, so the floor is rank 1.
    Matrices that cannot afford rank 1 at the pooled ratio pin there; the
    rest absorb the overage, weighted by element count. Raises when the
    all-rank-1 total still exceeds the budget.
    """
    if not shapes:
        raise ArgumentError("shapes must be nonempty")
    names = [name for name, _, _ in shapes]
    qr = {name: q * r for name, q, r in shapes}
    unit = {name: q + r for name, q, r in shapes}
    total_orig = sum(qr.values())
    budget = Fraction(target_ratio) * total_orig
    if sum(unit.values()) > budget:
        raise InfeasiblePlanError(
            f"rank factorization cannot reach {target_ratio}: rank-1 floor is "
            f"{sum(unit.values()) / total_orig:.6g}",
            {name: unit[name] / qr[name] for name in names})
    pinned: set[str] = set()
    ranks: dict[str, int] = {}
    for _ in range(len(shapes) + 1):
        unpinned = [n for n in names if n not in pinned]
        if not unpinned:
            break
        remaining = budget - sum(unit[p] * ranks[p] for p in pinned)
        alpha_u = remaining / sum(qr[n] for n in unpinned)
        newly = [n for n in unpinned if alpha_u * qr[n] < unit[n]]
        if newly:
            for n in newly:
                pinned.add(n)
                ranks[n] = 1
            continue
        for n in unpinned:
            ranks[n] = int(alpha_u * qr[n] / unit[n])
        break
    total = sum(unit[n] * ranks[n] for n in names)
    assert total <= budget
    return ranks


def same_size_hint(shapes: Sequence[tuple[str, int, int]], target_ratio: float) -> float:
    """Width multiplier s with total-params(s) ~= target * total-params(1).

    Treats the shapes as one feedforward chain whose interior dims all
    scale by s while the first input and last output stay fixed; a single
    shape is taken as a hidden-to-hidden block (both dims scale, so a
    square one shrinks quadratically). Advisory only; callers round the
    scaled widths themselves.
    """
    if not shapes:
        raise ArgumentError("shapes must be nonempty")
    if target_ratio <= 0:
        raise ArgumentError(f"target_ratio must be > 0, got {target_ratio}")
    single = len(shapes) == 1
    c2 = c1 = c0 = 0
    for i, (_, q, r) in enumerate(shapes):
        q_fixed = i == 0 and not single
        r_fixed = i == len(shapes) - 1 and not single
        scaled = (not q_fixed) + (not r_fixed)
        if scaled == 2:
            c2 += q * r
        elif scaled == 1:
            c1 += q * r
        else:
            c0 += q * r
    goal = target_ratio * (c2 + c1 + c0)
    if c2 == 0:
        return (goal - c0) / c1 if c1 else 1.0
    disc = c1 * c1 + 4 * c2 * (goal - c0)
    if disc < 0:
        return 0.0
    return (-c1 + math.sqrt(disc)) / (2 * c2)
