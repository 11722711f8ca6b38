"""Compression planning: choose (m, n) per matrix and distribute a network ratio.

A compressed matrix stores rank * (m + n) values in place of q * r_dim, so
the per-matrix ratio is rank * (m + n) / (q * r_dim). Feasibility of a
column count n reduces to the integer quadratic

    rank * (q*r_dim + n**2) <= alpha * q*r_dim * n

obtained by substituting the real-relaxed lower bound m = q*r_dim / n.
All boundary decisions below use exact rational arithmetic (the float
``alpha`` is converted to the exact fraction it denotes), so plans are
bit-reproducible and never misclassified by rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .errors import ArgumentError, InfeasiblePlanError

_COPRIME_SCAN_LIMIT = 100_000


@dataclass(frozen=True)
class LayerPlan:
    """Chosen compression parameters for one q x r_dim matrix."""

    q: int
    r_dim: int
    rank: int
    m: int
    n: int
    achieved_ratio: float = field(init=False)
    lcm_nq: int = field(init=False)

    def __post_init__(self):
        for label, v in (("q", self.q), ("r_dim", self.r_dim), ("rank", self.rank),
                         ("m", self.m), ("n", self.n)):
            if v < 1:
                raise ArgumentError(f"{label} must be >= 1, got {v}")
        if self.m * self.n < self.q * self.r_dim:
            raise ArgumentError(
                f"m*n = {self.m * self.n} must cover q*r_dim = {self.q * self.r_dim}"
            )
        object.__setattr__(
            self, "achieved_ratio",
            self.rank * (self.m + self.n) / (self.q * self.r_dim),
        )
        object.__setattr__(self, "lcm_nq", math.lcm(self.n, self.q))

    @property
    def original_elems(self) -> int:
        return self.q * self.r_dim

    @property
    def compressed_elems(self) -> int:
        return self.rank * (self.m + self.n)


@dataclass(frozen=True)
class NetworkPlan:
    """Per-layer plans after overhead redistribution against a global ratio."""

    layers: tuple[tuple[str, LayerPlan], ...]
    target_ratio: float
    achieved_total_ratio: float
    floor_hits: tuple[str, ...]
    bias_counts: tuple[int, ...] = ()

    def plan_for(self, name: str) -> LayerPlan:
        for layer_name, plan in self.layers:
            if layer_name == name:
                return plan
        raise KeyError(name)


def _check_plan_args(q: int, r_dim: int, rank: int) -> None:
    for label, v in (("q", q), ("r_dim", r_dim), ("rank", rank)):
        if not isinstance(v, (int,)) or v < 1:
            raise ArgumentError(f"{label} must be an integer >= 1, got {v!r}")


def _feasible(n: int, q: int, r_dim: int, rank: int, alpha: Fraction) -> bool:
    # rank*(q*r_dim + n^2) <= alpha * q*r_dim * n, exact
    qr = q * r_dim
    return rank * (qr + n * n) <= alpha * qr * n


def feasible_n_range(q: int, r_dim: int, rank: int, alpha: float) -> tuple[int, int] | None:
    """Integer interval [n_lo, n_hi] of feasible column counts, or None.

    Feasibility uses the real-relaxed m = q*r_dim/n, i.e. the quadratic
    n**2 - (alpha*q*r_dim/rank)*n + q*r_dim <= 0. Endpoints are found by
    bisection on the exact integer predicate, so they agree with an
    exhaustive scan.
    """
    _check_plan_args(q, r_dim, rank)
    if not 0 < alpha <= 1:
        raise ArgumentError(f"alpha must be in (0, 1], got {alpha}")
    a = Fraction(alpha)
    qr = q * r_dim

    # real roots bracket the feasible interval; discriminant in exact rationals
    half_sum = a * qr / (2 * rank)
    disc = half_sum * half_sum - qr
    if disc < 0:
        return None
    root_gap = math.sqrt(float(disc))
    mid = max(1, min(qr, int(float(half_sum))))
    # float rounding can put `mid` just outside the feasible set; nudge it
    if not _feasible(mid, q, r_dim, rank, a):
        for cand in range(max(1, mid - 2), mid + 3):
            if _feasible(cand, q, r_dim, rank, a):
                mid = cand
                break
        else:
            return None

    # lowest feasible n in [1, mid]: predicate is False..False True..True
    lo, hi = 1, mid
    while lo < hi:
        probe = (lo + hi) // 2
        if _feasible(probe, q, r_dim, rank, a):
            hi = probe
        else:
            lo = probe + 1
    n_lo = lo

    # highest feasible n in [mid, bound]
    upper = min(qr, mid + int(root_gap) + 2)
    lo, hi = mid, upper
    while lo < hi:
        probe = (lo + hi + 1) // 2
        if _feasible(probe, q, r_dim, rank, a):
            lo = probe
        else:
            hi = probe - 1
    return n_lo, lo


def _floor_candidates(q: int, r_dim: int, rank: int) -> tuple[int, list[int]]:
    """Minimum stored size rank*(ceil(qr/n)+n) and every n achieving it."""
    qr = q * r_dim
    if qr <= 1 << 16:
        ns = range(1, qr + 1)
    else:
        # ceil(qr/n)+n tracks the convex qr/n+n within +1, so the integer
        # minimum lies in a narrow window around sqrt(qr)
        center = math.isqrt(qr)
        width = 3 * math.isqrt(center + 1) + 8
        ns = range(max(1, center - width), min(qr, center + width) + 1)
    best = None
    argmins: list[int] = []
    for n in ns:
        size = -(-qr // n) + n
        if best is None or size < best:
            best = size
            argmins = [n]
        elif size == best:
            argmins.append(n)
    return rank * best, argmins


def lower_bound_ratio(q: int, r_dim: int, rank: int) -> float:
    """Least achievable compression ratio for the shape: factor overhead floor."""
    _check_plan_args(q, r_dim, rank)
    size, _ = _floor_candidates(q, r_dim, rank)
    return size / (q * r_dim)


def _pick_n(candidates: Sequence[int], q: int) -> int:
    """Prefer the smallest n coprime with q (maximal LCM); otherwise the
    n with the largest LCM(n, q), smallest-n tie-break."""
    best_n = None
    best_lcm = -1
    for n in candidates:
        if math.gcd(n, q) == 1:
            return n
        l = math.lcm(n, q)
        if l > best_lcm:
            best_lcm = l
            best_n = n
    assert best_n is not None
    return best_n


def plan_layer(q: int, r_dim: int, rank: int, alpha: float) -> LayerPlan:
    """Plan one matrix at ratio ``alpha``.

    n is the smallest feasible column count coprime with q, which makes
    LCM(n, q) = n*q and so maximizes the repetition period of scaled
    blocks in the laid-out matrix. m is the least row count covering the
    matrix, ceil(q*r_dim / n); surplus elements beyond that are sliced
    off and would be dead weight.
    """
    interval = feasible_n_range(q, r_dim, rank, alpha)
    if interval is None:
        bound = lower_bound_ratio(q, r_dim, rank)
        raise InfeasiblePlanError(
            f"ratio {alpha} is below the floor {bound:.6g} for a {q}x{r_dim} matrix",
            {"": bound},
        )
    n_lo, n_hi = interval
    n = None
    for cand in range(n_lo, min(n_hi, n_lo + _COPRIME_SCAN_LIMIT) + 1):
        if math.gcd(cand, q) == 1:
            n = cand
            break
    if n is None:
        n = _pick_n(range(n_lo, n_hi + 1), q)
    qr = q * r_dim
    m = -(-qr // n)
    return LayerPlan(q=q, r_dim=r_dim, rank=rank, m=m, n=n)


def plan_layer_at_floor(q: int, r_dim: int, rank: int) -> LayerPlan:
    """Plan a matrix at its minimum achievable size (lower-bound pin)."""
    _check_plan_args(q, r_dim, rank)
    _, argmins = _floor_candidates(q, r_dim, rank)
    n = _pick_n(argmins, q)
    m = -(-(q * r_dim) // n)
    return LayerPlan(q=q, r_dim=r_dim, rank=rank, m=m, n=n)


def plan_network(
    shapes: Sequence[tuple[str, int, int]],
    rank: int,
    target_ratio: float,
    bias_counts: Sequence[int] | None = None,
) -> NetworkPlan:
    """Distribute a network-wide ratio across heterogeneous matrices.

    Pass 1 plans every matrix at the target ratio; matrices whose floor
    exceeds it are pinned there. The overage is then absorbed by the
    remaining matrices, weighted by their original element counts (which
    means one common, tightened ratio for all unpinned matrices).
    Tightening can pin further matrices, so the passes iterate.

    ``bias_counts``, when given, are uncompressed per-layer element counts
    added verbatim to both sides of the total-size accounting.
    """
    if not shapes:
        raise ArgumentError("shapes must be nonempty")
    if not 0 < target_ratio < 1:
        raise ArgumentError(f"target_ratio must be in (0, 1), got {target_ratio}")
    names = [name for name, _, _ in shapes]
    if len(set(names)) != len(names):
        raise ArgumentError("matrix names must be unique")
    biases = tuple(bias_counts) if bias_counts is not None else tuple(0 for _ in shapes)
    if len(biases) != len(shapes):
        raise ArgumentError("bias_counts must match shapes length")

    qr = {name: q * r for name, q, r in shapes}
    floor_size = {}
    for name, q, r in shapes:
        size, _ = _floor_candidates(q, r, rank)
        floor_size[name] = size
    shape_of = {name: (q, r) for name, q, r in shapes}

    total_orig = sum(qr.values()) + sum(biases)
    budget = Fraction(target_ratio) * total_orig
    bias_total = sum(biases)

    min_total = sum(floor_size.values()) + bias_total
    if min_total > budget:
        bounds = {name: floor_size[name] / qr[name] for name in names}
        raise InfeasiblePlanError(
            f"target {target_ratio} is unreachable: every matrix at its floor "
            f"still totals {min_total}/{total_orig} = {min_total / total_orig:.6g}",
            bounds,
        )

    def bounds_map() -> dict[str, float]:
        return {name: floor_size[name] / qr[name] for name in names}

    pinned: set[str] = set()
    plans: dict[str, LayerPlan] = {}
    # every pass either finishes or pins at least one more matrix
    for _ in range(len(shapes) + 1):
        unpinned = [name for name in names if name not in pinned]
        if not unpinned:
            break
        remaining = budget - bias_total - sum(plans[p].compressed_elems for p in pinned)
        alpha_u = remaining / sum(qr[name] for name in unpinned)
        if alpha_u <= 0:
            raise InfeasiblePlanError(
                f"target {target_ratio} is unreachable after pinning {sorted(pinned)}",
                bounds_map())
        newly = [name for name in unpinned if floor_size[name] > alpha_u * qr[name]]
        if newly:
            for name in newly:
                pinned.add(name)
                plans[name] = plan_layer_at_floor(*shape_of[name], rank)
            continue

        def plan_all(alpha: Fraction) -> bool:
            for name in unpinned:
                try:
                    plans[name] = plan_layer(*shape_of[name], rank, float(alpha))
                except InfeasiblePlanError:
                    # float rounding of an exactly-feasible alpha; treat as a pin
                    pinned.add(name)
                    plans[name] = plan_layer_at_floor(*shape_of[name], rank)
                    return False
            return True

        if not plan_all(alpha_u):
            continue
        total = sum(plans[name].compressed_elems for name in names) + bias_total
        if total <= budget:
            break
        # ceil(q*r_dim/n) overshoots each matrix's share by less than `rank`;
        # reserving that slack up front makes one tightened pass sufficient
        alpha_t = (remaining - rank * len(unpinned)) / sum(qr[name] for name in unpinned)
        retier = [name for name in unpinned if floor_size[name] > alpha_t * qr[name]]
        if alpha_t <= 0 or retier:
            for name in retier:
                pinned.add(name)
                plans[name] = plan_layer_at_floor(*shape_of[name], rank)
            if alpha_t <= 0 and not retier:
                raise InfeasiblePlanError(
                    f"target {target_ratio} is unreachable", bounds_map())
            continue
        if not plan_all(alpha_t):
            continue
        break

    if len(plans) != len(names):
        raise RuntimeError("internal error: redistribution left matrices unplanned")
    total = sum(plans[name].compressed_elems for name in names) + bias_total
    achieved = Fraction(total, total_orig)
    if achieved > Fraction(target_ratio) * (1 + Fraction(1, 10**9)):
        raise InfeasiblePlanError(
            f"target {target_ratio} is unreachable: best total is {float(achieved):.6g}",
            {name: floor_size[name] / qr[name] for name in names},
        )
    return NetworkPlan(
        layers=tuple((name, plans[name]) for name in names),
        target_ratio=target_ratio,
        achieved_total_ratio=float(achieved),
        floor_hits=tuple(name for name in names if name in pinned),
        bias_counts=biases,
    )
