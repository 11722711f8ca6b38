"""Independent reference implementations the test suite checks against.

Everything here is deliberately naive (triple loops, exhaustive scans,
element-by-element scatters) and shares no code with the library paths it
verifies.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product with a fixed summation order."""
    rows, inner = a.shape
    inner2, cols = b.shape
    assert inner == inner2
    out = np.zeros((rows, cols), dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += float(a[i, k]) * float(b[k, j])
            out[i, j] = acc
    return out


def scan_feasible_n(q: int, r_dim: int, rank: int, alpha: float,
                    limit: int | None = None) -> tuple[int, int] | None:
    """Exhaustive scan for the feasible n interval of the sizing quadratic.

    Scans with float arithmetic, then pins each boundary with the exact
    rational predicate rank*(qr + n^2) <= alpha*qr*n.
    """
    qr = q * r_dim
    top = min(limit or qr, qr)
    a = Fraction(alpha)

    def exact(n: int) -> bool:
        return rank * (qr + n * n) <= a * qr * n

    ns = np.arange(1, top + 1, dtype=np.float64)
    ok = rank * (qr + ns * ns) <= alpha * qr * ns
    hits = np.nonzero(ok)[0]
    if hits.size == 0:
        # float scan found nothing; sweep the exact predicate near the vertex
        vertex = max(1, int(alpha * qr / (2 * rank)))
        for n in range(max(1, vertex - 3), min(top, vertex + 3) + 1):
            if exact(n):
                hits = np.array([n - 1])
                break
        else:
            return None
    lo = int(hits[0]) + 1
    hi = int(hits[-1]) + 1
    while lo > 1 and exact(lo - 1):
        lo -= 1
    while not exact(lo):
        lo += 1
        if lo > top:
            return None
    while hi < top and exact(hi + 1):
        hi += 1
    while not exact(hi):
        hi -= 1
    return (lo, hi) if lo <= hi else None


def scan_lower_bound(q: int, r_dim: int, rank: int) -> float:
    """min over n of rank*(ceil(qr/n)+n)/qr by full scan."""
    qr = q * r_dim
    best = min(-(-qr // n) + n for n in range(1, qr + 1))
    return rank * best / qr


def scatter_decompress(xf: np.ndarray, wf: np.ndarray, q: int, r_dim: int) -> np.ndarray:
    """Element-by-element re-layout: materialize, flatten, scatter."""
    waux = np.matmul(xf, wf)
    v = waux.ravel()
    out = np.zeros((q, r_dim), dtype=waux.dtype)
    for k in range(q * r_dim):
        out[k % q, k // q] = v[k]
    return out


def enumerate_runs(q: int, r_dim: int, n: int) -> list[tuple[int, int, int, int]]:
    """Every run as (col, wf_offset, input_start, length), by brute force.

    A run is a maximal stretch of flat indices within one column
    (index // q constant) and one auxiliary row (index // n constant).
    """
    runs = []
    for col in range(r_dim):
        start = col * q
        pos = start
        while pos < start + q:
            row_end = (pos // n + 1) * n
            end = min(row_end, start + q)
            runs.append((col, pos % n, pos - start, end - pos))
            pos = end
    return runs


def fused_matmul_reference(x: np.ndarray, xf: np.ndarray, wf: np.ndarray,
                           q: int, r_dim: int, n: int) -> tuple[np.ndarray, int, int]:
    """Literal run-memoized multiply: scale-after-dot with a dot-product table.

    Returns (result, misses, hits); the memo key is the identity of the
    (wf segment, input slice) pair.
    """
    xfv = xf.ravel()
    wfv = wf.ravel()
    batch = x.shape[0]
    out = np.zeros((batch, r_dim), dtype=np.float64)
    misses = hits = 0
    for b in range(batch):
        table: dict[tuple[int, int], float] = {}
        for col, off, start, length in enumerate_runs(q, r_dim, n):
            key = (off, start)
            if key in table:
                dot = table[key]
                hits += 1
            else:
                dot = float(np.dot(x[b, start:start + length], wfv[off:off + length]))
                table[key] = dot
                misses += 1
            aux_row = (col * q + start) // n
            out[b, col] += xfv[aux_row] * dot
    return out, misses, hits


def central_difference(f, params: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    grads = np.zeros_like(params, dtype=np.float64)
    for i in range(params.size):
        bumped = params.astype(np.float64).copy()
        bumped[i] += eps
        up = f(bumped)
        bumped[i] -= 2 * eps
        down = f(bumped)
        grads[i] = (up - down) / (2 * eps)
    return grads


def lcm(a: int, b: int) -> int:
    return a * b // math.gcd(a, b)
