"""Toy tasks sized so compression down to 1/100 is meaningful."""

from __future__ import annotations

import numpy as np

from .core import spawn_rngs


def regression_task(seed: int, n_train: int = 2048, n_val: int = 512):
    """64-dim regression against a planted low-rank-plus-noise linear teacher.

    The teacher combines a rank-8 component with a small dense residual,
    so a weight parameterization capped at a very low rank cannot reach
    the noise floor while an unconstrained one can.
    """
    teacher_rng, sample_rng, noise_rng = spawn_rngs(seed, 3)
    d = 64
    planted_rank = 8
    a = teacher_rng.standard_normal((d, planted_rank))
    b = teacher_rng.standard_normal((planted_rank, d))
    teacher = (a @ b) / np.sqrt(planted_rank * d)
    teacher += 0.02 * teacher_rng.standard_normal((d, d))

    n = n_train + n_val
    x = sample_rng.standard_normal((n, d))
    y = x @ teacher + 0.35 * noise_rng.standard_normal((n, d))
    return (x[:n_train], y[:n_train]), (x[n_train:], y[n_train:])


def spiral_task(seed: int, per_class_train: int = 512, per_class_val: int = 128,
                classes: int = 3, noise: float = 0.32):
    """Interleaved 2-D spirals, one arm per class."""
    arm_rng, order_rng = spawn_rngs(seed, 2)

    def make_split(per_class: int):
        xs, ys = [], []
        for c in range(classes):
            t = arm_rng.uniform(0.15, 1.0, per_class)
            angle = c * 2 * np.pi / classes + t * 3.5
            radius = t + noise * arm_rng.standard_normal(per_class) * t
            xs.append(np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1))
            ys.append(np.full(per_class, c, dtype=np.int64))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = order_rng.permutation(len(y))
        return x[order], y[order]

    return make_split(per_class_train), make_split(per_class_val)
