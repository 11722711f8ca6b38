"""Toy-scale SGD training over every supported weight parameterization.

Each layer is a bias + activation around a pluggable weight provider; the
providers materialize a dense matrix for the forward pass and route its
gradient back into their stored form. All methods in a comparison share
the same data, the same split, and the same step schedule, differing only
in how the weight matrix is parameterized and sized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import baselines
from .baselines import (
    PrunedLayer,
    density_schedule,
    fresh_pruned,
    hash_index_matrix,
    plan_rank_network,
    prune_step,
    same_size_hint,
)
from .core import FLOAT64, make_rng, sample_normal, spawn_rngs
from .datasets import regression_task, spiral_task
from .errors import ArgumentError
from .grad import TrainConfig, loss_and_grad
from .kernel import activation_grad, apply_activation
from .planner import plan_network

TASKS = ("synthetic_regression", "spiral_classification")
METHODS = ("deepthin", "rank_fact", "hashed", "pruned", "same_size", "dense")

REGRESSION_DIMS = (64, 384, 384, 64)
SPIRAL_DIMS = (2, 256, 256, 256, 3)


class _Weights:
    """Weight provider: a dense view plus gradient routing into stored form."""

    def materialize(self) -> np.ndarray:
        raise NotImplementedError

    def apply_grad(self, d_w: np.ndarray) -> None:
        raise NotImplementedError

    def step(self, lr: float) -> None:
        raise NotImplementedError

    def on_global_step(self, step: int) -> None:
        pass

    def grad_buffers(self) -> list[np.ndarray]:
        raise NotImplementedError

    def stored_params(self) -> int:
        raise NotImplementedError


class DenseWeights(_Weights):
    def __init__(self, w: np.ndarray):
        self.w = w
        self.d_w = np.zeros_like(w)

    def materialize(self):
        return self.w

    def apply_grad(self, d_w):
        self.d_w += d_w

    def step(self, lr):
        self.w -= lr * self.d_w
        self.d_w[:] = 0.0

    def grad_buffers(self):
        return [self.d_w]

    def stored_params(self):
        return self.w.size


class DeepThinWeights(_Weights):
    def __init__(self, plan, sigma: float, rng):
        self.plan = plan
        self.xf = sample_normal(rng, 0.0, sigma, (plan.m, plan.rank))
        self.wf = sample_normal(rng, 0.0, 1.0 / math.sqrt(plan.rank), (plan.rank, plan.n))
        self.d_xf = np.zeros_like(self.xf)
        self.d_wf = np.zeros_like(self.wf)

    def materialize(self):
        p = self.plan
        v = (self.xf @ self.wf).ravel()
        return v[: p.q * p.r_dim].reshape(p.r_dim, p.q).T

    def apply_grad(self, d_w):
        p = self.plan
        d_v = np.zeros(p.m * p.n, dtype=FLOAT64)
        d_v[: p.q * p.r_dim] = d_w.T.ravel()
        d_waux = d_v.reshape(p.m, p.n)
        self.d_xf += d_waux @ self.wf.T
        self.d_wf += self.xf.T @ d_waux

    def step(self, lr):
        self.xf -= lr * self.d_xf
        self.wf -= lr * self.d_wf
        self.d_xf[:] = 0.0
        self.d_wf[:] = 0.0

    def grad_buffers(self):
        return [self.d_xf, self.d_wf]

    def stored_params(self):
        return self.plan.compressed_elems


class RankFactWeights(_Weights):
    def __init__(self, q: int, r_dim: int, rank: int, sigma: float, rng):
        self.xf = sample_normal(rng, 0.0, sigma, (q, rank))
        self.wf = sample_normal(rng, 0.0, 1.0 / math.sqrt(rank), (rank, r_dim))
        self.d_xf = np.zeros_like(self.xf)
        self.d_wf = np.zeros_like(self.wf)

    def materialize(self):
        return self.xf @ self.wf

    def apply_grad(self, d_w):
        self.d_xf += d_w @ self.wf.T
        self.d_wf += self.xf.T @ d_w

    def step(self, lr):
        self.xf -= lr * self.d_xf
        self.wf -= lr * self.d_wf
        self.d_xf[:] = 0.0
        self.d_wf[:] = 0.0

    def grad_buffers(self):
        return [self.d_xf, self.d_wf]

    def stored_params(self):
        return self.xf.size + self.wf.size


class HashedWeights(_Weights):
    def __init__(self, q: int, r_dim: int, k: int, sigma: float, hash_seed: int, rng):
        self.bins = sample_normal(rng, 0.0, sigma, k)
        self.idx = hash_index_matrix(q, r_dim, hash_seed, k)
        self.d_bins = np.zeros_like(self.bins)

    def materialize(self):
        return self.bins[self.idx]

    def apply_grad(self, d_w):
        self.d_bins += np.bincount(
            self.idx.ravel(), weights=d_w.ravel(), minlength=self.bins.size)

    def step(self, lr):
        self.bins -= lr * self.d_bins
        self.d_bins[:] = 0.0

    def grad_buffers(self):
        return [self.d_bins]

    def stored_params(self):
        return self.bins.size


class PrunedWeights(_Weights):
    def __init__(self, q: int, r_dim: int, schedule, sigma: float, rng):
        w = sample_normal(rng, 0.0, sigma, (q, r_dim))
        self.layer = fresh_pruned(w, schedule)
        self.d_w = np.zeros((q, r_dim))

    def materialize(self):
        return self.layer.weights * self.layer.mask

    def apply_grad(self, d_w):
        self.d_w += d_w * self.layer.mask

    def step(self, lr):
        self.layer = PrunedLayer(
            weights=self.layer.weights - lr * self.d_w,
            mask=self.layer.mask,
            schedule=self.layer.schedule)
        self.d_w[:] = 0.0

    def on_global_step(self, step):
        self.layer = prune_step(self.layer, step)

    def grad_buffers(self):
        return [self.d_w]

    def stored_params(self):
        # honest accounting: CSR bytes over 4-byte dense cell bytes
        return baselines.csr_size(self.layer.nnz, self.layer.weights.shape[0]) // 4


@dataclass
class TrainLayer:
    weights: _Weights
    bias: np.ndarray
    activation: str

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        self._w = self.weights.materialize()
        self._pre = x @ self._w + self.bias
        return apply_activation(self.activation, self._pre)

    def backward(self, g_out: np.ndarray) -> np.ndarray:
        g = g_out * activation_grad(self.activation, self._pre)
        self._d_bias = g.sum(axis=0)
        self.weights.apply_grad(self._x.T @ g)
        return g @ self._w.T

    def step(self, lr: float) -> None:
        self.weights.step(lr)
        self.bias -= lr * self._d_bias

    def on_global_step(self, step: int) -> None:
        self.weights.on_global_step(step)

    def grad_buffers(self) -> list[np.ndarray]:
        return [*self.weights.grad_buffers(), self._d_bias]

    def stored_params(self) -> int:
        return self.weights.stored_params() + self.bias.size


def _chain_shapes(dims: Sequence[int]) -> list[tuple[str, int, int]]:
    return [(f"layer{i}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def build_layers(
    method: str,
    dims: Sequence[int],
    ratio: float,
    rank: int,
    seed: int,
    activations: Sequence[str],
    prune_steps: Sequence[int] = (),
) -> list[TrainLayer]:
    """Construct the layer stack for one method at one compression ratio.

    Raises ``InfeasiblePlanError`` when the factorization methods cannot
    reach the ratio for these shapes.
    """
    if method not in METHODS:
        raise ArgumentError(f"method must be one of {METHODS}, got {method!r}")
    shapes = _chain_shapes(dims)
    if len(activations) != len(shapes):
        raise ArgumentError("need one activation per layer")
    rngs = spawn_rngs(seed, len(shapes))

    if method == "same_size":
        scale = same_size_hint(shapes, ratio)
        dims = [dims[0]] + [max(1, round(scale * h)) for h in dims[1:-1]] + [dims[-1]]
        shapes = _chain_shapes(dims)
    if method == "deepthin":
        net = plan_network(shapes, rank, ratio) if ratio < 1.0 else None
    if method == "rank_fact":
        ranks = plan_rank_network(shapes, ratio) if ratio < 1.0 else None

    layers = []
    for i, ((name, q, r_dim), act) in enumerate(zip(shapes, activations)):
        sigma = 1.0 / math.sqrt(q)
        rng = rngs[i]
        if method == "deepthin":
            provider = (DeepThinWeights(net.plan_for(name), sigma, rng)
                        if net is not None else
                        DenseWeights(sample_normal(rng, 0.0, sigma, (q, r_dim))))
        elif method == "rank_fact":
            provider = (RankFactWeights(q, r_dim, ranks[name], sigma, rng)
                        if ranks is not None else
                        DenseWeights(sample_normal(rng, 0.0, sigma, (q, r_dim))))
        elif method == "hashed":
            k = max(1, int(ratio * q * r_dim))
            provider = HashedWeights(q, r_dim, k, sigma, hash_seed=seed * 1000 + i, rng=rng)
        elif method == "pruned":
            schedule = density_schedule(q, r_dim, ratio, prune_steps)
            provider = PrunedWeights(q, r_dim, schedule, sigma, rng)
        else:  # dense, same_size
            provider = DenseWeights(sample_normal(rng, 0.0, sigma, (q, r_dim)))
        layers.append(TrainLayer(weights=provider, bias=np.zeros(r_dim), activation=act))
    return layers


def _forward_all(layers: list[TrainLayer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x)
    return x


def evaluate(layers: list[TrainLayer], x: np.ndarray, target, loss: str) -> float:
    out = x
    for layer in layers:
        w = layer.weights.materialize()
        out = apply_activation(layer.activation, out @ w + layer.bias)
    return loss_and_grad(loss, out, target)[0]


def sgd_train(
    layers: list[TrainLayer],
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
) -> list[tuple[int, float, float]]:
    """Plain SGD; returns one (epoch, train_loss, val_loss) row per epoch."""
    x_train, y_train = train_data
    x_val, y_val = val_data
    shuffle_rng = make_rng(cfg.seed ^ 0x5DEE9)
    history = []
    step = 0

    def clip_gradients() -> None:
        if cfg.clip_norm is None:
            return
        buffers = [b for layer in layers for b in layer.grad_buffers()]
        total = math.fsum(float(np.sum(b * b)) for b in buffers)
        norm = math.sqrt(total)
        if norm > cfg.clip_norm and np.isfinite(norm):
            scale = cfg.clip_norm / norm
            for b in buffers:
                b *= scale

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(x_train))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            for layer in layers:
                layer.on_global_step(step)
            out = _forward_all(layers, x_train[idx])
            y = y_train[idx]
            loss, d_out = loss_and_grad(cfg.loss, out, y)
            g = d_out
            for layer in reversed(layers):
                g = layer.backward(g)
            clip_gradients()
            for layer in layers:
                layer.step(cfg.learning_rate)
            epoch_loss += loss
            batches += 1
            step += 1
        train_loss = epoch_loss / batches
        val_loss = evaluate(layers, x_val, y_val, cfg.loss)
        # a diverged run reports inf rather than nan so comparisons stay ordered
        if not np.isfinite(train_loss):
            train_loss = float("inf")
        if not np.isfinite(val_loss):
            val_loss = float("inf")
        history.append((epoch, train_loss, val_loss))
    return history


def _task_setup(task: str, seed: int):
    if task == "synthetic_regression":
        train, val = regression_task(seed)
        dims = REGRESSION_DIMS
        activations = ("identity",) * (len(dims) - 1)
        loss = "mse"
    elif task == "spiral_classification":
        train, val = spiral_task(seed)
        dims = SPIRAL_DIMS
        activations = ("relu",) * (len(dims) - 2) + ("identity",)
        loss = "softmax_cross_entropy"
    else:
        raise ArgumentError(f"task must be one of {TASKS}, got {task!r}")
    return train, val, dims, activations, loss


def default_config(task: str, seed: int) -> TrainConfig:
    if task == "synthetic_regression":
        return TrainConfig(learning_rate=0.5, epochs=60, batch_size=128, seed=seed,
                           loss="mse", clip_norm=5.0)
    return TrainConfig(learning_rate=0.5, epochs=25, batch_size=64, seed=seed,
                       loss="softmax_cross_entropy", clip_norm=5.0)


def train_toy(
    task: str,
    method: str,
    ratio: float,
    cfg: TrainConfig | None = None,
    rank: int = 1,
) -> list[tuple[int, float, float]]:
    """Train one method on one toy task; deterministic per cfg.seed.

    Methods share the data, split, and schedule for a given seed. Raises
    ``InfeasiblePlanError`` when a factorization method cannot reach the
    ratio.
    """
    if task not in TASKS:
        raise ArgumentError(f"task must be one of {TASKS}, got {task!r}")
    if cfg is None:
        cfg = default_config(task, 0)
    train, val, dims, activations, loss = _task_setup(task, cfg.seed)
    if cfg.loss != loss:
        cfg = TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                          batch_size=cfg.batch_size, seed=cfg.seed, loss=loss)
    if not 0 < ratio <= 1:
        raise ArgumentError(f"ratio must be in (0, 1], got {ratio}")
    if ratio == 1.0 and method not in ("dense", "same_size"):
        raise ArgumentError("ratio 1.0 is only meaningful for dense/same_size")

    steps_per_epoch = math.ceil(len(train[0]) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    # prune over the first 60% of training, in 8 evenly spaced events
    first = max(1, total_steps // 10)
    last = max(first + 1, (6 * total_steps) // 10)
    prune_steps = sorted(set(np.linspace(first, last, 8, dtype=int).tolist()))

    layers = build_layers(method, dims, ratio, rank, cfg.seed, activations, prune_steps)
    return sgd_train(layers, train, val, cfg)
