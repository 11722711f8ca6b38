"""Analytic backward pass through a compressed layer, plus a finite-difference check.

The chain runs through activation, bias add, the dense multiply, the
column-major re-layout gather, and the factor product. The re-layout is a
pure gather, so its backward is the matching scatter: sliced-off tail
elements of the auxiliary matrix receive zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FLOAT64, as_matrix, matmul
from .errors import ArgumentError, DimensionError
from .factor import FactorPair, decompress
from .kernel import ACTIVATIONS, activation_grad, apply_activation

LOSSES = ("mse", "softmax_cross_entropy")


@dataclass
class Gradients:
    d_xf: np.ndarray
    d_wf: np.ndarray
    d_input: np.ndarray
    d_bias: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    seed: int
    loss: str = "mse"
    # global gradient-norm clip shared by every method; None = plain SGD.
    # Factored baselines diverge within a few steps at any learning rate
    # fast enough for the other methods, so comparisons default to a clip.
    clip_norm: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("epochs and batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ArgumentError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ArgumentError(f"clip_norm must be > 0, got {self.clip_norm}")


def dense_pre_activation(x, fp: FactorPair, bias) -> np.ndarray:
    """X @ decompress(fp) + bias in float64 (training-path forward)."""
    xm = as_matrix(x, dtype=FLOAT64, name="input")
    bias = np.asarray(bias, dtype=FLOAT64).ravel()
    if bias.shape[0] != fp.plan.r_dim:
        raise DimensionError(f"bias length {bias.shape[0]} != output width {fp.plan.r_dim}")
    return matmul(xm, decompress(fp)) + bias


def layer_backward(x, fp: FactorPair, bias, activation: str, upstream) -> Gradients:
    """Gradients of a compressed layer w.r.t. factors, input, and bias.

    ``upstream`` is dLoss/dOutput with the layer-output shape. Supports
    any rank (the fused forward's rank-1 restriction does not apply).
    """
    if activation not in ACTIVATIONS:
        raise ArgumentError(f"unknown activation {activation!r}")
    xm = as_matrix(x, dtype=FLOAT64, name="input")
    up = as_matrix(upstream, dtype=FLOAT64, name="upstream")
    plan = fp.plan
    if xm.shape[1] != plan.q:
        raise DimensionError(f"input width {xm.shape[1]} != layer input width {plan.q}")
    expected = (xm.shape[0], plan.r_dim)
    if up.shape != expected:
        raise DimensionError(
            f"upstream shape {up.shape} != layer output shape {expected}")

    w = decompress(fp)
    pre = matmul(xm, w) + np.asarray(bias, dtype=FLOAT64).ravel()
    g = up * activation_grad(activation, pre)

    d_bias = g.sum(axis=0)
    d_w = matmul(xm.T, g)
    # backward of the column-major fill: gather d_w back into the flat
    # auxiliary vector; the discarded tail gets zero
    d_v = np.zeros(plan.m * plan.n, dtype=FLOAT64)
    d_v[: plan.q * plan.r_dim] = d_w.T.ravel()
    d_waux = d_v.reshape(plan.m, plan.n)
    d_xf = matmul(d_waux, fp.wf.T.astype(FLOAT64))
    d_wf = matmul(fp.xf.T.astype(FLOAT64), d_waux)
    d_input = matmul(g, w.T)
    return Gradients(d_xf=d_xf, d_wf=d_wf, d_input=d_input, d_bias=d_bias)


def loss_and_grad(name: str, y: np.ndarray, target) -> tuple[float, np.ndarray]:
    """Scalar loss and dLoss/dY for the two supported losses."""
    if name == "mse":
        t = np.asarray(target, dtype=FLOAT64)
        diff = y - t
        return float(np.mean(diff**2)), 2.0 * diff / y.size
    if name == "softmax_cross_entropy":
        labels = np.asarray(target)
        z = y - y.max(axis=1, keepdims=True)
        expz = np.exp(z)
        probs = expz / expz.sum(axis=1, keepdims=True)
        batch = y.shape[0]
        # floor keeps a collapsed model's loss huge but finite
        picked = np.maximum(probs[np.arange(batch), labels], 1e-300)
        loss = float(-np.mean(np.log(picked)))
        grad = probs.copy()
        grad[np.arange(batch), labels] -= 1.0
        return loss, grad / batch
    raise ArgumentError(f"loss must be one of {LOSSES}, got {name!r}")


@dataclass
class FiniteDiffReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def finite_diff_check(
    fp: FactorPair,
    x,
    bias,
    activation: str,
    loss: str,
    tolerance: float = 1e-4,
    target=None,
    epsilon: float = 1e-5,
) -> FiniteDiffReport:
    """Compare analytic gradients against central finite differences.

    Reports the max relative error per parameter group (xf, wf, bias).
    ``target`` defaults to zeros for mse and cycling class labels for
    softmax cross-entropy. Intended for small layers (the numeric sweep
    costs two forwards per parameter).
    """
    xm = as_matrix(x, dtype=FLOAT64, name="input")
    bias = np.asarray(bias, dtype=FLOAT64).ravel().copy()
    plan = fp.plan
    if plan.q * plan.r_dim > 4096:
        raise ArgumentError("finite_diff_check is limited to q*r_dim <= 4096")
    if target is None:
        if loss == "mse":
            target = np.zeros((xm.shape[0], plan.r_dim))
        else:
            target = np.arange(xm.shape[0]) % plan.r_dim

    def eval_loss(xf, wf, b) -> float:
        pair = FactorPair(xf=xf, wf=wf, plan=plan)
        y = apply_activation(activation, dense_pre_activation(xm, pair, b))
        return loss_and_grad(loss, y, target)[0]

    y = apply_activation(activation, dense_pre_activation(xm, fp, bias))
    _, d_y = loss_and_grad(loss, y, target)
    analytic = layer_backward(xm, fp, bias, activation, d_y)

    def numeric_group(base: np.ndarray, which: str) -> np.ndarray:
        grads = np.zeros_like(base, dtype=FLOAT64)
        flat = base.ravel()
        for i in range(flat.size):
            orig = flat[i]
            work = base.astype(FLOAT64).copy()
            wflat = work.ravel()
            wflat[i] = orig + epsilon
            args = {"xf": fp.xf, "wf": fp.wf, "b": bias}
            args[which] = work
            up = eval_loss(args["xf"], args["wf"], args["b"])
            wflat[i] = orig - epsilon
            down = eval_loss(args["xf"], args["wf"], args["b"])
            grads.ravel()[i] = (up - down) / (2 * epsilon)
        return grads

    def rel_err(a: np.ndarray, n: np.ndarray) -> float:
        scale = max(float(np.max(np.abs(n))), 1e-8)
        return float(np.max(np.abs(a - n))) / scale

    errors = {
        "xf": rel_err(analytic.d_xf, numeric_group(np.asarray(fp.xf), "xf")),
        "wf": rel_err(analytic.d_wf, numeric_group(np.asarray(fp.wf), "wf")),
        "bias": rel_err(analytic.d_bias, numeric_group(bias, "b")),
    }
    return FiniteDiffReport(errors=errors, tolerance=tolerance)
