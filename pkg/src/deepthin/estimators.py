"""scikit-learn estimator wrappers around the compressed training stack.

``CompressedMLPRegressor`` and ``CompressedMLPClassifier`` train a small
feedforward network whose weight matrices are stored in any of the
supported compressed parameterizations, and expose the usual estimator
surface (``fit`` / ``predict`` / ``get_params``) so the models compose
with pipelines and model selection.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .grad import TrainConfig
from .kernel import apply_activation
from .train import build_layers, sgd_train


class _CompressedMLPBase(BaseEstimator):
    def __init__(self, hidden_layer_sizes=(256, 256), method="deepthin", ratio=0.05,
                 rank=1, learning_rate=0.3, epochs=30, batch_size=64,
                 clip_norm=5.0, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.method = method
        self.ratio = ratio
        self.rank = rank
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.random_state = random_state

    _loss = "mse"

    def _fit_network(self, x: np.ndarray, y: np.ndarray, n_outputs: int,
                     final_activation: str) -> None:
        dims = [x.shape[1], *self.hidden_layer_sizes, n_outputs]
        hidden = "relu" if self._loss == "softmax_cross_entropy" else "identity"
        activations = (hidden,) * (len(dims) - 2) + (final_activation,)
        cfg = TrainConfig(
            learning_rate=self.learning_rate, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.random_state,
            loss=self._loss, clip_norm=self.clip_norm)
        layers = build_layers(self.method, dims, self.ratio, self.rank,
                              self.random_state, activations,
                              prune_steps=self._prune_steps(len(x), cfg))
        history = sgd_train(layers, (x, y), (x, y), cfg)
        self.layers_ = layers
        self.loss_curve_ = [train for _, train, _ in history]
        self.n_features_in_ = x.shape[1]
        self.stored_params_ = sum(layer.stored_params() for layer in layers)

    def _prune_steps(self, n_samples: int, cfg: TrainConfig) -> list[int]:
        steps_per_epoch = math.ceil(n_samples / cfg.batch_size)
        total = steps_per_epoch * cfg.epochs
        first = max(1, total // 10)
        last = max(first + 1, (6 * total) // 10)
        return sorted(set(np.linspace(first, last, 8, dtype=int).tolist()))

    def _forward(self, x: np.ndarray) -> np.ndarray:
        out = x
        for layer in self.layers_:
            w = layer.weights.materialize()
            out = apply_activation(layer.activation, out @ w + layer.bias)
        return out


class CompressedMLPRegressor(_CompressedMLPBase, RegressorMixin):
    """Feedforward regressor with compressed weight storage."""

    _loss = "mse"

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y2 = y.reshape(len(y), -1).astype(float)
        self.single_output_ = y.ndim == 1
        self._fit_network(X.astype(float), y2, y2.shape[1], "identity")
        return self

    def predict(self, X):
        check_is_fitted(self, "layers_")
        X = check_array(X)
        out = self._forward(X.astype(float))
        return out.ravel() if self.single_output_ else out


class CompressedMLPClassifier(_CompressedMLPBase, ClassifierMixin):
    """Feedforward softmax classifier with compressed weight storage."""

    _loss = "softmax_cross_entropy"

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self._fit_network(X.astype(float), encoded, len(self.classes_), "identity")
        return self

    def decision_function(self, X):
        check_is_fitted(self, "layers_")
        X = check_array(X)
        return self._forward(X.astype(float))

    def predict_proba(self, X):
        scores = self.decision_function(X)
        z = scores - scores.max(axis=1, keepdims=True)
        expz = np.exp(z)
        return expz / expz.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "classes_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
