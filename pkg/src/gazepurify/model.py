"""Small tanh MLP gaze regressor with manual backpropagation.

The network is an encoder (stacked tanh layers ending in a low-dimensional
feature vector) followed by a linear head producing (yaw, pitch). Training
minimizes the per-sample-weighted L1 loss

    L = sum_i w_i * (|yaw_i - yaw_hat_i| + |pitch_i - pitch_hat_i|)

by plain SGD. Gradients are derived by hand; the L1 subgradient at zero is
taken as zero. Everything is float64 numpy, deterministic under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import GazeLabel

__all__ = ["MlpConfig", "MlpRegressor"]


@dataclass
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)
    feat_dim: int = 16
    learning_rate: float = 5e-4
    batch_size: int = 64
    seed: int = 0

    def validate(self) -> None:
        dims = (self.input_dim, *self.hidden_dims, self.feat_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


class MlpRegressor:
    """Encoder + linear head with encode/predict/train_step semantics.

    ``weights[i]``/``biases[i]`` are the tanh layers (the last one produces
    the feature vector); ``head_w``/``head_b`` map features to (yaw, pitch).
    """

    def __init__(self, config: MlpConfig):
        config.validate()
        self.config = config
        self.feat_dim = config.feat_dim
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        self.head_w = np.zeros((config.feat_dim, 2))
        self.head_b = np.zeros(2)
        self.reset(config.seed)

    def reset(self, seed: int) -> None:
        """Reinitialize all parameters from the given seed."""
        rng = np.random.default_rng(seed)
        dims = [self.config.input_dim, *self.config.hidden_dims, self.config.feat_dim]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            self.weights.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
            self.biases.append(np.zeros(fan_out))
        self.head_w = rng.standard_normal((self.config.feat_dim, 2)) / np.sqrt(self.config.feat_dim)
        self.head_b = np.zeros(2)

    def _check_inputs(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.config.input_dim:
            raise ValueError(
                f"input dimension {x.shape[1]} does not match model input_dim "
                f"{self.config.input_dim}"
            )
        return x

    def _forward(self, x: np.ndarray) -> list[np.ndarray]:
        # Returns all layer activations; the last entry is the feature matrix.
        acts = [x]
        h = x
        for w, b in zip(self.weights, self.biases):
            h = np.tanh(h @ w + b)
            acts.append(h)
        return acts

    def forward(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic forward pass: (feature matrix, (yaw, pitch) matrix)."""
        xm = self._check_inputs(x)
        feats = self._forward(xm)[-1]
        preds = feats @ self.head_w + self.head_b
        if np.asarray(x).ndim == 1:
            return feats[0], preds[0]
        return feats, preds

    def encode(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def predict(self, x) -> np.ndarray:
        return self.forward(x)[1]

    def predict_label(self, x) -> GazeLabel:
        pred = self.predict(np.asarray(x, dtype=float))
        return GazeLabel(float(pred[0]), float(pred[1]))

    def loss(self, x, targets, weights) -> float:
        """Weighted L1 loss of the current parameters on a batch."""
        preds = self.predict(self._check_inputs(x))
        targets = np.asarray(targets, dtype=float)
        weights = np.asarray(weights, dtype=float)
        return float(np.sum(weights * np.abs(preds - targets).sum(axis=1)))

    def gradients(self, x, targets, weights):
        """Loss and parameter gradients for a batch.

        Returns ``(loss, d_weights, d_biases, d_head_w, d_head_b)`` where the
        gradient containers mirror the parameter containers.
        """
        xm = self._check_inputs(x)
        targets = np.asarray(targets, dtype=float)
        weights = np.asarray(weights, dtype=float)
        acts = self._forward(xm)
        feats = acts[-1]
        preds = feats @ self.head_w + self.head_b

        resid = preds - targets
        loss = float(np.sum(weights * np.abs(resid).sum(axis=1)))
        d_pred = weights[:, None] * np.sign(resid)

        d_head_w = feats.T @ d_pred
        d_head_b = d_pred.sum(axis=0)
        d_h = d_pred @ self.head_w.T

        d_weights = [None] * len(self.weights)
        d_biases = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            h = acts[layer + 1]
            dz = d_h * (1.0 - h * h)
            d_weights[layer] = acts[layer].T @ dz
            d_biases[layer] = dz.sum(axis=0)
            if layer > 0:
                d_h = dz @ self.weights[layer].T
        return loss, d_weights, d_biases, d_head_w, d_head_b

    def train_step(self, x, targets, weights) -> float:
        """One SGD step on the weighted L1 loss; returns the batch loss."""
        loss, d_w, d_b, d_hw, d_hb = self.gradients(x, targets, weights)
        lr = self.config.learning_rate
        for i in range(len(self.weights)):
            self.weights[i] -= lr * d_w[i]
            self.biases[i] -= lr * d_b[i]
        self.head_w -= lr * d_hw
        self.head_b -= lr * d_hb
        return loss

    def train_epoch(self, x, targets, weights, rng: np.random.Generator) -> float:
        """Shuffled minibatch pass over the data; returns mean per-sample loss."""
        xm = self._check_inputs(x)
        targets = np.asarray(targets, dtype=float)
        weights = np.asarray(weights, dtype=float)
        n = xm.shape[0]
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, self.config.batch_size):
            idx = order[start : start + self.config.batch_size]
            total += self.train_step(xm[idx], targets[idx], weights[idx])
        return total / n

    def save(self, path) -> None:
        """Checkpoint all parameters plus config; round-trips bit-exactly."""
        arrays = {"head_w": self.head_w, "head_b": self.head_b}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        cfg = dict(vars(self.config))
        cfg["hidden_dims"] = list(cfg["hidden_dims"])
        arrays["config_json"] = np.frombuffer(
            json.dumps(cfg, sort_keys=True).encode(), dtype=np.uint8
        )
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "MlpRegressor":
        with np.load(path) as payload:
            cfg = json.loads(bytes(payload["config_json"]).decode())
            cfg["hidden_dims"] = tuple(cfg["hidden_dims"])
            model = cls(MlpConfig(**cfg))
            model.weights = [payload[f"w{i}"].copy() for i in range(len(model.weights))]
            model.biases = [payload[f"b{i}"].copy() for i in range(len(model.biases))]
            model.head_w = payload["head_w"].copy()
            model.head_b = payload["head_b"].copy()
        return model
