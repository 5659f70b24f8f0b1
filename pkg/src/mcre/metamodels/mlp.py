"""Two-hidden-layer MLP with ReLU, inverted dropout, and analytic backprop."""

from __future__ import annotations

import numpy as np

from ..rng import stream_rng
from ..training import ArrayDataset
from .base import bce_loss, glorot_uniform, sigmoid

MLP_HIDDEN_WIDTH = 256
MLP_DROPOUT_RATE = 0.2


class MlpModel:
    kind = "mlp"

    def __init__(
        self,
        dim: int,
        hidden: tuple[int, int] = (MLP_HIDDEN_WIDTH, MLP_HIDDEN_WIDTH),
        dropout_rate: float = MLP_DROPOUT_RATE,
        seed: int = 0,
    ):
        self.dim = dim
        self.hidden = hidden
        self.dropout_rate = dropout_rate
        rng = stream_rng(seed, "init")
        h1, h2 = hidden
        self.params: dict[str, np.ndarray] = {
            "w1": glorot_uniform(rng, dim, h1, (dim, h1)),
            "b1": np.zeros(h1),
            "w2": glorot_uniform(rng, h1, h2, (h1, h2)),
            "b2": np.zeros(h2),
            "w3": glorot_uniform(rng, h2, 1, (h2,)),
            "b3": np.zeros(1),
        }

    def _forward(
        self, x: np.ndarray, rng: np.random.Generator | None
    ) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Forward pass; dropout masks drawn only when an rng is given."""
        p = self.params
        pre1 = x @ p["w1"] + p["b1"]
        act1 = np.maximum(pre1, 0.0)
        if rng is not None and self.dropout_rate > 0.0:
            mask1 = (rng.random(act1.shape) >= self.dropout_rate) / (1.0 - self.dropout_rate)
        else:
            mask1 = np.ones_like(act1)
        drop1 = act1 * mask1
        pre2 = drop1 @ p["w2"] + p["b2"]
        act2 = np.maximum(pre2, 0.0)
        if rng is not None and self.dropout_rate > 0.0:
            mask2 = (rng.random(act2.shape) >= self.dropout_rate) / (1.0 - self.dropout_rate)
        else:
            mask2 = np.ones_like(act2)
        drop2 = act2 * mask2
        logits = drop2 @ p["w3"] + p["b3"][0]
        probs = sigmoid(logits)
        cache = {
            "x": x, "pre1": pre1, "drop1": drop1, "mask1": mask1,
            "pre2": pre2, "drop2": drop2, "mask2": mask2, "probs": probs,
        }
        return probs, cache

    def loss_grad(
        self, x: np.ndarray, z: np.ndarray, rng: np.random.Generator | None = None
    ) -> tuple[float, dict[str, np.ndarray]]:
        probs, cache = self._forward(x, rng)
        n = x.shape[0]
        p = self.params
        dlogits = (probs - z) / n
        grads: dict[str, np.ndarray] = {}
        grads["w3"] = cache["drop2"].T @ dlogits
        grads["b3"] = np.array([dlogits.sum()])
        ddrop2 = np.outer(dlogits, p["w3"])
        dpre2 = ddrop2 * cache["mask2"] * (cache["pre2"] > 0.0)
        grads["w2"] = cache["drop1"].T @ dpre2
        grads["b2"] = dpre2.sum(axis=0)
        ddrop1 = dpre2 @ p["w2"].T
        dpre1 = ddrop1 * cache["mask1"] * (cache["pre1"] > 0.0)
        grads["w1"] = cache["x"].T @ dpre1
        grads["b1"] = dpre1.sum(axis=0)
        return bce_loss(probs, z), grads

    def batch_loss_grad(self, batch: ArrayDataset, rng: np.random.Generator | None = None):
        return self.loss_grad(batch.x, batch.y, rng)

    def dataset_loss(self, data: ArrayDataset) -> float:
        return bce_loss(self.predict_proba(data.x), data.y)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Deterministic eval-mode forward (dropout off)."""
        probs, _ = self._forward(x, None)
        return probs

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": list(self.hidden),
            "dropout_rate": self.dropout_rate,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @staticmethod
    def from_dict(payload: dict) -> "MlpModel":
        model = MlpModel(
            payload["dim"], tuple(payload["hidden"]), payload["dropout_rate"]
        )
        for key, value in payload["params"].items():
            model.params[key] = np.asarray(value, dtype=np.float64)
        return model
