"""Logistic regression on standardized per-answer features."""

from __future__ import annotations

import numpy as np

from ..training import ArrayDataset
from .base import bce_loss, sigmoid


class LogisticModel:
    kind = "logreg"

    def __init__(self, dim: int):
        # Zero init: the objective is convex, and sigma(0) = 0.5 is the
        # natural uninformed starting point.
        self.params: dict[str, np.ndarray] = {
            "w": np.zeros(dim),
            "b": np.zeros(1),
        }

    @property
    def dim(self) -> int:
        return int(self.params["w"].size)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(x @ self.params["w"] + self.params["b"][0])

    def loss_grad(self, x: np.ndarray, z: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy and its analytic gradient over a batch."""
        probs = self.forward(x)
        n = x.shape[0]
        residual = probs - z
        grads = {
            "w": x.T @ residual / n,
            "b": np.array([residual.mean()]),
        }
        return bce_loss(probs, z), grads

    def batch_loss_grad(self, batch: ArrayDataset, rng=None):
        return self.loss_grad(batch.x, batch.y)

    def dataset_loss(self, data: ArrayDataset) -> float:
        return bce_loss(self.forward(data.x), data.y)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "w": self.params["w"].tolist(), "b": self.params["b"].tolist()}

    @staticmethod
    def from_dict(payload: dict) -> "LogisticModel":
        model = LogisticModel(payload["dim"])
        model.params["w"] = np.asarray(payload["w"], dtype=np.float64)
        model.params["b"] = np.asarray(payload["b"], dtype=np.float64)
        return model
