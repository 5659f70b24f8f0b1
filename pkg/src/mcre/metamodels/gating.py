"""Question-only gating baseline: an MLP on the question embedding emits
per-model weights, which are multiplied by fixed per-dataset prior
accuracies and renormalized into a probability vector.  It never sees the
answers, so it can only capture domain-level model preferences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import stream_rng
from ..training import ListDataset
from .base import bce_loss, glorot_uniform, scores_to_softmax

GATING_HIDDEN_WIDTH = 64


@dataclass(frozen=True)
class GatingExample:
    question_embedding: np.ndarray
    priors: np.ndarray
    z: np.ndarray


class GatingModel:
    kind = "gating"

    def __init__(self, embed_dim: int, num_models: int, hidden: int = GATING_HIDDEN_WIDTH, seed: int = 0):
        self.embed_dim = embed_dim
        self.num_models = num_models
        self.hidden = hidden
        rng = stream_rng(seed, "init")
        self.params: dict[str, np.ndarray] = {
            "w1": glorot_uniform(rng, embed_dim, hidden, (embed_dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": glorot_uniform(rng, hidden, num_models, (hidden, num_models)),
            "b2": np.zeros(num_models),
        }

    def _logits(self, u: np.ndarray) -> tuple[np.ndarray, dict]:
        p = self.params
        pre = u @ p["w1"] + p["b1"]
        act = np.maximum(pre, 0.0)
        logits = act @ p["w2"] + p["b2"]
        return logits, {"pre": pre, "act": act}

    def gating_weights(self, u: np.ndarray) -> np.ndarray:
        """Softmax model weights for one question embedding."""
        logits, _ = self._logits(u[None, :])
        return scores_to_softmax(logits[0])

    @staticmethod
    def consensus_probabilities(weights: np.ndarray, priors: np.ndarray) -> np.ndarray:
        """Renormalized weight x prior scores; the selection distribution."""
        scores = weights * priors
        total = scores.sum()
        if total <= 0.0:
            return np.full_like(scores, 1.0 / scores.size)
        return scores / total

    def predict_proba(self, u: np.ndarray, priors: np.ndarray) -> np.ndarray:
        return self.consensus_probabilities(self.gating_weights(u), priors)

    def loss_grad(self, examples: list[GatingExample]) -> tuple[float, dict[str, np.ndarray]]:
        """Mean per-answer cross-entropy and analytic gradients.

        Chains through the renormalization p = s / sum(s), the prior
        scaling s = w * prior, and the softmax w = softmax(MLP(u)).
        """
        u = np.stack([ex.question_embedding for ex in examples])
        priors = np.stack([ex.priors for ex in examples])
        z = np.stack([ex.z for ex in examples])
        n, m = z.shape
        logits, cache = self._logits(u)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expw = np.exp(shifted)
        w = expw / expw.sum(axis=1, keepdims=True)
        s = w * priors
        total = s.sum(axis=1, keepdims=True)
        p = s / total
        p_safe = np.clip(p, 1e-12, 1.0 - 1e-12)
        loss = float(-(z * np.log(p_safe) + (1 - z) * np.log(1 - p_safe)).mean())

        dp = (p_safe - z) / (p_safe * (1.0 - p_safe)) / (n * m)
        # p = s / total: ds = (dp - sum(dp * p)) / total
        ds = (dp - (dp * p).sum(axis=1, keepdims=True)) / total
        dw = ds * priors
        # softmax backward
        dlogits = w * (dw - (dw * w).sum(axis=1, keepdims=True))
        grads: dict[str, np.ndarray] = {}
        grads["w2"] = cache["act"].T @ dlogits
        grads["b2"] = dlogits.sum(axis=0)
        dact = dlogits @ self.params["w2"].T
        dpre = dact * (cache["pre"] > 0.0)
        grads["w1"] = u.T @ dpre
        grads["b1"] = dpre.sum(axis=0)
        return loss, grads

    def batch_loss_grad(self, batch: ListDataset, rng=None):
        return self.loss_grad(batch.items)

    def dataset_loss(self, data: ListDataset) -> float:
        losses = []
        for ex in data.items:
            probs = self.predict_proba(ex.question_embedding, ex.priors)
            losses.append(bce_loss(probs, ex.z))
        return float(np.mean(losses))

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "num_models": self.num_models,
            "hidden": self.hidden,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @staticmethod
    def from_dict(payload: dict) -> "GatingModel":
        model = GatingModel(payload["embed_dim"], payload["num_models"], payload["hidden"])
        for key, value in payload["params"].items():
            model.params[key] = np.asarray(value, dtype=np.float64)
        return model
