"""Listwise ranker: boosted trees driven by pairwise logistic gradients
weighted by the NDCG@1 change of swapping the pair.

Each question's answers form one list.  Lists whose labels are all equal
carry no preference information and contribute zero gradient.  Scores are
turned into probabilities with a softmax when a probability vector is
required.
"""

from __future__ import annotations

import numpy as np

from .base import scores_to_softmax
from .trees import (
    GBDT_LEARNING_RATE,
    GBDT_MAX_DEPTH,
    GBDT_MAX_ROUNDS,
    GBDT_MIN_SAMPLES_LEAF,
    GBDT_PATIENCE,
    RegressionTree,
    fit_tree,
)


def ndcg_at_1(scores: np.ndarray, labels: np.ndarray) -> float:
    """NDCG@1 for binary labels: the label of the top-scored item.

    Ranking ties break toward the lower index; lists with no relevant item
    score 0.
    """
    if scores.size == 0:
        raise ValueError("empty list")
    if labels.max() == 0:
        return 0.0
    order = sorted(range(scores.size), key=lambda i: (-scores[i], i))
    return float(labels[order[0]])


def rank_order(scores: np.ndarray) -> list[int]:
    return sorted(range(scores.size), key=lambda i: (-scores[i], i))


def _list_lambdas(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-item (gradient, hessian, weighted pair loss) for one list.

    For each pair with label_i > label_j the RankNet gradient sigma(s_j -
    s_i) is weighted by |delta NDCG@1| of swapping the two items in the
    current ranking.
    """
    m = scores.size
    grad = np.zeros(m)
    hess = np.zeros(m)
    loss = 0.0
    if labels.max() == labels.min():
        return grad, hess, loss
    top = rank_order(scores)[0]
    for i in range(m):
        for j in range(m):
            if labels[i] <= labels[j]:
                continue
            # Swapping only moves NDCG@1 when one of the pair is ranked first.
            if i == top or j == top:
                delta = abs(float(labels[i]) - float(labels[j]))
            else:
                delta = 0.0
            if delta == 0.0:
                continue
            diff = scores[i] - scores[j]
            rho = 1.0 / (1.0 + np.exp(diff)) if diff >= 0 else 1.0 - 1.0 / (1.0 + np.exp(-diff))
            grad[i] += -delta * rho
            grad[j] += delta * rho
            curvature = delta * rho * (1.0 - rho)
            hess[i] += curvature
            hess[j] += curvature
            loss += delta * float(np.logaddexp(0.0, -diff))
    return grad, hess, loss


class RankingModel:
    """LambdaMART-style boosted ranker over per-question answer lists."""

    kind = "rank"

    def __init__(
        self,
        learning_rate: float = GBDT_LEARNING_RATE,
        max_depth: int = GBDT_MAX_DEPTH,
        max_rounds: int = GBDT_MAX_ROUNDS,
        patience: int = GBDT_PATIENCE,
        min_samples_leaf: int = GBDT_MIN_SAMPLES_LEAF,
    ):
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.max_rounds = max_rounds
        self.patience = patience
        self.min_samples_leaf = min_samples_leaf
        self.trees: list[RegressionTree] = []

    @staticmethod
    def _stack(lists: list[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray, list[tuple[int, int]]]:
        for x, z in lists:
            if x.shape[0] < 2:
                raise ValueError("ranking lists need at least 2 items")
        x_all = np.vstack([x for x, _ in lists])
        z_all = np.concatenate([z for _, z in lists])
        bounds = []
        offset = 0
        for x, _ in lists:
            bounds.append((offset, offset + x.shape[0]))
            offset += x.shape[0]
        return x_all, z_all, bounds

    def _lambdas(
        self, scores: np.ndarray, z: np.ndarray, bounds: list[tuple[int, int]]
    ) -> tuple[np.ndarray, np.ndarray, float]:
        grad = np.zeros_like(scores)
        hess = np.zeros_like(scores)
        total_loss = 0.0
        for lo, hi in bounds:
            g, h, loss = _list_lambdas(scores[lo:hi], z[lo:hi])
            grad[lo:hi] = g
            hess[lo:hi] = h
            total_loss += loss
        return grad, hess, total_loss / len(bounds)

    def fit(
        self,
        train_lists: list[tuple[np.ndarray, np.ndarray]],
        val_lists: list[tuple[np.ndarray, np.ndarray]] | None = None,
    ) -> "RankingModel":
        x, z, bounds = self._stack(train_lists)
        scores = np.zeros(x.shape[0])
        self.trees = []
        use_val = bool(val_lists)
        if use_val:
            xv, zv, vbounds = self._stack(val_lists)
            val_scores = np.zeros(xv.shape[0])
            best_loss = self._lambdas(val_scores, zv, vbounds)[2]
            best_rounds = 0
            stale = 0
        for _ in range(self.max_rounds):
            grad, hess, _ = self._lambdas(scores, z, bounds)
            # Items untouched by any pair keep zero grad/hess; the Newton
            # leaf denominator guard handles all-zero leaves.
            tree = fit_tree(
                x, grad, hess, max_depth=self.max_depth, min_leaf=self.min_samples_leaf
            )
            self.trees.append(tree)
            scores += self.learning_rate * tree.predict(x)
            if use_val:
                val_scores += self.learning_rate * tree.predict(xv)
                loss = self._lambdas(val_scores, zv, vbounds)[2]
                if loss < best_loss:
                    best_loss = loss
                    best_rounds = len(self.trees)
                    stale = 0
                else:
                    stale += 1
                    if stale >= self.patience:
                        break
        if use_val:
            self.trees = self.trees[:best_rounds]
        return self

    def scores(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[0])
        for tree in self.trees:
            out += self.learning_rate * tree.predict(x)
        return out

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Per-list probabilities for one instance's answers (softmax)."""
        return scores_to_softmax(self.scores(x))

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @staticmethod
    def from_dict(payload: dict) -> "RankingModel":
        model = RankingModel(
            learning_rate=payload["learning_rate"], max_depth=payload["max_depth"]
        )
        model.trees = [RegressionTree.from_dict(t) for t in payload["trees"]]
        return model
