"""Regression trees with exact greedy splits, gradient boosting on logistic
loss, and a small bagged forest reusing the same tree learner.

The tree learner works on per-example gradient/hessian pairs, so the
boosted classifier (g = p - z, h = p(1-p)) and the listwise ranker
(lambda gradients) share one implementation.  Split search scans every
distinct value of every feature; data sizes here are small enough that
exactness beats histogram approximations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import bce_loss, sigmoid

LAMBDA_REG = 1e-6
MIN_SPLIT_GAIN = 1e-12

GBDT_LEARNING_RATE = 0.05
GBDT_MAX_DEPTH = 6
GBDT_MAX_ROUNDS = 200
GBDT_PATIENCE = 20
GBDT_MIN_SAMPLES_LEAF = 5


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    value: float = 0.0
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class RegressionTree:
    """Binary tree; rows with feature value <= threshold go left."""

    nodes: list[TreeNode] = field(default_factory=list)

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(x.shape[0])
        stack = [(0, np.arange(x.shape[0]))]
        while stack:
            node_id, rows = stack.pop()
            if rows.size == 0:
                continue
            node = self.nodes[node_id]
            if node.is_leaf:
                out[rows] = node.value
                continue
            go_left = x[rows, node.feature] <= node.threshold
            stack.append((node.left, rows[go_left]))
            stack.append((node.right, rows[~go_left]))
        return out

    def feature_gains(self, dim: int) -> np.ndarray:
        gains = np.zeros(dim)
        for node in self.nodes:
            if not node.is_leaf:
                gains[node.feature] += node.gain
        return gains

    def max_depth(self) -> int:
        depths = {0: 0}
        deepest = 0
        for node_id, node in enumerate(self.nodes):
            depth = depths[node_id]
            deepest = max(deepest, depth)
            if not node.is_leaf:
                depths[node.left] = depth + 1
                depths[node.right] = depth + 1
        return deepest

    def to_dict(self) -> dict:
        return {
            "nodes": [
                [n.feature, n.threshold, n.left, n.right, n.value, n.gain]
                for n in self.nodes
            ]
        }

    @staticmethod
    def from_dict(payload: dict) -> "RegressionTree":
        return RegressionTree(
            nodes=[
                TreeNode(int(f), float(t), int(l), int(r), float(v), float(g))
                for f, t, l, r, v, g in payload["nodes"]
            ]
        )


def _leaf_value(g_sum: float, h_sum: float) -> float:
    return -g_sum / (h_sum + LAMBDA_REG)


def _best_split(
    x: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    min_leaf: int,
    feature_subset: np.ndarray | None,
) -> tuple[float, int, float] | None:
    """Exact greedy search over (feature, threshold); None when no split helps."""
    g_node = g[rows]
    h_node = h[rows]
    g_total = g_node.sum()
    h_total = h_node.sum()
    parent_score = g_total**2 / (h_total + LAMBDA_REG)
    n = rows.size
    best_gain = MIN_SPLIT_GAIN
    best: tuple[float, int, float] | None = None
    features = feature_subset if feature_subset is not None else np.arange(x.shape[1])
    for feature in features:
        values = x[rows, feature]
        order = np.argsort(values, kind="stable")
        sv = values[order]
        cg = np.cumsum(g_node[order])
        ch = np.cumsum(h_node[order])
        # Candidate split after position i requires distinct neighbors and
        # at least min_leaf rows on each side.
        lo = min_leaf - 1
        hi = n - min_leaf
        if hi <= lo:
            continue
        positions = np.nonzero(sv[lo:hi] < sv[lo + 1:hi + 1])[0] + lo
        if positions.size == 0:
            continue
        gl = cg[positions]
        hl = ch[positions]
        gr = g_total - gl
        hr = h_total - hl
        gains = 0.5 * (
            gl**2 / (hl + LAMBDA_REG) + gr**2 / (hr + LAMBDA_REG) - parent_score
        )
        pick = int(np.argmax(gains))
        if gains[pick] > best_gain:
            best_gain = float(gains[pick])
            best = (best_gain, int(feature), float(sv[positions[pick]]))
    return best


def fit_tree(
    x: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    max_depth: int = GBDT_MAX_DEPTH,
    min_leaf: int = GBDT_MIN_SAMPLES_LEAF,
    rows: np.ndarray | None = None,
    feature_subset: np.ndarray | None = None,
) -> RegressionTree:
    """Fit one regression tree to gradient/hessian targets (Newton leaves)."""
    tree = RegressionTree()
    root_rows = rows if rows is not None else np.arange(x.shape[0])

    def build(node_rows: np.ndarray, depth: int) -> int:
        node_id = len(tree.nodes)
        tree.nodes.append(TreeNode())
        node = tree.nodes[node_id]
        split = None
        if depth < max_depth and node_rows.size >= 2 * min_leaf:
            split = _best_split(x, g, h, node_rows, min_leaf, feature_subset)
        if split is None:
            node.value = _leaf_value(g[node_rows].sum(), h[node_rows].sum())
            return node_id
        gain, feature, threshold = split
        node.feature = feature
        node.threshold = threshold
        node.gain = gain
        go_left = x[node_rows, feature] <= threshold
        node.left = build(node_rows[go_left], depth + 1)
        node.right = build(node_rows[~go_left], depth + 1)
        return node_id

    build(root_rows, 0)
    return tree


class GbdtClassifier:
    """Gradient boosting on logistic loss with round-level early stopping."""

    kind = "gbdt"

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
        self.base_score = 0.0
        self.trees: list[RegressionTree] = []
        self.val_losses: list[float] = []

    def fit(
        self,
        x: np.ndarray,
        z: np.ndarray,
        x_val: np.ndarray | None = None,
        z_val: np.ndarray | None = None,
    ) -> "GbdtClassifier":
        z = np.asarray(z, dtype=np.float64)
        positives = z.mean()
        if positives in (0.0, 1.0):
            raise ValueError("degenerate single-class training set")
        self.base_score = float(np.log(positives / (1.0 - positives)))
        self.trees = []
        self.val_losses = []
        scores = np.full(x.shape[0], self.base_score)
        use_val = x_val is not None and x_val.shape[0] > 0
        if use_val:
            val_scores = np.full(x_val.shape[0], self.base_score)
            best_loss = bce_loss(sigmoid(val_scores), z_val)
            best_rounds = 0
            stale = 0
        for _ in range(self.max_rounds):
            probs = sigmoid(scores)
            tree = fit_tree(
                x,
                probs - z,
                probs * (1.0 - probs),
                max_depth=self.max_depth,
                min_leaf=self.min_samples_leaf,
            )
            self.trees.append(tree)
            scores += self.learning_rate * tree.predict(x)
            if use_val:
                val_scores += self.learning_rate * tree.predict(x_val)
                loss = bce_loss(sigmoid(val_scores), z_val)
                self.val_losses.append(loss)
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
            self.val_losses = self.val_losses[:best_rounds]
        return self

    def decision_scores(self, x: np.ndarray) -> np.ndarray:
        scores = np.full(x.shape[0], self.base_score)
        for tree in self.trees:
            scores += self.learning_rate * tree.predict(x)
        return scores

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision_scores(x))

    def feature_gains(self, dim: int) -> np.ndarray:
        total = np.zeros(dim)
        for tree in self.trees:
            total += tree.feature_gains(dim)
        return total

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "base_score": self.base_score,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @staticmethod
    def from_dict(payload: dict) -> "GbdtClassifier":
        model = GbdtClassifier(
            learning_rate=payload["learning_rate"], max_depth=payload["max_depth"]
        )
        model.base_score = payload["base_score"]
        model.trees = [RegressionTree.from_dict(t) for t in payload["trees"]]
        return model


class RandomForestClassifier:
    """Bagged depth-limited trees with per-tree feature subsampling.

    Optional extra for ablation tooling; not part of the CLI model set.
    """

    kind = "rf"

    def __init__(
        self,
        num_trees: int = 100,
        max_depth: int = GBDT_MAX_DEPTH,
        min_samples_leaf: int = GBDT_MIN_SAMPLES_LEAF,
        seed: int = 0,
    ):
        self.num_trees = num_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.seed = seed
        self.trees: list[RegressionTree] = []

    def fit(self, x: np.ndarray, z: np.ndarray) -> "RandomForestClassifier":
        rng = np.random.default_rng(self.seed)
        n, dim = x.shape
        n_features = max(1, int(np.sqrt(dim)))
        # With g = -z and unit hessians the Newton leaf value is the mean
        # label of the leaf, i.e. a plain probability estimate.
        ones = np.ones(n)
        self.trees = []
        for _ in range(self.num_trees):
            rows = rng.integers(0, n, size=n)
            features = np.sort(rng.choice(dim, size=n_features, replace=False))
            tree = fit_tree(
                x,
                -z.astype(np.float64),
                ones,
                max_depth=self.max_depth,
                min_leaf=self.min_samples_leaf,
                rows=rows,
                feature_subset=features,
            )
            self.trees.append(tree)
        return self

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        votes = np.zeros(x.shape[0])
        for tree in self.trees:
            votes += tree.predict(x)
        return np.clip(votes / len(self.trees), 0.0, 1.0)
