"""Graph neural meta-models over per-instance answer graphs.

Both models run on batches formed as block-diagonal unions of instance
graphs (no cross-graph edges), with message passing written as gather /
scatter over edge arrays.  The GCN aggregates with the symmetric
normalized adjacency of the weighted graph; the GAT uses edges for
connectivity only and learns attention weights, with self-loops so every
node has a defined neighborhood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import AnswerGraph, normalized_adjacency
from ..rng import stream_rng
from ..training import ListDataset
from .base import bce_loss, glorot_uniform, sigmoid

GCN_HIDDEN_WIDTH = 64
GAT_NUM_HEADS = 4
GAT_L1_HEAD_DIM = 16
GAT_L2_HEAD_DIM = 64
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class GraphExample:
    graph: AnswerGraph
    x: np.ndarray
    z: np.ndarray


@dataclass
class GraphBatch:
    x: np.ndarray
    z: np.ndarray
    num_nodes: int
    # Normalized-adjacency entries (self-loops and both directions included).
    gcn_src: np.ndarray
    gcn_dst: np.ndarray
    gcn_coef: np.ndarray
    # Directed attention pairs: dst attends over src in N(dst) + {dst}.
    att_src: np.ndarray
    att_dst: np.ndarray


def build_graph_batch(examples: list[GraphExample]) -> GraphBatch:
    """Union the given instance graphs block-diagonally."""
    xs, zs = [], []
    gcn_src, gcn_dst, gcn_coef = [], [], []
    att_src, att_dst = [], []
    offset = 0
    for example in examples:
        n = example.graph.num_nodes
        xs.append(np.asarray(example.x, dtype=np.float64))
        zs.append(np.asarray(example.z, dtype=np.float64))
        normalized = normalized_adjacency(example.graph)
        rows, cols = np.nonzero(normalized)
        gcn_src.append(cols + offset)
        gcn_dst.append(rows + offset)
        gcn_coef.append(normalized[rows, cols])
        pair_src = list(range(n))
        pair_dst = list(range(n))
        for a, b, _ in example.graph.edges:
            pair_src.extend([a, b])
            pair_dst.extend([b, a])
        att_src.append(np.asarray(pair_src, dtype=np.int64) + offset)
        att_dst.append(np.asarray(pair_dst, dtype=np.int64) + offset)
        offset += n
    return GraphBatch(
        x=np.vstack(xs),
        z=np.concatenate(zs),
        num_nodes=offset,
        gcn_src=np.concatenate(gcn_src),
        gcn_dst=np.concatenate(gcn_dst),
        gcn_coef=np.concatenate(gcn_coef),
        att_src=np.concatenate(att_src),
        att_dst=np.concatenate(att_dst),
    )


def _aggregate(batch: GraphBatch, h: np.ndarray) -> np.ndarray:
    """out[i] = sum over entries (src -> i) of coef * h[src]."""
    out = np.zeros_like(h)
    np.add.at(out, batch.gcn_dst, batch.gcn_coef[:, None] * h[batch.gcn_src])
    return out


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, LEAKY_SLOPE * x)


def _leaky_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, 1.0, LEAKY_SLOPE)


class GcnModel:
    """Two GCN layers (ReLU) followed by a per-node linear + sigmoid."""

    kind = "gcn"

    def __init__(self, dim: int, hidden: int = GCN_HIDDEN_WIDTH, seed: int = 0):
        self.dim = dim
        self.hidden = hidden
        rng = stream_rng(seed, "init")
        self.params: dict[str, np.ndarray] = {
            "w0": glorot_uniform(rng, dim, hidden, (dim, hidden)),
            "w1": glorot_uniform(rng, hidden, hidden, (hidden, hidden)),
            "w_out": glorot_uniform(rng, hidden, 1, (hidden,)),
            "b_out": np.zeros(1),
        }

    def _forward(self, batch: GraphBatch) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        p = self.params
        agg0 = _aggregate(batch, batch.x)
        pre1 = agg0 @ p["w0"]
        h1 = np.maximum(pre1, 0.0)
        agg1 = _aggregate(batch, h1)
        pre2 = agg1 @ p["w1"]
        h2 = np.maximum(pre2, 0.0)
        logits = h2 @ p["w_out"] + p["b_out"][0]
        probs = sigmoid(logits)
        cache = {"agg0": agg0, "pre1": pre1, "agg1": agg1, "pre2": pre2, "h2": h2, "probs": probs}
        return probs, cache

    def loss_grad(self, batch: GraphBatch) -> tuple[float, dict[str, np.ndarray]]:
        probs, cache = self._forward(batch)
        p = self.params
        n = batch.num_nodes
        dlogits = (probs - batch.z) / n
        grads: dict[str, np.ndarray] = {}
        grads["w_out"] = cache["h2"].T @ dlogits
        grads["b_out"] = np.array([dlogits.sum()])
        dh2 = np.outer(dlogits, p["w_out"])
        dpre2 = dh2 * (cache["pre2"] > 0.0)
        grads["w1"] = cache["agg1"].T @ dpre2
        dagg1 = dpre2 @ p["w1"].T
        dh1 = _aggregate(batch, dagg1)  # normalized adjacency is symmetric
        dpre1 = dh1 * (cache["pre1"] > 0.0)
        grads["w0"] = cache["agg0"].T @ dpre1
        return bce_loss(probs, batch.z), grads

    def batch_loss_grad(self, batch: ListDataset, rng=None):
        graph_batch = build_graph_batch(batch.items)
        return self.loss_grad(graph_batch)

    def dataset_loss(self, data: ListDataset) -> float:
        batch = build_graph_batch(data.items)
        probs, _ = self._forward(batch)
        return bce_loss(probs, batch.z)

    def predict_proba(self, x: np.ndarray, graph: AnswerGraph) -> np.ndarray:
        batch = build_graph_batch([GraphExample(graph, x, np.zeros(x.shape[0]))])
        probs, _ = self._forward(batch)
        return probs

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "hidden": self.hidden,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @staticmethod
    def from_dict(payload: dict) -> "GcnModel":
        model = GcnModel(payload["dim"], payload["hidden"])
        for key, value in payload["params"].items():
            model.params[key] = np.asarray(value, dtype=np.float64)
        return model


def _segment_softmax(scores: np.ndarray, groups: np.ndarray, num_groups: int) -> np.ndarray:
    """Softmax over edge scores grouped by destination node."""
    group_max = np.full(num_groups, -np.inf)
    np.maximum.at(group_max, groups, scores)
    shifted = np.exp(scores - group_max[groups])
    denom = np.zeros(num_groups)
    np.add.at(denom, groups, shifted)
    return shifted / denom[groups]


class _GatLayer:
    """One multi-head attention layer; holds parameter names, not values."""

    def __init__(self, prefix: str, heads: int):
        self.prefix = prefix
        self.heads = heads

    def names(self, head: int) -> tuple[str, str, str]:
        return (
            f"{self.prefix}_w_{head}",
            f"{self.prefix}_aself_{head}",
            f"{self.prefix}_aneigh_{head}",
        )

    def forward(
        self, params: dict[str, np.ndarray], batch: GraphBatch, h: np.ndarray
    ) -> tuple[list[np.ndarray], list[dict]]:
        outputs, caches = [], []
        src, dst = batch.att_src, batch.att_dst
        for head in range(self.heads):
            w_name, aself_name, aneigh_name = self.names(head)
            w = params[w_name]
            a_self = params[aself_name]
            a_neigh = params[aneigh_name]
            zfeat = h @ w
            s_self = zfeat @ a_self
            s_neigh = zfeat @ a_neigh
            pre = s_self[dst] + s_neigh[src]
            act = _leaky(pre)
            alpha = _segment_softmax(act, dst, batch.num_nodes)
            out = np.zeros_like(zfeat)
            np.add.at(out, dst, alpha[:, None] * zfeat[src])
            outputs.append(out)
            caches.append({"z": zfeat, "pre": pre, "alpha": alpha, "h": h})
        return outputs, caches

    def backward(
        self,
        params: dict[str, np.ndarray],
        batch: GraphBatch,
        caches: list[dict],
        douts: list[np.ndarray],
        grads: dict[str, np.ndarray],
    ) -> np.ndarray:
        """Accumulate parameter grads; returns the gradient w.r.t. the layer input."""
        src, dst = batch.att_src, batch.att_dst
        dh_total = np.zeros_like(caches[0]["h"])
        for head in range(self.heads):
            w_name, aself_name, aneigh_name = self.names(head)
            w = params[w_name]
            a_self = params[aself_name]
            a_neigh = params[aneigh_name]
            cache = caches[head]
            zfeat, pre, alpha = cache["z"], cache["pre"], cache["alpha"]
            dout = douts[head]

            dalpha = np.einsum("ed,ed->e", dout[dst], zfeat[src])
            dz = np.zeros_like(zfeat)
            np.add.at(dz, src, alpha[:, None] * dout[dst])
            # Softmax backward within each destination group.
            weighted = alpha * dalpha
            group_sum = np.zeros(batch.num_nodes)
            np.add.at(group_sum, dst, weighted)
            dact = weighted - alpha * group_sum[dst]
            dpre = dact * _leaky_grad(pre)
            ds_self = np.zeros(batch.num_nodes)
            np.add.at(ds_self, dst, dpre)
            ds_neigh = np.zeros(batch.num_nodes)
            np.add.at(ds_neigh, src, dpre)
            dz += np.outer(ds_self, a_self) + np.outer(ds_neigh, a_neigh)
            grads[aself_name] = grads.get(aself_name, 0.0) + zfeat.T @ ds_self
            grads[aneigh_name] = grads.get(aneigh_name, 0.0) + zfeat.T @ ds_neigh
            grads[w_name] = grads.get(w_name, 0.0) + cache["h"].T @ dz
            dh_total += dz @ w.T
        return dh_total


class GatModel:
    """Two GAT layers (4 heads each, LeakyReLU) and a per-node linear scorer.

    Head outputs are concatenated after layer 1 and averaged after layer 2.
    """

    kind = "gat"

    def __init__(
        self,
        dim: int,
        heads: int = GAT_NUM_HEADS,
        l1_head_dim: int = GAT_L1_HEAD_DIM,
        l2_head_dim: int = GAT_L2_HEAD_DIM,
        seed: int = 0,
    ):
        self.dim = dim
        self.heads = heads
        self.l1_head_dim = l1_head_dim
        self.l2_head_dim = l2_head_dim
        self.layer1 = _GatLayer("l1", heads)
        self.layer2 = _GatLayer("l2", heads)
        rng = stream_rng(seed, "init")
        params: dict[str, np.ndarray] = {}
        l1_out = heads * l1_head_dim
        for head in range(heads):
            params[f"l1_w_{head}"] = glorot_uniform(rng, dim, l1_head_dim, (dim, l1_head_dim))
            params[f"l1_aself_{head}"] = glorot_uniform(rng, l1_head_dim, 1, (l1_head_dim,))
            params[f"l1_aneigh_{head}"] = glorot_uniform(rng, l1_head_dim, 1, (l1_head_dim,))
        for head in range(heads):
            params[f"l2_w_{head}"] = glorot_uniform(rng, l1_out, l2_head_dim, (l1_out, l2_head_dim))
            params[f"l2_aself_{head}"] = glorot_uniform(rng, l2_head_dim, 1, (l2_head_dim,))
            params[f"l2_aneigh_{head}"] = glorot_uniform(rng, l2_head_dim, 1, (l2_head_dim,))
        params["w_out"] = glorot_uniform(rng, l2_head_dim, 1, (l2_head_dim,))
        params["b_out"] = np.zeros(1)
        self.params = params

    def _forward(self, batch: GraphBatch) -> tuple[np.ndarray, dict]:
        outs1, caches1 = self.layer1.forward(self.params, batch, batch.x)
        concat_pre = np.concatenate(outs1, axis=1)
        act1 = _leaky(concat_pre)
        outs2, caches2 = self.layer2.forward(self.params, batch, act1)
        mean_pre = sum(outs2) / self.heads
        act2 = _leaky(mean_pre)
        logits = act2 @ self.params["w_out"] + self.params["b_out"][0]
        probs = sigmoid(logits)
        cache = {
            "caches1": caches1, "concat_pre": concat_pre, "act1": act1,
            "caches2": caches2, "mean_pre": mean_pre, "act2": act2, "probs": probs,
        }
        return probs, cache

    def loss_grad(self, batch: GraphBatch) -> tuple[float, dict[str, np.ndarray]]:
        probs, cache = self._forward(batch)
        n = batch.num_nodes
        dlogits = (probs - batch.z) / n
        grads: dict[str, np.ndarray] = {}
        grads["w_out"] = cache["act2"].T @ dlogits
        grads["b_out"] = np.array([dlogits.sum()])
        dact2 = np.outer(dlogits, self.params["w_out"])
        dmean = dact2 * _leaky_grad(cache["mean_pre"])
        douts2 = [dmean / self.heads for _ in range(self.heads)]
        dact1 = self.layer2.backward(self.params, batch, cache["caches2"], douts2, grads)
        dconcat = dact1 * _leaky_grad(cache["concat_pre"])
        douts1 = [
            dconcat[:, head * self.l1_head_dim:(head + 1) * self.l1_head_dim]
            for head in range(self.heads)
        ]
        self.layer1.backward(self.params, batch, cache["caches1"], douts1, grads)
        return bce_loss(probs, batch.z), grads

    def batch_loss_grad(self, batch: ListDataset, rng=None):
        graph_batch = build_graph_batch(batch.items)
        return self.loss_grad(graph_batch)

    def dataset_loss(self, data: ListDataset) -> float:
        batch = build_graph_batch(data.items)
        probs, _ = self._forward(batch)
        return bce_loss(probs, batch.z)

    def predict_proba(self, x: np.ndarray, graph: AnswerGraph) -> np.ndarray:
        batch = build_graph_batch([GraphExample(graph, x, np.zeros(x.shape[0]))])
        probs, _ = self._forward(batch)
        return probs

    def attention_coefficients(self, x: np.ndarray, graph: AnswerGraph, head: int = 0) -> dict:
        """Layer-1 attention per directed pair (dst, src) -> alpha, for tests."""
        batch = build_graph_batch([GraphExample(graph, x, np.zeros(x.shape[0]))])
        _, caches = self.layer1.forward(self.params, batch, batch.x)
        alpha = caches[head]["alpha"]
        return {
            (int(d), int(s)): float(a)
            for d, s, a in zip(batch.att_dst, batch.att_src, alpha)
        }

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "heads": self.heads,
            "l1_head_dim": self.l1_head_dim,
            "l2_head_dim": self.l2_head_dim,
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @staticmethod
    def from_dict(payload: dict) -> "GatModel":
        model = GatModel(
            payload["dim"], payload["heads"], payload["l1_head_dim"], payload["l2_head_dim"]
        )
        for key, value in payload["params"].items():
            model.params[key] = np.asarray(value, dtype=np.float64)
        return model
