"""Per-instance answer similarity graphs and their normalized adjacency.

Nodes are the M answers of one question; edges link semantically similar
answers, either by similarity threshold or by symmetrized k-nearest
neighbors.  Edge weights carry the cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AnswerGraph:
    """Undirected weighted graph; each edge stored once with m < n."""

    num_nodes: int
    edges: tuple[tuple[int, int, float], ...]
    construction: str

    def adjacency(self) -> np.ndarray:
        matrix = np.zeros((self.num_nodes, self.num_nodes))
        for m, n, w in self.edges:
            matrix[m, n] = matrix[n, m] = w
        return matrix

    def neighbors(self, node: int) -> list[int]:
        out = []
        for m, n, _ in self.edges:
            if m == node:
                out.append(n)
            elif n == node:
                out.append(m)
        return sorted(out)


def build_threshold_graph(sim: np.ndarray, tau: float) -> AnswerGraph:
    """Edge (m, n) iff similarity >= tau, weighted by the similarity."""
    m = sim.shape[0]
    edges = []
    for a in range(m):
        for b in range(a + 1, m):
            if sim[a, b] >= tau:
                edges.append((a, b, float(sim[a, b])))
    return AnswerGraph(m, tuple(edges), f"threshold({tau:g})")


def build_knn_graph(sim: np.ndarray, k: int) -> AnswerGraph:
    """Directed k-nearest-neighbor edges symmetrized by union.

    Neighbor ties on similarity resolve toward the lower index, keeping
    the construction deterministic.
    """
    m = sim.shape[0]
    if not 1 <= k <= m - 1:
        raise ValueError(f"k must be in [1, {m - 1}], got {k}")
    chosen: set[tuple[int, int]] = set()
    for node in range(m):
        others = [other for other in range(m) if other != node]
        others.sort(key=lambda other: (-sim[node, other], other))
        for other in others[:k]:
            chosen.add((min(node, other), max(node, other)))
    edges = tuple((a, b, float(sim[a, b])) for a, b in sorted(chosen))
    return AnswerGraph(m, edges, f"knn({k})")


def normalized_adjacency(graph: AnswerGraph) -> np.ndarray:
    """Symmetric normalization D^{-1/2} (A + I) D^{-1/2} of the weighted adjacency.

    The added self-loops guarantee positive degrees, so isolated nodes map
    to a normalized self-weight of 1.
    """
    a_tilde = graph.adjacency() + np.eye(graph.num_nodes)
    degrees = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degrees)
    return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]
