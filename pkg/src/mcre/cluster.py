"""Agglomerative clustering of answer embeddings under cosine distance.

Average linkage (unweighted pair-group mean over all cross pairs), with a
fully deterministic merge order: ties on distance are broken by the
smallest (i, j) pair of cluster labels, where a cluster's label is its
smallest member's original index.  Cross-pair means are recomputed from
the original point-distance matrix at every step, in sorted index order,
so merge decisions are reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Instances whose answers all but coincide get a single cluster; silhouette
# cannot express K=1, so a minimum-similarity threshold decides it.
ALL_AGREE_MIN_SIMILARITY = 0.95


@dataclass(frozen=True)
class Merge:
    label_a: int
    label_b: int
    distance: float


@dataclass(frozen=True)
class ClusterAssignment:
    """Cluster labels for the M answers of one instance.

    Labels are 0-based and canonical: each cluster is labeled by the rank
    of its smallest member index, so label 0 always contains answer 0.
    """

    labels: np.ndarray

    @property
    def num_points(self) -> int:
        return int(self.labels.size)

    @property
    def num_clusters(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_clusters)

    @property
    def major_label(self) -> int:
        """Largest cluster; ties broken by lowest cluster label."""
        return int(np.argmax(self.cluster_sizes))

    @property
    def major_ratio(self) -> float:
        return float(self.cluster_sizes.max()) / self.num_points

    @property
    def major_flags(self) -> np.ndarray:
        return (self.labels == self.major_label).astype(np.float64)


def pairwise_cosine_distance(embeddings: np.ndarray) -> np.ndarray:
    """M x M matrix of d = 1 - cosine similarity, exact zeros on the diagonal."""
    matrix = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm vector in clustering input")
    unit = matrix / norms[:, None]
    sim = unit @ unit.T
    np.clip(sim, -1.0, 1.0, out=sim)
    dist = 1.0 - sim
    np.fill_diagonal(dist, 0.0)
    return dist


def _cross_mean(dist: np.ndarray, members_a: tuple[int, ...], members_b: tuple[int, ...]) -> float:
    total = 0.0
    for p in members_a:
        for q in members_b:
            total += dist[p, q]
    return total / (len(members_a) * len(members_b))


def average_linkage_merges(dist: np.ndarray) -> list[Merge]:
    """Full merge sequence from M singletons down to one cluster."""
    m = dist.shape[0]
    clusters: dict[int, tuple[int, ...]] = {i: (i,) for i in range(m)}
    merges: list[Merge] = []
    while len(clusters) > 1:
        labels = sorted(clusters)
        best: tuple[float, int, int] | None = None
        for ai, a in enumerate(labels):
            for b in labels[ai + 1:]:
                candidate = (_cross_mean(dist, clusters[a], clusters[b]), a, b)
                if best is None or candidate < best:
                    best = candidate
        assert best is not None
        distance, a, b = best
        merged = tuple(sorted(clusters[a] + clusters[b]))
        del clusters[b]
        clusters[a] = merged
        merges.append(Merge(a, b, distance))
    return merges


def labels_for_k(merges: list[Merge], num_points: int, k: int) -> np.ndarray:
    """Replay the first M-K merges and return canonical 0-based labels."""
    if not 1 <= k <= num_points:
        raise ValueError(f"K must be in [1, {num_points}], got {k}")
    parent = list(range(num_points))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for merge in merges[: num_points - k]:
        ra, rb = find(merge.label_a), find(merge.label_b)
        # Root at the smaller index so cluster labels match merge labels.
        lo, hi = min(ra, rb), max(ra, rb)
        parent[hi] = lo
    roots = [find(i) for i in range(num_points)]
    order = {root: rank for rank, root in enumerate(sorted(set(roots)))}
    return np.array([order[root] for root in roots], dtype=np.int64)


def agglomerative_cluster(embeddings: np.ndarray, k: int) -> ClusterAssignment:
    """Average-linkage clustering of the given embeddings at exactly K clusters."""
    dist = pairwise_cosine_distance(embeddings)
    merges = average_linkage_merges(dist)
    return ClusterAssignment(labels_for_k(merges, dist.shape[0], k))


def mean_silhouette(dist: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over all points; singleton clusters score 0."""
    m = dist.shape[0]
    label_set = np.unique(labels)
    if label_set.size < 2:
        return 0.0
    scores = np.zeros(m)
    for i in range(m):
        own = labels[i]
        own_mask = (labels == own)
        own_size = int(own_mask.sum())
        if own_size == 1:
            continue
        a = dist[i, own_mask].sum() / (own_size - 1)
        b = np.inf
        for other in label_set:
            if other == own:
                continue
            other_mask = labels == other
            b = min(b, dist[i, other_mask].mean())
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def select_k_silhouette(embeddings: np.ndarray) -> int:
    """Pick K: all-agree threshold rule first, then silhouette argmax.

    When the minimum pairwise similarity is at least 0.95 every answer is
    treated as one cluster.  Otherwise K ranges over {2, ..., M-1} (just
    {2} when M = 2), scored by mean silhouette on cosine distance, with
    ties resolved toward smaller K.
    """
    dist = pairwise_cosine_distance(embeddings)
    m = dist.shape[0]
    if m < 2:
        return 1
    off_diag = dist[~np.eye(m, dtype=bool)]
    if (1.0 - off_diag.max()) >= ALL_AGREE_MIN_SIMILARITY:
        return 1
    candidates = [2] if m == 2 else list(range(2, m))
    merges = average_linkage_merges(dist)
    best_k = candidates[0]
    best_score = -np.inf
    for k in candidates:
        score = mean_silhouette(dist, labels_for_k(merges, m, k))
        if score > best_score:
            best_score = score
            best_k = k
    return best_k
