from __future__ import annotations

import numpy as np
import pytest

from mcre.cluster import (
    agglomerative_cluster,
    average_linkage_merges,
    labels_for_k,
    mean_silhouette,
    pairwise_cosine_distance,
    select_k_silhouette,
)

# ---------------------------------------------------------------------------
# Exhaustive reference implementations (independent of mcre.cluster).


def oracle_merges(dist: np.ndarray) -> list[tuple[int, int]]:
    """Naive average linkage: recompute every cross-pair mean each step."""
    clusters = {i: [i] for i in range(dist.shape[0])}
    merges = []
    while len(clusters) > 1:
        best = None
        labels = sorted(clusters)
        for ai, a in enumerate(labels):
            for b in labels[ai + 1:]:
                block = dist[np.ix_(clusters[a], clusters[b])]
                key = (float(np.sum(block)) / block.size, a, b)
                if best is None or key < best:
                    best = key
        _, a, b = best
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
        merges.append((a, b))
    return merges


def oracle_labels(dist: np.ndarray, k: int) -> list[int]:
    clusters = {i: [i] for i in range(dist.shape[0])}
    for a, b in oracle_merges(dist)[: dist.shape[0] - k]:
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    labels = [0] * dist.shape[0]
    for rank, root in enumerate(sorted(clusters)):
        for member in clusters[root]:
            labels[member] = rank
    return labels


def oracle_silhouette(dist: np.ndarray, labels: list[int]) -> float:
    n = dist.shape[0]
    scores = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = sum(dist[i, j] for j in own) / len(own)
        b = min(
            sum(dist[i, j] for j in range(n) if labels[j] == other)
            / sum(1 for j in range(n) if labels[j] == other)
            for other in set(labels)
            if other != labels[i]
        )
        denom = max(a, b)
        scores.append(0.0 if denom == 0 else (b - a) / denom)
    return sum(scores) / n


def oracle_select_k(embeddings: np.ndarray) -> int:
    dist = pairwise_cosine_distance(embeddings)
    m = dist.shape[0]
    off = dist[~np.eye(m, dtype=bool)]
    if 1.0 - off.max() >= 0.95:
        return 1
    candidates = [2] if m == 2 else list(range(2, m))
    best_k, best_score = None, -np.inf
    for k in candidates:
        score = oracle_silhouette(dist, oracle_labels(dist, k))
        if score > best_score:
            best_k, best_score = k, score
    return best_k


def _random_embeddings(rng: np.random.Generator, m: int, dim: int = 5) -> np.ndarray:
    return rng.standard_normal((m, dim))


# ---------------------------------------------------------------------------


class TestAgglomerative:
    def test_two_tight_pairs(self):
        # Two well-separated pairs: clustering at K=2 must recover them.
        emb = np.array(
            [[1.0, 0.01], [1.0, -0.01], [0.01, 1.0], [-0.01, 1.0]]
        )
        assignment = agglomerative_cluster(emb, 2)
        assert assignment.labels.tolist() == [0, 0, 1, 1]

    def test_k_equals_m_singletons(self):
        emb = _random_embeddings(np.random.default_rng(0), 5)
        assignment = agglomerative_cluster(emb, 5)
        assert assignment.labels.tolist() == [0, 1, 2, 3, 4]

    def test_k_one_single_cluster(self):
        emb = _random_embeddings(np.random.default_rng(1), 4)
        assignment = agglomerative_cluster(emb, 1)
        assert assignment.labels.tolist() == [0, 0, 0, 0]
        assert assignment.major_ratio == 1.0

    def test_merge_sequence_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            m = int(rng.integers(2, 9))
            emb = _random_embeddings(rng, m)
            dist = pairwise_cosine_distance(emb)
            produced = [(mg.label_a, mg.label_b) for mg in average_linkage_merges(dist)]
            assert produced == oracle_merges(dist), f"trial {trial}"

    def test_labels_match_oracle_at_every_k(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            m = int(rng.integers(2, 9))
            emb = _random_embeddings(rng, m)
            dist = pairwise_cosine_distance(emb)
            merges = average_linkage_merges(dist)
            for k in range(1, m + 1):
                assert labels_for_k(merges, m, k).tolist() == oracle_labels(dist, k)

    def test_duplicate_points_deterministic(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        dist = pairwise_cosine_distance(emb)
        produced = [(mg.label_a, mg.label_b) for mg in average_linkage_merges(dist)]
        assert produced == oracle_merges(dist)
        # ties resolve toward the smallest index pair first
        assert produced[0] == (0, 1)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        emb = _random_embeddings(rng, 6)
        a = agglomerative_cluster(emb, 3).labels.tolist()
        b = agglomerative_cluster(emb * 37.5, 3).labels.tolist()
        assert a == b

    def test_cluster_sizes_sum_to_m(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            m = int(rng.integers(2, 9))
            emb = _random_embeddings(rng, m)
            k = int(rng.integers(1, m + 1))
            assignment = agglomerative_cluster(emb, k)
            assert assignment.cluster_sizes.sum() == m
            assert assignment.num_clusters == k


class TestSilhouetteSelection:
    def test_near_identical_pair_gives_k1(self):
        emb = np.array([[1.0, 0.001], [1.0, -0.001]])
        assert select_k_silhouette(emb) == 1

    def test_two_tight_pairs_gives_k2(self):
        emb = np.array([[1.0, 0.02], [1.0, -0.02], [0.02, 1.0], [-0.02, 1.0]])
        assert select_k_silhouette(emb) == 2
        assert oracle_select_k(emb) == 2

    def test_m3_all_dissimilar_gives_k2(self):
        # With M=3 the only candidate is K=2, whatever the silhouettes say.
        emb = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        assert select_k_silhouette(emb) == 2

    def test_matches_exhaustive_oracle_on_random_instances(self):
        rng = np.random.default_rng(123)
        for trial in range(100):
            m = int(rng.integers(2, 9))
            emb = _random_embeddings(rng, m)
            assert select_k_silhouette(emb) == oracle_select_k(emb), f"trial {trial}"

    def test_silhouette_values_match_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = int(rng.integers(3, 9))
            emb = _random_embeddings(rng, m)
            dist = pairwise_cosine_distance(emb)
            merges = average_linkage_merges(dist)
            for k in range(2, m):
                labels = labels_for_k(merges, m, k)
                assert mean_silhouette(dist, labels) == pytest.approx(
                    oracle_silhouette(dist, labels.tolist()), abs=1e-12
                )


class TestClusterAssignmentProperties:
    def test_major_flag_marks_largest_cluster_only(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]])
        assignment = agglomerative_cluster(emb, 2)
        assert assignment.labels.tolist() == [0, 0, 1]
        assert assignment.major_flags.tolist() == [1.0, 1.0, 0.0]
        assert assignment.major_ratio == pytest.approx(2 / 3)

    def test_major_tie_breaks_to_lowest_label(self):
        emb = np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [0.01, 1.0]])
        assignment = agglomerative_cluster(emb, 2)
        assert assignment.major_label == 0

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError, match="zero-norm"):
            pairwise_cosine_distance(np.array([[0.0, 0.0], [1.0, 0.0]]))
