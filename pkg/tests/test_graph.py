from __future__ import annotations

import numpy as np
import pytest

from mcre.graph import AnswerGraph, build_knn_graph, build_threshold_graph, normalized_adjacency


def _sim(s01: float, s02: float, s12: float) -> np.ndarray:
    return np.array([[1.0, s01, s02], [s01, 1.0, s12], [s02, s12, 1.0]])


class TestThresholdGraph:
    def test_threshold_rule(self):
        graph = build_threshold_graph(_sim(0.9, 0.8, 0.5), tau=0.7)
        assert graph.edges == ((0, 1, 0.9), (0, 2, 0.8))

    def test_tau_above_one_empty(self):
        graph = build_threshold_graph(_sim(0.9, 0.8, 0.5), tau=1.01)
        assert graph.edges == ()

    def test_tau_minus_one_complete(self):
        graph = build_threshold_graph(_sim(0.9, 0.8, 0.5), tau=-1.0)
        assert len(graph.edges) == 3

    def test_weights_carry_similarity(self):
        graph = build_threshold_graph(_sim(0.75, 0.2, 0.9), tau=0.7)
        weights = {(m, n): w for m, n, w in graph.edges}
        assert weights == {(0, 1): 0.75, (1, 2): 0.9}


class TestKnnGraph:
    def test_hand_enumerated_neighbors(self):
        # s01=0.9, s02=0.8, s12=0.5: node0 -> 1, node1 -> 0, node2 -> 0;
        # union gives edges {(0,1), (0,2)}.
        graph = build_knn_graph(_sim(0.9, 0.8, 0.5), k=1)
        assert [(m, n) for m, n, _ in graph.edges] == [(0, 1), (0, 2)]

    def test_k_equals_m_minus_one_complete(self):
        graph = build_knn_graph(_sim(0.1, 0.2, 0.3), k=2)
        assert len(graph.edges) == 3

    def test_two_nodes_single_edge(self):
        sim = np.array([[1.0, 0.4], [0.4, 1.0]])
        graph = build_knn_graph(sim, k=1)
        assert graph.edges == ((0, 1, 0.4),)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError, match="k must be in"):
            build_knn_graph(_sim(0.1, 0.2, 0.3), k=3)
        with pytest.raises(ValueError, match="k must be in"):
            build_knn_graph(_sim(0.1, 0.2, 0.3), k=0)

    def test_neighbor_tie_breaks_to_lower_index(self):
        sim = np.array(
            [
                [1.0, 0.5, 0.5, 0.1],
                [0.5, 1.0, 0.2, 0.1],
                [0.5, 0.2, 1.0, 0.1],
                [0.1, 0.1, 0.1, 1.0],
            ]
        )
        graph = build_knn_graph(sim, k=1)
        # node0 ties between 1 and 2 -> picks 1; node3 ties across all -> picks 0
        assert (0, 1) in [(m, n) for m, n, _ in graph.edges]
        assert (0, 3) in [(m, n) for m, n, _ in graph.edges]

    def test_threshold_minus_one_equals_full_knn(self):
        rng = np.random.default_rng(0)
        emb = rng.standard_normal((5, 4))
        from mcre.features import build_similarity_matrix

        sim = build_similarity_matrix(emb)
        complete = build_threshold_graph(sim, tau=-1.0)
        knn = build_knn_graph(sim, k=4)
        assert [(m, n) for m, n, _ in complete.edges] == [(m, n) for m, n, _ in knn.edges]


class TestNormalizedAdjacency:
    def test_isolated_node_self_loop(self):
        graph = AnswerGraph(num_nodes=1, edges=(), construction="threshold(0.7)")
        assert normalized_adjacency(graph).tolist() == [[1.0]]

    def test_two_nodes_hand_computed(self):
        # A+I = [[1,1],[1,1]]; degrees (2,2); D^{-1/2}(A+I)D^{-1/2} = 0.5 ones
        graph = AnswerGraph(num_nodes=2, edges=((0, 1, 1.0),), construction="threshold(0)")
        expected = np.full((2, 2), 0.5)
        assert np.allclose(normalized_adjacency(graph), expected, atol=1e-12)

    def test_symmetry_and_spectral_radius(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            m = int(rng.integers(2, 7))
            edges = []
            for a in range(m):
                for b in range(a + 1, m):
                    if rng.random() < 0.5:
                        edges.append((a, b, float(rng.uniform(0.1, 1.0))))
            graph = AnswerGraph(m, tuple(edges), "threshold(x)")
            norm = normalized_adjacency(graph)
            assert np.allclose(norm, norm.T, atol=1e-15)
            eigenvalues = np.linalg.eigvalsh(norm)
            assert np.max(np.abs(eigenvalues)) <= 1 + 1e-9

    def test_isolated_node_within_graph(self):
        graph = AnswerGraph(3, ((0, 1, 0.9),), "threshold(0.7)")
        norm = normalized_adjacency(graph)
        assert norm[2, 2] == pytest.approx(1.0)
        assert norm[2, 0] == 0.0


class TestPermutationInvariance:
    def test_graph_construction_permutes_with_labels(self):
        rng = np.random.default_rng(2)
        from mcre.features import build_similarity_matrix

        emb = rng.standard_normal((5, 4))
        sim = build_similarity_matrix(emb)
        perm = np.array([3, 0, 4, 1, 2])
        sim_permuted = sim[np.ix_(perm, perm)]
        base = {(m, n) for m, n, _ in build_threshold_graph(sim, 0.2).edges}
        permuted = {(m, n) for m, n, _ in build_threshold_graph(sim_permuted, 0.2).edges}
        # edge (i, j) of the permuted graph is edge (perm[i], perm[j]) originally
        remapped = {tuple(sorted((perm[m], perm[n]))) for m, n in permuted}
        assert base == remapped
