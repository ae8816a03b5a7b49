import numpy as np
import pytest

from hkge import data
from hkge.hierarchy import (
    HIERARCHY_HEADER,
    RelationGraph,
    analyze_relation,
    bfs_distances,
    build_graph,
    khs,
    relation_subgraph,
    write_hierarchy_csv,
    xi_estimate,
    xi_triangle,
)


def floyd_warshall(n, undirected_edges):
    """All-pairs shortest paths the slow, obvious way."""
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0.0)
    for i, j in undirected_edges:
        D[i, j] = D[j, i] = 1.0
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if D[i, k] + D[k, j] < D[i, j]:
                    D[i, j] = D[i, k] + D[k, j]
    return D


def tree_xi(D, a, b, c):
    """xi on a tree from its distance matrix; the midpoint is unique."""
    d_bc = D[b, c]
    if not np.isfinite(d_bc) or int(d_bc) % 2 == 1:
        return None
    half = d_bc / 2.0
    (m,) = [m for m in range(len(D))
            if D[b, m] == half and D[c, m] == half and D[b, m] + D[m, c] == d_bc]
    if m == a:
        return None
    d_am = D[a, m]
    return float((d_am ** 2 + d_bc ** 2 / 4.0
                  - (D[a, b] ** 2 + D[a, c] ** 2) / 2.0) / (2.0 * d_am))


def random_tree_edges(n, seed):
    rng = np.random.default_rng(seed)
    return [(int(rng.integers(0, i)), i) for i in range(1, n)]


def star_graph(k):
    return build_graph("star", [(0, leaf) for leaf in range(1, k + 1)])


class TestBuildGraph:
    def test_compacts_and_dedupes(self):
        g = build_graph("r", [(10, 20), (20, 30), (10, 20)])
        assert g.n_nodes == 3
        assert g.n_edges == 2
        np.testing.assert_array_equal(g.node_ids, [10, 20, 30])
        assert g.directed_edges == {(0, 1), (1, 2)}

    def test_adjacency_is_undirected_and_sorted(self):
        g = build_graph("r", [(0, 2), (3, 0), (0, 1)])
        np.testing.assert_array_equal(g.adjacency[0], [1, 2, 3])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no edges"):
            build_graph("r", [])


class TestKhs:
    def test_pure_hierarchy(self):
        g = build_graph("r", random_tree_edges(40, seed=0))
        assert khs(g) == 1.0

    def test_fully_symmetric(self):
        g = build_graph("r", [(0, 1), (1, 0), (1, 2), (2, 1)])
        assert khs(g) == 0.0

    def test_mixed(self):
        # one of three directed edges has a reciprocal partner... the
        # two paired edges both count as reciprocated
        g = build_graph("r", [(0, 1), (1, 0), (0, 2)])
        assert khs(g) == pytest.approx(1.0 / 3.0)

    def test_relabel_invariant(self):
        edges = [(0, 1), (1, 2), (2, 3), (3, 1)]
        relabeled = [(e[0] * 7 + 3, e[1] * 7 + 3) for e in edges]
        assert khs(build_graph("r", edges)) == khs(build_graph("r", relabeled))


class TestBfs:
    def test_matches_floyd_warshall(self):
        rng = np.random.default_rng(1)
        for trial in range(5):
            n = int(rng.integers(5, 60))
            m = int(rng.integers(n - 1, 2 * n))
            edges = {tuple(sorted(map(int, rng.integers(0, n, 2)))) for _ in range(m)}
            edges = [e for e in edges if e[0] != e[1]]
            if not edges:
                continue
            g = build_graph("r", edges)
            D = floyd_warshall(g.n_nodes, g.directed_edges)
            cs = g.csgraph()
            for src in range(g.n_nodes):
                np.testing.assert_array_equal(bfs_distances(cs, src), D[src])

    def test_disconnected_is_inf(self):
        g = build_graph("r", [(0, 1), (2, 3)])
        d = bfs_distances(g.csgraph(), 0)
        assert d[1] == 1.0 and np.isinf(d[2]) and np.isinf(d[3])


class TestXiTriangle:
    def test_star_is_minus_one(self):
        # leaves meet at the hub: d_am=1, d_bc=2, d_ab=d_ac=2 for any
        # three distinct leaves
        g = star_graph(6)
        for a, b, c in ((1, 2, 3), (4, 5, 6), (2, 6, 1)):
            assert xi_triangle(g, a, b, c) == -1.0

    def test_path_is_flat(self):
        g = build_graph("r", [(i, i + 1) for i in range(5)])
        assert xi_triangle(g, 1, 0, 4) == 0.0
        assert xi_triangle(g, 0, 1, 3) == 0.0

    def test_cycle_is_positive(self):
        # a 4-cycle bulges: m(0, 2) = 1 and node 3 sits at distance 2
        g = build_graph("r", [(0, 1), (1, 2), (2, 3), (3, 0)])
        assert xi_triangle(g, 3, 0, 2) == 1.0

    def test_odd_distance_rejected(self):
        g = build_graph("r", [(i, i + 1) for i in range(4)])
        assert xi_triangle(g, 3, 0, 1) is None

    def test_midpoint_equal_to_a_rejected(self):
        g = build_graph("r", [(0, 1), (1, 2)])
        assert xi_triangle(g, 1, 0, 2) is None

    def test_disconnected_pair_rejected(self):
        g = build_graph("r", [(0, 1), (1, 2), (3, 4), (4, 5)])
        assert xi_triangle(g, 0, 1, 4) is None
        # b, c connected but a in the other component
        g2 = build_graph("r", [(0, 1), (1, 2), (3, 4)])
        assert xi_triangle(g2, 3, 0, 2) is None

    def test_matches_tree_oracle(self):
        for seed in range(4):
            edges = random_tree_edges(25, seed=seed)
            g = build_graph("r", edges)
            D = floyd_warshall(25, edges)
            rng = np.random.default_rng(seed + 100)
            checked = 0
            while checked < 40:
                a, b, c = (int(x) for x in rng.choice(25, size=3, replace=False))
                expected = tree_xi(D, a, b, c)
                got = xi_triangle(g, a, b, c)
                assert got == expected
                if expected is not None:
                    assert expected <= 0.0  # trees are never positively curved
                    checked += 1


class TestXiEstimate:
    def test_star_statistics(self):
        result = xi_estimate(star_graph(8), n_samples=200, seed=0)
        assert result.mean == -1.0
        assert result.stderr == 0.0
        assert result.accepted == 200

    def test_deterministic(self):
        g = build_graph("r", random_tree_edges(30, seed=2))
        a = xi_estimate(g, n_samples=100, seed=5)
        b = xi_estimate(g, n_samples=100, seed=5)
        assert a == b

    def test_too_small_graph(self):
        with pytest.raises(ValueError, match="3 nodes"):
            xi_estimate(build_graph("r", [(0, 1)]))

    def test_all_samples_rejected(self):
        # a 3-node path has no valid triangle at all
        g = build_graph("r", [(0, 1), (1, 2)])
        with pytest.raises(ValueError, match="no valid xi sample"):
            xi_estimate(g, n_samples=5)

    def test_rejections_are_counted(self):
        g = build_graph("r", random_tree_edges(30, seed=3))
        result = xi_estimate(g, n_samples=50, seed=1)
        assert result.accepted == 50
        assert result.rejected >= 0


class TestRelationSubgraph:
    def store(self):
        splits = {"train": [("a", "up", "b"), ("b", "up", "c"), ("a", "down", "c"),
                            ("c", "only_valid", "a")][:3],
                  "valid": [("c", "only_valid", "a")],
                  "test": []}
        return data.build_vocab(splits)

    def test_extracts_single_relation(self):
        g = relation_subgraph(self.store(), "up")
        assert g.n_edges == 2
        assert g.n_nodes == 3

    def test_unknown_relation(self):
        with pytest.raises(KeyError, match="unknown relation"):
            relation_subgraph(self.store(), "sideways")

    def test_reciprocal_names_rejected(self):
        store = data.augment_reciprocal(self.store())
        with pytest.raises(KeyError, match="reciprocal"):
            relation_subgraph(store, "up^-1")

    def test_relation_without_train_edges(self):
        with pytest.raises(ValueError, match="no edges"):
            relation_subgraph(self.store(), "only_valid")


class TestAnalyzeRelation:
    def test_tree_relation_row(self, tmp_path):
        data.make_tree_dataset(tmp_path / "tree")
        store = data.load_dataset(tmp_path / "tree")
        row = analyze_relation(store, "parent_of", n_samples=300, seed=0)
        assert row["relation"] == "parent_of"
        assert row["khs"] == 1.0
        assert row["xi_mean"] < 0.0
        # the train-split subgraph is a forest: most triangles are
        # rejected, but plenty still land within the attempt budget
        assert 0 < row["samples_accepted"] <= 300
        assert row["samples_rejected"] > 0

    def test_csv_layout(self, tmp_path):
        rows = [
            {"relation": "r", "nodes": 5, "edges": 4, "khs": 1.0,
             "xi_mean": -0.5, "xi_stderr": 0.01,
             "samples_accepted": 10, "samples_rejected": 3},
            {"relation": "broken", "error": "unknown-relation"},
        ]
        path = tmp_path / "hierarchy.csv"
        write_hierarchy_csv(path, rows)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == HIERARCHY_HEADER
        assert lines[1] == "r,5,4,1.000000,-0.500000,0.010000,10,3"
        assert lines[2] == "broken,,,error:unknown-relation,,,,"
