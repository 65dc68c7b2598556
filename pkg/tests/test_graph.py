import numpy as np
import pytest

from diffnet import graph
from diffnet.errors import ValidationError


def path3():
    return graph.topology_from_dict({"n": 3, "edges": [[1, 2], [2, 3]]})


def test_build_topology_path():
    t = path3()
    assert list(t.degrees) == [2, 3, 2]
    assert t.neighborhoods[1] == (0, 1, 2)
    assert t.neighborhoods[0] == (0, 1)


def test_build_topology_single_node():
    t = graph.build_topology(np.zeros((1, 1), dtype=bool))
    assert list(t.degrees) == [1]
    assert t.neighborhoods[0] == (0,)


def test_build_topology_six_node_eight_edge():
    edges = [[1, 2], [1, 3], [2, 3], [2, 4], [3, 5], [4, 5], [4, 6], [5, 6]]
    t = graph.topology_from_dict({"n": 6, "edges": edges})
    assert t.n == 6
    assert len(t.edges()) == 8
    inc = graph.incidence(t)
    assert inc.shape == (6, 8)
    assert np.array_equal(inc @ inc.T, graph.laplacian(t))


def test_asymmetric_adjacency_names_pair():
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 1] = True  # missing the (1, 0) mirror
    with pytest.raises(ValidationError, match=r"\(0, 1\)|\(1, 0\)"):
        graph.build_topology(adj)


def test_self_loop_rejected():
    adj = np.eye(2, dtype=bool)
    with pytest.raises(ValidationError, match="self-loop"):
        graph.build_topology(adj)


def test_laplacian_path():
    expected = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    assert np.array_equal(graph.laplacian(path3()), expected)


def test_laplacian_isolated_nodes():
    t = graph.build_topology(np.zeros((2, 2), dtype=bool))
    assert np.array_equal(graph.laplacian(t), np.zeros((2, 2)))


def test_laplacian_rows_sum_zero():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = graph.random_connected_topology(rng.integers(2, 10), rng)
        assert np.array_equal(graph.laplacian(t) @ np.ones(t.n), np.zeros(t.n))


def test_incidence_two_nodes():
    t = graph.topology_from_dict({"n": 2, "edges": [[1, 2]]})
    assert np.array_equal(graph.incidence(t), np.array([[1.0], [-1.0]]))


def test_incidence_path_product():
    t = path3()
    inc = graph.incidence(t)
    assert inc.shape == (3, 2)
    assert np.array_equal(inc @ inc.T, graph.laplacian(t))


def test_incidence_empty_edges():
    t = graph.build_topology(np.zeros((4, 4), dtype=bool))
    inc = graph.incidence(t)
    assert inc.shape == (4, 0)
    assert np.array_equal(inc @ inc.T, np.zeros((4, 4)))


def test_connectivity_path():
    # spectrum of the 3-path Laplacian [[1,-1,0],[-1,2,-1],[0,-1,1]] is {3, 1, 0}
    rep = graph.connectivity_report(path3())
    np.testing.assert_allclose(rep.laplacian_eigenvalues, [3.0, 1.0, 0.0], atol=1e-12)
    assert rep.connected
    assert rep.zero_multiplicity == 1
    np.testing.assert_allclose(rep.algebraic_connectivity, 1.0, atol=1e-12)


def test_connectivity_disjoint_edges():
    t = graph.topology_from_dict({"n": 4, "edges": [[1, 2], [3, 4]]})
    rep = graph.connectivity_report(t)
    assert rep.zero_multiplicity == 2
    assert not rep.connected


def test_connectivity_complete_graph():
    # complete graph on 3 nodes: Laplacian 2I - (J - I), spectrum {3, 3, 0}
    t = graph.topology_from_dict({"n": 3, "edges": [[1, 2], [1, 3], [2, 3]]})
    rep = graph.connectivity_report(t)
    np.testing.assert_allclose(rep.laplacian_eigenvalues, [3.0, 3.0, 0.0], atol=1e-12)


def test_connectivity_single_node():
    rep = graph.connectivity_report(graph.build_topology(np.zeros((1, 1), dtype=bool)))
    assert rep.connected
    assert rep.zero_multiplicity == 1


def test_spectral_vs_traversal_on_random_graphs():
    # connectivity_report raises internally if the spectral and BFS verdicts
    # ever disagree, so it is enough to call it on many random graphs
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        n = int(rng.integers(1, 13))
        dense = rng.random((n, n)) < rng.uniform(0.05, 0.6)
        adj = np.triu(dense, k=1)
        t = graph.build_topology(adj | adj.T)
        rep = graph.connectivity_report(t)
        assert rep.laplacian_eigenvalues.min() >= -1e-9
        assert np.array_equal(
            graph.incidence(t) @ graph.incidence(t).T, graph.laplacian(t)
        )


def test_topology_dict_round_trip():
    t = graph.random_connected_topology(7, np.random.default_rng(5), 0.4)
    t2 = graph.topology_from_dict(graph.topology_to_dict(t))
    assert np.array_equal(t.adjacency, t2.adjacency)


def test_topology_from_dict_validates():
    with pytest.raises(ValidationError):
        graph.topology_from_dict({"n": 3, "edges": [[1, 4]]})
    with pytest.raises(ValidationError):
        graph.topology_from_dict({"n": 3, "edges": [[2, 2]]})
