import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from minimaxflow.distributed import consensus_commodity
from minimaxflow.downstream import (
    analyze,
    consumer_clusters,
    controllable_edges,
    downstream,
    half_cluster,
    max_downstream_flows,
    phi_recursive,
    supplier_indicator,
    supplier_indicators,
)
from minimaxflow.errors import NotAnEdge
from minimaxflow.lp import solve_minimax
from minimaxflow.network import FlowNetwork, solve_flows

from conftest import perturb_suppliers, random_network

seeds = st.integers(0, 2**32 - 1)


def path(m, cap=(1.0, 1.0, 1.0), suppliers=(1, 4)):
    return FlowNetwork([1, 2, 3, 4], [(1, 2), (2, 3), (3, 4)], suppliers, cap, m)


def graph(net):
    g = nx.Graph()
    g.add_nodes_from(net.nodes)
    g.add_edges_from(net.edges)
    return g


def oracle_beta(net, i, j):
    g = graph(net)
    g.remove_node(i)
    return int(any(net.is_supplier[net.index[v]] for v in nx.node_connected_component(g, j)))


def oracle_phi(net, flows):
    """Maximum ratio over every directed path of controllable, positively oriented edges."""
    cf = {e for e in net.edges if oracle_beta(net, *e) and oracle_beta(net, e[1], e[0])}
    dg = nx.DiGraph()
    dg.add_nodes_from(net.nodes)
    for a, b in cf:
        f = flows[(a, b)]
        if abs(f) > 1e-9 * max(1.0, net.capacity[net.edge_index[(a, b)]]):
            dg.add_edge(a, b) if f > 0 else dg.add_edge(b, a)
    phi = {}
    for v in net.nodes:
        reach = nx.descendants(dg, v) | {v}
        edges = [(a, b) for a, b in dg.edges if a in reach]
        phi[v] = max((abs(flows[e]) / net.capacity[net.edge_index[tuple(sorted(e))]] for e in edges), default=0.0)
    return phi


class TestHalfCluster:
    def test_path_forward(self, path4):
        assert half_cluster(path4, 1, 2) == {2, 3, 4}

    def test_path_backward(self, path4):
        assert half_cluster(path4, 2, 1) == {1}

    def test_star(self, star):
        assert half_cluster(star, 1, 0) == {0, 2, 3}

    def test_not_an_edge(self, path4):
        with pytest.raises(NotAnEdge):
            half_cluster(path4, 1, 3)
        with pytest.raises(NotAnEdge):
            supplier_indicator(path4, 1, 4)


class TestSupplierIndicator:
    def test_path_examples(self, path4):
        assert supplier_indicator(path4, 1, 2) == 1
        assert supplier_indicator(path4, 2, 1) == 1

    def test_single_supplier_path(self):
        net = FlowNetwork([1, 2, 3], [(1, 2), (2, 3)], [1], [1, 1], [1, -0.5, -0.5])
        assert supplier_indicator(net, 1, 2) == 0

    @given(seed=seeds, n=st.integers(3, 25))
    def test_matches_half_cluster_enumeration(self, seed, n):
        net = random_network(np.random.default_rng(seed), n)
        beta = supplier_indicators(net)
        for a, b in net.edges:
            assert beta[(a, b)] == oracle_beta(net, a, b)
            assert beta[(b, a)] == oracle_beta(net, b, a)


class TestControllableEdges:
    def test_path_all_controllable(self, path4):
        view = controllable_edges(path4, solve_flows(path4))
        assert view.controllable_edges == set(path4.edges)

    def test_consumer_between_suppliers(self):
        net = FlowNetwork([1, 2, 3], [(1, 2), (2, 3)], [1, 3], [1, 1], [1, -2, 1])
        assert controllable_edges(net, solve_flows(net)).controllable_edges == {(1, 2), (2, 3)}

    def test_consumer_branch_excluded(self):
        """A consumer-only branch hanging off node 2 carries a flow no supplier choice can change."""
        net = FlowNetwork(
            [1, 2, 3, 5, 6], [(1, 2), (2, 3), (2, 5), (5, 6)], [1, 3], [1, 1, 1, 1], [1.5, -0.5, 1.0, -1.0, -1.0]
        )
        view = controllable_edges(net, solve_flows(net))
        assert view.controllable_edges == {(1, 2), (2, 3)}

    def test_zero_flow_edge_has_no_orientation(self):
        net = path([1, -1, -1, 1])
        view = controllable_edges(net, solve_flows(net))
        assert (2, 3) not in view.directed_edges and (3, 2) not in view.directed_edges
        assert view.extended_edges == {(a, b) for e in net.edges for a, b in (e, e[::-1])}

    @given(seed=seeds, n=st.integers(3, 25))
    def test_view_invariants(self, seed, n):
        net = random_network(np.random.default_rng(seed), n)
        flows = solve_flows(net)
        view = controllable_edges(net, flows)
        assert view.directed_controllable <= view.directed_edges
        for a, b in net.edges:
            assert ((a, b) in view.controllable_edges) == bool(view.beta[(a, b)] and view.beta[(b, a)])
            if flows[(a, b)] > 1e-9 * max(1.0, net.capacity[net.edge_index[(a, b)]]):
                assert (a, b) in view.directed_edges


class TestDownstream:
    def test_zero_flow_breaks_path(self):
        net = path([1, -1, -1, 1])
        view = controllable_edges(net, solve_flows(net))
        assert downstream(net, view, 1) == {(1, 2)}
        assert downstream(net, view, 4) == {(4, 3)}

    def test_sink_has_empty_downstream(self):
        net = path([1, -1, -1, 1])
        view = controllable_edges(net, solve_flows(net))
        assert downstream(net, view, 2) == frozenset()


class TestMaxDownstreamFlows:
    def test_path_example(self, path4):
        view, report = analyze(path4)
        assert [report.phi[v] for v in (1, 2, 3, 4)] == pytest.approx([2 / 3, 0, 1 / 6, 2 / 3], abs=1e-12)
        assert report.safety_margin == pytest.approx(2 / 3, abs=1e-12)
        assert report.phi == pytest.approx(oracle_phi(path4, solve_flows(path4)), abs=1e-12)

    def test_empty_downstream_gives_zero(self, path4):
        assert analyze(path4)[1].phi[2] == 0.0
        assert analyze(path4)[1].mde[2] is None

    def test_mde_is_downstream_bottleneck(self):
        net = path([2.0, -0.5, -2.0, 0.5], cap=(4.0, 2.0, 2.0))
        _, report = analyze(net)
        assert report.mde[1] == (2, 3)
        assert report.phi[1] == pytest.approx(0.75)

    def test_mde_tie_takes_first_edge(self):
        net = path([2.0, -1.0, -2.0, 1.0], cap=(2.0, 1.0, 1.0))
        _, report = analyze(net)
        assert report.mde[1] == (1, 2)

    def test_margin_is_largest_supplier_phi(self, rng):
        for _ in range(20):
            net = random_network(rng, 15)
            _, report = analyze(net)
            assert report.safety_margin == pytest.approx(max(report.supplier_phi(net)), abs=1e-12)

    @given(seed=seeds, n=st.integers(3, 25))
    def test_phi_matches_path_enumeration(self, seed, n):
        net = random_network(np.random.default_rng(seed), n)
        flows = solve_flows(net)
        report = max_downstream_flows(net, controllable_edges(net, flows), flows)
        assert report.phi == pytest.approx(oracle_phi(net, flows), abs=1e-12)

    @given(seed=seeds, n=st.integers(3, 30))
    def test_recursion_equals_definition(self, seed, n):
        net = random_network(np.random.default_rng(seed), n)
        flows = solve_flows(net)
        view = controllable_edges(net, flows)
        assert phi_recursive(net, view, flows) == max_downstream_flows(net, view, flows).phi

    def test_to_dict_lists_every_node(self, path4):
        d = analyze(path4)[1].to_dict(path4)
        assert [row["id"] for row in d["nodes"]] == list(path4.nodes)
        assert d["critical_clusters"] == [[2, 3]]


class TestClusters:
    def test_critical_cluster_at_minimax_point(self):
        net = path([1, -1, -1, 1])
        view, report = analyze(net)
        assert report.mdes_set == {(1, 2), (4, 3)}
        assert report.consumer_clusters == [{2, 3}]
        assert report.critical_clusters == [{2, 3}]

    def test_zero_phi_may_have_no_critical_cluster(self):
        net = FlowNetwork([1, 2, 3], [(1, 2), (2, 3)], [1, 2], [1, 1], [1.0, 0.5, -1.5])
        _, report = analyze(net)
        assert report.phi[1] == 0.0 or report.phi[2] == 0.0
        assert isinstance(report.critical_clusters, list)

    def test_clusters_disjoint(self, rng):
        for _ in range(50):
            _, report = analyze(random_network(rng, 20))
            seen = set()
            for c in report.consumer_clusters:
                assert not (seen & c)
                seen |= c

    def test_clusters_contain_only_consumers(self, rng):
        for _ in range(50):
            net = random_network(rng, 20)
            _, report = analyze(net)
            for c in report.consumer_clusters:
                assert all(not net.is_supplier[net.index[v]] for v in c)

    def test_critical_cluster_exists_when_all_phi_positive(self, rng):
        checked = 0
        while checked < 100:
            net = random_network(rng, int(rng.integers(4, 30)))
            _, report = analyze(net)
            if np.all(report.supplier_phi(net) > 0):
                assert len(report.critical_clusters) >= 1
                checked += 1

    def test_returns_triple(self, path4):
        view, report = analyze(path4)
        clusters, critical, diag = consumer_clusters(path4, view, report)
        assert clusters == report.consumer_clusters and critical == report.critical_clusters
        assert isinstance(diag, list)


class TestStructuralProperties:
    @given(seed=seeds, n=st.integers(3, 30))
    def test_union_of_supplier_downstreams_is_oriented_controllable_set(self, seed, n):
        net = random_network(np.random.default_rng(seed), n)
        view, report = analyze(net)
        union = set().union(*(report.downstream[s] for s in net.suppliers))
        assert union == view.directed_controllable

    @given(seed=seeds, n=st.integers(3, 30))
    def test_uncontrollable_flows_ignore_supplier_choice(self, seed, n):
        rng = np.random.default_rng(seed)
        net = random_network(rng, n)
        view = controllable_edges(net, solve_flows(net))
        fixed = np.array([e not in view.controllable_edges for e in net.edges])
        base = solve_flows(net).values[fixed]
        for _ in range(10):
            moved = solve_flows(net, perturb_suppliers(rng, net)).values[fixed]
            np.testing.assert_allclose(moved, base, rtol=0, atol=1e-10)

    @given(seed=seeds, n=st.integers(3, 30))
    def test_controllable_subgraph_connected_with_supplier_leaves(self, seed, n):
        net = random_network(np.random.default_rng(seed), n)
        view, _ = analyze(net)
        g = nx.Graph(list(view.controllable_edges))
        if g.number_of_nodes() == 0:
            return
        assert nx.is_connected(g)
        for v in g.nodes:
            if g.degree[v] == 1:
                assert net.is_supplier[net.index[v]]

    @given(seed=seeds, n=st.integers(3, 20))
    def test_deterministic(self, seed, n):
        a = analyze(random_network(np.random.default_rng(seed), n))[1]
        b = analyze(random_network(np.random.default_rng(seed), n))[1]
        assert a.phi == b.phi and a.mde == b.mde and a.consumer_clusters == b.consumer_clusters

    @given(seed=seeds, n=st.integers(4, 14))
    def test_equal_supplier_phi_is_optimal(self, seed, n):
        """Drive suppliers to agreement, then compare the margin with the minimax program."""
        net = random_network(np.random.default_rng(seed), n)
        cf_cap = net.capacity.min()
        m, spread = consensus_commodity(net, k=0.5 * cf_cap, dt=1.0, max_steps=5000, tol=1e-9)
        sup = net.is_supplier
        if spread > 1e-6 or np.any(m[sup] <= 0):
            return
        consensus = net.with_commodity(m)
        J = analyze(consensus)[1].safety_margin
        sol = solve_minimax(consensus)
        # capacity violations elsewhere change the status, not the optimum
        assert not np.isnan(sol.objective)
        assert J == pytest.approx(sol.objective, rel=1e-5, abs=1e-8)
