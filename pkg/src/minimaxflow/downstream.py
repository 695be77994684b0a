"""Flow-induced structure of a tree flow network.

Given flows, edges are oriented along the flow; the controllable edges are
those with a supplier on both sides. Each node's *downstream* is its out-tree
over oriented controllable edges, and its maximum downstream flow ``phi`` is
the largest flow/capacity ratio found there. Consumer clusters and critical
clusters are the consumer regions bounded by suppliers' maximum downstream
edges.
"""

from __future__ import annotations

import weakref
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from networkx.utils import UnionFind

from .errors import NotAnEdge
from .network import FlowAssignment, FlowNetwork, canonical_edge, solve_flows

ZERO_RTOL = 1e-9

Edge = tuple[int, int]

_beta_cache: "weakref.WeakKeyDictionary[FlowNetwork, dict[Edge, int]]" = weakref.WeakKeyDictionary()


def _require_edge(net: FlowNetwork, i: int, j: int) -> None:
    if not net.has_edge(i, j):
        raise NotAnEdge(f"({i}, {j}) is not an edge")


def half_cluster(net: FlowNetwork, i: int, j: int) -> frozenset[int]:
    """Vertices of the component of ``G - {i}`` that contains ``j``."""
    _require_edge(net, i, j)
    blocked = net.index[i]
    start = net.index[j]
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w, _ in net.neighbors[u]:
            if w != blocked and w not in seen:
                seen.add(w)
                queue.append(w)
    return frozenset(net.nodes[k] for k in seen)


def supplier_indicator(net: FlowNetwork, i: int, j: int) -> int:
    """1 iff the half-cluster of ``(i, j)`` contains a supplier."""
    members = half_cluster(net, i, j)
    return int(any(net.is_supplier[net.index[v]] for v in members))


def supplier_indicators(net: FlowNetwork) -> dict[Edge, int]:
    """Indicator for every directed edge, from subtree supplier counts.

    Depends on topology and roles only, so it is cached per network object.
    """
    cached = _beta_cache.get(net)
    if cached is not None:
        return cached
    order, parent, parent_edge = net.bfs(0)
    count = net.is_supplier.astype(int)
    for v in reversed(order[1:]):
        count[parent[v]] += count[v]
    total = int(net.is_supplier.sum())
    beta: dict[Edge, int] = {}
    for v in order[1:]:
        p = parent[v]
        pv, vv = net.nodes[p], net.nodes[v]
        beta[(pv, vv)] = int(count[v] > 0)
        beta[(vv, pv)] = int(total - count[v] > 0)
    _beta_cache[net] = beta
    return beta


@dataclass(frozen=True)
class OrientationView:
    directed_edges: frozenset[Edge]
    extended_edges: frozenset[Edge]
    beta: dict[Edge, int]
    controllable_edges: frozenset[Edge]
    directed_controllable: frozenset[Edge]

    @property
    def controllable_vertices(self) -> frozenset[int]:
        return frozenset(v for e in self.controllable_edges for v in e)


def _is_zero(flow: float, cap: float) -> bool:
    return abs(flow) <= ZERO_RTOL * max(1.0, cap)


def controllable_edges(net: FlowNetwork, flows: FlowAssignment) -> OrientationView:
    beta = supplier_indicators(net)
    directed = set()
    extended = set()
    cf = set()
    directed_cf = set()
    for (a, b), f, cap in zip(net.edges, flows.values, net.capacity):
        extended.add((a, b))
        extended.add((b, a))
        oriented = None
        if not _is_zero(f, cap):
            oriented = (a, b) if f > 0 else (b, a)
            directed.add(oriented)
        if beta[(a, b)] and beta[(b, a)]:
            cf.add((a, b))
            if oriented is not None:
                directed_cf.add(oriented)
    return OrientationView(
        frozenset(directed), frozenset(extended), beta, frozenset(cf), frozenset(directed_cf)
    )


def _out_adjacency(edges) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for i, j in edges:
        out.setdefault(i, []).append(j)
    return out


def downstream(net: FlowNetwork, view: OrientationView, i: int) -> frozenset[Edge]:
    """Out-tree of ``i`` over the oriented controllable edges."""
    out = _out_adjacency(view.directed_controllable)
    reached = set()
    queue = deque([i])
    while queue:
        u = queue.popleft()
        for w in out.get(u, ()):
            if (u, w) not in reached:
                reached.add((u, w))
                queue.append(w)
    return frozenset(reached)


@dataclass
class DownstreamReport:
    downstream: dict[int, frozenset[Edge]]
    phi: dict[int, float]
    mde: dict[int, Edge | None]
    mdes_set: frozenset[Edge]
    mdes_to_consumer: frozenset[Edge]
    safety_margin: float
    ratios: dict[Edge, float]
    consumer_clusters: list[frozenset[int]] = field(default_factory=list)
    critical_clusters: list[frozenset[int]] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def supplier_phi(self, net: FlowNetwork) -> np.ndarray:
        return np.array([self.phi[s] for s in net.suppliers])

    def to_dict(self, net: FlowNetwork) -> dict:
        def edge_str(e):
            return None if e is None else f"{e[0]}->{e[1]}"

        return {
            "safety_margin": float(self.safety_margin),
            "nodes": [
                {
                    "id": v,
                    "role": net.role(v),
                    "phi": float(self.phi[v]),
                    "mde": edge_str(self.mde[v]),
                    "downstream": sorted(edge_str(e) for e in self.downstream[v]),
                }
                for v in net.nodes
            ],
            "edges": [
                {"edge": edge_str(e), "ratio": float(r)}
                for e, r in sorted(self.ratios.items(), key=lambda kv: net.edge_index[canonical_edge(*kv[0])])
            ],
            "mdes": sorted(edge_str(e) for e in self.mdes_set),
            "mdes_to_consumer": sorted(edge_str(e) for e in self.mdes_to_consumer),
            "consumer_clusters": [sorted(c) for c in self.consumer_clusters],
            "critical_clusters": [sorted(c) for c in self.critical_clusters],
            "diagnostics": list(self.diagnostics),
        }


def _edge_ratios(net: FlowNetwork, view: OrientationView, flows: FlowAssignment) -> dict[Edge, float]:
    """Flow/capacity ratio of every oriented edge (positive by construction)."""
    ratios = {}
    for i, j in view.directed_edges:
        k = net.edge_index[canonical_edge(i, j)]
        ratios[(i, j)] = abs(float(flows.values[k])) / float(net.capacity[k])
    return ratios


def max_downstream_flows(net: FlowNetwork, view: OrientationView, flows: FlowAssignment) -> DownstreamReport:
    ratios = _edge_ratios(net, view, flows)

    def tie_key(e):
        return (-ratios[e], net.edge_index[canonical_edge(*e)])

    downstreams: dict[int, frozenset[Edge]] = {}
    phi: dict[int, float] = {}
    mde: dict[int, Edge | None] = {}
    for v in net.nodes:
        d = downstream(net, view, v)
        downstreams[v] = d
        if d:
            best = min(d, key=tie_key)
            mde[v] = best
            phi[v] = ratios[best]
        else:
            mde[v] = None
            phi[v] = 0.0
    mdes = frozenset(mde[s] for s in net.suppliers if mde[s] is not None)
    mdes_c = frozenset(e for e in mdes if not net.is_supplier[net.index[e[1]]])
    cf_ratios = [abs(float(flows[e])) / float(net.capacity[net.edge_index[e]]) for e in view.controllable_edges]
    J = max(cf_ratios, default=0.0)
    return DownstreamReport(downstreams, phi, mde, mdes, mdes_c, J, ratios)


def phi_recursive(net: FlowNetwork, view: OrientationView, flows: FlowAssignment) -> dict[int, float]:
    """Maximum downstream flows by dynamic programming over the flow DAG.

    ``phi_i = max over out-neighbours j of {beta_ij * f_ij / cap_ij, phi_j}``,
    evaluated leaves-first so each node reads only finished neighbours.
    """
    out = _out_adjacency(view.directed_edges)
    indeg = {v: 0 for v in net.nodes}
    for _, j in view.directed_edges:
        indeg[j] += 1
    # Kahn order, then evaluate in reverse
    order = []
    queue = deque(v for v in net.nodes if indeg[v] == 0)
    while queue:
        u = queue.popleft()
        order.append(u)
        for w in out.get(u, ()):
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    phi = {}
    for u in reversed(order):
        best = 0.0
        for w in out.get(u, ()):
            k = net.edge_index[canonical_edge(u, w)]
            r = view.beta[(u, w)] * abs(float(flows.values[k])) / float(net.capacity[k])
            best = max(best, r, phi[w])
        phi[u] = best
    return phi


def dag_depth(view: OrientationView, nodes) -> int:
    """Number of vertex layers in the flow DAG (longest directed path + 1)."""
    out = _out_adjacency(view.directed_edges)
    memo: dict[int, int] = {}

    def height(u):
        if u not in memo:
            memo[u] = 1 + max((height(w) for w in out.get(u, ())), default=0)
        return memo[u]

    return max(height(v) for v in nodes)


def consumer_clusters(net: FlowNetwork, view: OrientationView, report: DownstreamReport):
    """Consumer clusters and the critical subset.

    Consumers of the controllable subgraph are merged across controllable
    edges that carry no supplier's maximum downstream edge; a merged group
    is a cluster when some supplier's maximum downstream edge ends in it.

    Returns ``(clusters, critical, diagnostics)``.
    """
    mdes = report.mdes_set
    v_cf = view.controllable_vertices
    consumers_cf = sorted(v for v in v_cf if not net.is_supplier[net.index[v]])
    uf = UnionFind(consumers_cf)
    for a, b in sorted(view.controllable_edges):
        if a in uf.parents and b in uf.parents and (a, b) not in mdes and (b, a) not in mdes:
            if not net.is_supplier[net.index[a]] and not net.is_supplier[net.index[b]]:
                uf.union(a, b)
    groups = [frozenset(g) for g in uf.to_sets()]
    targets = {j for _, j in report.mdes_to_consumer}
    clusters = sorted((g for g in groups if g & targets), key=min)

    critical = []
    diagnostics = []
    for c in clusters:
        boundary = [(i, j) for i, j in view.directed_controllable if (i in c) != (j in c)]
        if boundary and all(e in report.mdes_to_consumer and e[1] in c for e in boundary):
            critical.append(c)
        for v in sorted(c):
            for w_idx, _ in net.neighbors[net.index[v]]:
                w = net.nodes[w_idx]
                if w in c or net.is_supplier[w_idx]:
                    continue
                if canonical_edge(v, w) not in view.controllable_edges:
                    diagnostics.append(
                        f"cluster {sorted(c)}: edge {{{v},{w}}} leads to a consumer-only branch "
                        "and is not a maximum downstream edge"
                    )
    return clusters, critical, diagnostics


def analyze(net: FlowNetwork, flows: FlowAssignment | None = None) -> tuple[OrientationView, DownstreamReport]:
    """Full pipeline: flows, orientation, downstream report with clusters."""
    if flows is None:
        flows = solve_flows(net)
    view = controllable_edges(net, flows)
    report = max_downstream_flows(net, view, flows)
    report.consumer_clusters, report.critical_clusters, report.diagnostics = consumer_clusters(net, view, report)
    return view, report
