"""Acyclic supplier/consumer flow networks and their conservation flows.

Nodes are integer ids. Undirected edges are stored once, oriented from the
smaller to the larger id and enumerated lexicographically; this fixed
enumeration is the orientation used by the incidence matrix and by every
flow vector in the package.
"""

from __future__ import annotations

import copy
from collections import deque
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ImbalancedCommodity, InvalidNetwork, NotATree

SUPPLIER = "supplier"
CONSUMER = "consumer"

BALANCE_RTOL = 1e-9


def canonical_edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


class FlowNetwork:
    """An undirected tree whose vertices supply or consume a commodity.

    Parameters
    ----------
    nodes : iterable of int
        Node ids. Stored sorted.
    edges : iterable of (int, int)
        Undirected edges, any orientation.
    suppliers : iterable of int
        Ids of supplier nodes; every other node is a consumer.
    capacity : mapping or sequence
        Positive edge capacities, keyed by edge (either orientation) or
        given in canonical edge order.
    commodity : mapping or sequence, optional
        Supplied (> 0) or consumed (<= 0) amount per node. Defaults to zero.
    bounds : mapping, optional
        ``supplier -> (m_min, m_max)``.

    Only the tree structure is checked on construction; :meth:`validate`
    checks the remaining invariants (role counts, signs, bounds).
    """

    def __init__(
        self,
        nodes: Iterable[int],
        edges: Iterable[tuple[int, int]],
        suppliers: Iterable[int],
        capacity,
        commodity=None,
        bounds: Mapping[int, tuple[float, float]] | None = None,
    ):
        self.nodes = tuple(sorted(int(v) for v in nodes))
        if len(set(self.nodes)) != len(self.nodes):
            raise InvalidNetwork("duplicate node ids")
        self.index = {v: k for k, v in enumerate(self.nodes)}
        canon = sorted({canonical_edge(int(a), int(b)) for a, b in edges})
        for a, b in canon:
            if a == b:
                raise NotATree(f"self-loop at node {a}")
            if a not in self.index or b not in self.index:
                raise InvalidNetwork(f"edge ({a}, {b}) references an unknown node")
        self.edges = tuple(canon)
        self.edge_index = {e: k for k, e in enumerate(self.edges)}

        sup = {int(s) for s in suppliers}
        unknown = sup - set(self.index)
        if unknown:
            raise InvalidNetwork(f"unknown supplier ids {sorted(unknown)}")
        self.is_supplier = np.array([v in sup for v in self.nodes], dtype=bool)

        self.capacity = self._edge_array(capacity, "capacity")
        if np.any(~(self.capacity > 0)):
            raise InvalidNetwork("capacities must be positive")
        self.commodity = (
            np.zeros(len(self.nodes)) if commodity is None else self._node_array(commodity, "commodity")
        )

        self.m_min = np.full(len(self.nodes), np.nan)
        self.m_max = np.full(len(self.nodes), np.nan)
        for s, (lo, hi) in (bounds or {}).items():
            if int(s) not in sup:
                raise InvalidNetwork(f"bounds given for non-supplier {s}")
            self.m_min[self.index[int(s)]] = float(lo)
            self.m_max[self.index[int(s)]] = float(hi)

        self._build_adjacency()

    # -- construction helpers -------------------------------------------------

    def _edge_array(self, values, name):
        if isinstance(values, Mapping):
            out = np.empty(len(self.edges))
            seen = set()
            for (a, b), val in values.items():
                e = canonical_edge(int(a), int(b))
                if e not in self.edge_index:
                    raise InvalidNetwork(f"{name} given for non-edge {(a, b)}")
                out[self.edge_index[e]] = float(val)
                seen.add(e)
            if len(seen) != len(self.edges):
                raise InvalidNetwork(f"{name} missing for some edges")
            return out
        out = np.asarray(values, dtype=float).copy()
        if out.shape != (len(self.edges),):
            raise InvalidNetwork(f"{name} must have one entry per edge")
        return out

    def _node_array(self, values, name):
        if isinstance(values, Mapping):
            out = np.zeros(len(self.nodes))
            for v, val in values.items():
                if int(v) not in self.index:
                    raise InvalidNetwork(f"{name} given for unknown node {v}")
                out[self.index[int(v)]] = float(val)
            return out
        out = np.asarray(values, dtype=float).copy()
        if out.shape != (len(self.nodes),):
            raise InvalidNetwork(f"{name} must have one entry per node")
        return out

    def _build_adjacency(self):
        n = len(self.nodes)
        if len(self.edges) != n - 1:
            raise NotATree(f"{len(self.edges)} edges for {n} nodes; a tree needs {n - 1}")
        self.neighbors: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for k, (a, b) in enumerate(self.edges):
            ia, ib = self.index[a], self.index[b]
            self.neighbors[ia].append((ib, k))
            self.neighbors[ib].append((ia, k))
        if n and len(self.bfs(0)[0]) != n:
            raise NotATree("graph is disconnected")

    # -- basic queries ----------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def suppliers(self) -> tuple[int, ...]:
        return tuple(v for v, s in zip(self.nodes, self.is_supplier) if s)

    @property
    def consumers(self) -> tuple[int, ...]:
        return tuple(v for v, s in zip(self.nodes, self.is_supplier) if not s)

    def role(self, v: int) -> str:
        return SUPPLIER if self.is_supplier[self.index[v]] else CONSUMER

    def has_edge(self, i: int, j: int) -> bool:
        return canonical_edge(i, j) in self.edge_index

    def commodity_of(self, v: int) -> float:
        return float(self.commodity[self.index[v]])

    def bfs(self, root: int = 0):
        """Breadth-first order from node *index* ``root``.

        Returns ``(order, parent, parent_edge)`` over node indices; the root
        has parent ``-1``.
        """
        n = len(self.nodes)
        parent = [-1] * n
        parent_edge = [-1] * n
        seen = [False] * n
        seen[root] = True
        order = [root]
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for w, e in self.neighbors[u]:
                if not seen[w]:
                    seen[w] = True
                    parent[w] = u
                    parent_edge[w] = e
                    order.append(w)
                    queue.append(w)
        return order, parent, parent_edge

    def with_commodity(self, commodity) -> "FlowNetwork":
        """Copy sharing the topology, with a new commodity vector."""
        other = copy.copy(self)
        other.commodity = self._node_array(commodity, "commodity")
        return other

    def with_bounds(self, m_min, m_max) -> "FlowNetwork":
        other = copy.copy(self)
        other.m_min = self._node_array(m_min, "m_min")
        other.m_max = self._node_array(m_max, "m_max")
        other.m_min[~self.is_supplier] = np.nan
        other.m_max[~self.is_supplier] = np.nan
        return other

    def is_balanced(self, commodity=None) -> bool:
        m = self.commodity if commodity is None else np.asarray(commodity, dtype=float)
        return abs(m.sum()) <= BALANCE_RTOL * max(1.0, np.abs(m).sum())

    def validate(self) -> None:
        """Check every structural and sign invariant; raise InvalidNetwork."""
        n_s = int(self.is_supplier.sum())
        if n_s < 2:
            raise InvalidNetwork(f"need at least 2 suppliers, got {n_s}")
        if self.n - n_s < 1:
            raise InvalidNetwork("need at least 1 consumer")
        m = self.commodity
        bad = [v for v, s, x in zip(self.nodes, self.is_supplier, m) if (s and not x > 0) or (not s and x > 0)]
        if bad:
            raise InvalidNetwork(f"commodity sign does not match role at nodes {bad}")
        for k in np.flatnonzero(self.is_supplier):
            lo, hi = self.m_min[k], self.m_max[k]
            if np.isnan(lo) or np.isnan(hi):
                continue
            if not (0 < lo <= hi):
                raise InvalidNetwork(f"supplier {self.nodes[k]} bounds must satisfy 0 < min <= max")

    def __repr__(self):
        return f"FlowNetwork(n={self.n}, suppliers={list(self.suppliers)})"


class FlowAssignment:
    """Edge flows in canonical orientation; ``flow[(j, i)] == -flow[(i, j)]``."""

    def __init__(self, net: FlowNetwork, values: Sequence[float]):
        self.net = net
        self.values = np.asarray(values, dtype=float)

    def __getitem__(self, edge: tuple[int, int]) -> float:
        i, j = edge
        k = self.net.edge_index[canonical_edge(i, j)]
        v = self.values[k]
        return float(v) if i < j else float(-v)

    def ratios(self) -> np.ndarray:
        return np.abs(self.values) / self.net.capacity

    def residual(self, commodity=None) -> float:
        m = self.net.commodity if commodity is None else np.asarray(commodity, dtype=float)
        return float(np.max(np.abs(incidence_matrix(self.net) @ self.values - m)))

    def as_dict(self) -> dict[tuple[int, int], float]:
        return {e: float(v) for e, v in zip(self.net.edges, self.values)}

    def __repr__(self):
        return f"FlowAssignment({self.as_dict()})"


def incidence_matrix(net: FlowNetwork) -> np.ndarray:
    B = np.zeros((net.n, net.n_edges))
    for k, (a, b) in enumerate(net.edges):
        B[net.index[a], k] = 1.0
        B[net.index[b], k] = -1.0
    return B


def _check_balanced(net, m):
    if not net.is_balanced(m):
        raise ImbalancedCommodity(f"commodity sums to {m.sum():.6g}, not 0")


def flow_matrix(net: FlowNetwork) -> np.ndarray:
    """The linear map ``B^T L^+`` taking a balanced commodity vector to flows."""
    B = incidence_matrix(net)
    return B.T @ np.linalg.pinv(B @ B.T)


def solve_flows(net: FlowNetwork, commodity=None, method: str = "grounded") -> FlowAssignment:
    """Unique flows satisfying ``B f = m`` on a tree.

    ``method="pinv"`` evaluates ``B^T L^+ m`` literally; the default solves the
    Laplacian grounded at the first node, which gives the same flows for any
    balanced ``m`` since ``B^T`` annihilates constant potentials.
    """
    m = net.commodity if commodity is None else np.asarray(commodity, dtype=float)
    _check_balanced(net, m)
    B = incidence_matrix(net)
    if method == "pinv":
        f = B.T @ (np.linalg.pinv(B @ B.T) @ m)
    elif method == "grounded":
        L = B @ B.T
        pot = np.zeros(net.n)
        if net.n > 1:
            pot[1:] = np.linalg.solve(L[1:, 1:], m[1:])
        f = B.T @ pot
    else:
        raise ValueError(f"unknown method {method!r}")
    return FlowAssignment(net, f)


def leaf_elimination_oracle(net: FlowNetwork, commodity=None) -> FlowAssignment:
    """Tree flows by peeling leaves; independent of any matrix algebra."""
    m = net.commodity if commodity is None else np.asarray(commodity, dtype=float)
    _check_balanced(net, m)
    residual = {v: float(m[k]) for k, v in enumerate(net.nodes)}
    nbrs = {v: set() for v in net.nodes}
    for a, b in net.edges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    flows = {}
    leaves = deque(sorted(v for v in net.nodes if len(nbrs[v]) == 1))
    while leaves:
        leaf = leaves.popleft()
        if len(nbrs[leaf]) != 1:
            continue
        (other,) = nbrs[leaf]
        # the leaf pushes its whole residual through its only edge
        flows[(leaf, other)] = residual[leaf]
        residual[other] += residual[leaf]
        nbrs[other].discard(leaf)
        nbrs[leaf].clear()
        if len(nbrs[other]) == 1:
            leaves.append(other)
    values = np.empty(net.n_edges)
    for (i, j), val in flows.items():
        k = net.edge_index[canonical_edge(i, j)]
        values[k] = val if i < j else -val
    return FlowAssignment(net, values)
