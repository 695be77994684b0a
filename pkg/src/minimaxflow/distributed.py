"""Per-node distributed algorithms.

Each agent sees only its incident edges and its neighbours' published state.
Synchronous rounds read a snapshot of neighbour state and then commit, so the
order in which agents are visited never matters.

The global aggregates used by the control law (means and maxima over
generators) are computed directly here; a deployment would obtain them from a
fast consensus or flooding protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnstableStep
from .network import FlowAssignment, FlowNetwork

PHI_FLOOR = -1e-9
STALL_STEPS = 200


@dataclass(frozen=True)
class GainConfig:
    k_phi: float = 200.0
    k_P: float = 40.0
    k_P_gamma: float = 40.0

    def __post_init__(self):
        for name in ("k_phi", "k_P", "k_P_gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class NodeAgent:
    id: int
    is_supplier: bool = False
    phi_hat: float = 0.0
    beta_hat_row: dict[int, int] = field(default_factory=dict)
    gamma: int = 1
    zeta: int = 0
    controlled_value: float = float("nan")
    bounds: tuple[float, float] = (float("-inf"), float("inf"))


@dataclass
class AggregateStats:
    phi_avg: float
    phi_avg_nonsat: dict[int, float]
    phi_max_sat: dict[int, float]


class Neighborhood:
    """Message-passing view of the network for one round.

    Every read goes through :meth:`outgoing` or :meth:`neighbor_phi`, which
    refuse non-local access and append ``(reader, kind, other)`` to ``log``.
    """

    def __init__(self, net: FlowNetwork, flows, agents: dict[int, NodeAgent], log: list | None = None):
        self.net = net
        self._flow = flows if callable(flows) else flows.__getitem__
        self.agents = agents
        self.log = log

    def outgoing(self, i: int) -> list[tuple[int, float, float]]:
        """``(j, f_ij, cap_ij)`` for every edge incident to ``i``."""
        out = []
        for w, e in self.net.neighbors[self.net.index[i]]:
            j = self.net.nodes[w]
            if self.log is not None:
                self.log.append((i, "flow", j))
            out.append((j, self._flow((i, j)), float(self.net.capacity[e])))
        return out

    def neighbor_phi(self, i: int, j: int) -> float:
        if not self.net.has_edge(i, j):
            raise PermissionError(f"node {i} may not read the state of non-neighbour {j}")
        if self.log is not None:
            self.log.append((i, "phi", j))
        return self.agents[j].phi_hat


def propagate_beta(net: FlowNetwork, trace: list | None = None) -> tuple[dict[tuple[int, int], int], int]:
    """Boolean flooding of supplier indicators.

    ``beta_ij`` starts at 1 iff ``j`` is a supplier and is OR-ed with the
    indicators ``beta_jk`` of ``j``'s other edges until nothing changes.
    Returns the fixed point and the number of sweeps that changed something.
    If ``trace`` is given, the initial assignment and every sweep's result are
    appended to it.
    """
    nbrs = {v: [net.nodes[w] for w, _ in net.neighbors[net.index[v]]] for v in net.nodes}
    beta = {(i, j): int(net.is_supplier[net.index[j]]) for i in net.nodes for j in nbrs[i]}
    sweeps = 0
    if trace is not None:
        trace.append(dict(beta))
    while True:
        new = {}
        for (i, j), b in beta.items():
            new[(i, j)] = int(b or any(beta[(j, k)] for k in nbrs[j] if k != i))
        if trace is not None:
            trace.append(dict(new))
        if new == beta:
            return beta, sweeps
        beta = new
        sweeps += 1


def make_agents(net: FlowNetwork, beta=None, controlled=None, bounds=None) -> dict[int, NodeAgent]:
    if beta is None:
        beta, _ = propagate_beta(net)
    agents = {}
    for v in net.nodes:
        row = {j: b for (i, j), b in beta.items() if i == v}
        a = NodeAgent(v, bool(net.is_supplier[net.index[v]]), beta_hat_row=row)
        if controlled is not None and v in controlled:
            a.controlled_value = float(controlled[v])
            a.bounds = tuple(bounds[v]) if bounds is not None else a.bounds
            a.gamma = saturation_flag(a.controlled_value, *a.bounds)
        agents[v] = a
    return agents


def local_target(agent: NodeAgent, hood: Neighborhood) -> float:
    """``max over out-neighbours j of {beta_ij f_ij / cap_ij, phi_j}``; 0 if none."""
    best = 0.0
    for j, f, cap in hood.outgoing(agent.id):
        if f > 0:
            best = max(best, agent.beta_hat_row[j] * f / cap, hood.neighbor_phi(agent.id, j))
    return best


def step_estimator(agents: dict[int, NodeAgent], hood: Neighborhood, dt: float, k_phi: float) -> None:
    """One explicit Euler step of the maximum-downstream-flow estimator."""
    if dt * k_phi >= 2:
        raise UnstableStep(f"dt * k_phi = {dt * k_phi:g} >= 2")
    targets = {i: local_target(a, hood) for i, a in agents.items()}
    for i, a in agents.items():
        a.phi_hat -= dt * k_phi * (a.phi_hat - targets[i])


def estimate_phi(net: FlowNetwork, flows: FlowAssignment, k_phi: float, t_end: float, dt: float, beta=None):
    """Run the estimator from zero with frozen flows; return ``{node: phi_hat}``."""
    agents = make_agents(net, beta)
    hood = Neighborhood(net, flows, agents)
    for _ in range(int(round(t_end / dt))):
        step_estimator(agents, hood, dt, k_phi)
    return {v: a.phi_hat for v, a in agents.items()}


def saturation_flag(value: float, lo: float, hi: float) -> int:
    """1 while strictly inside the box, 0 once on or beyond a bound."""
    return int(lo < value < hi)


def compute_aggregates(agents: dict[int, NodeAgent]) -> AggregateStats:
    sup = [a for a in agents.values() if a.is_supplier]
    phi_avg = float(np.mean([a.phi_hat for a in sup]))
    avg_ns, max_s = {}, {}
    for a in sup:
        others = [b for b in sup if b.id != a.id]
        vals = [a.phi_hat] + [b.phi_hat for b in others if b.gamma]
        avg_ns[a.id] = sum(vals) / len(vals)
        max_s[a.id] = max((b.phi_hat for b in others if not b.gamma), default=0.0)
    return AggregateStats(phi_avg, avg_ns, max_s)


def control_rate(agent: NodeAgent, stats: AggregateStats, gains: GainConfig, all_unsaturated: bool, mode: str = "P"):
    """Rate of change of the controlled value, and the correction term used for re-entry.

    Returns ``(rate, correction, zeta)``; in D mode both are sign-reversed.
    """
    sign = -1.0 if mode == "D" else 1.0
    navg = stats.phi_avg_nonsat[agent.id]
    corr = sign * (-gains.k_P * (agent.phi_hat - navg) - gains.k_P_gamma * (navg - stats.phi_max_sat[agent.id]))
    lo, hi = agent.bounds
    x = agent.controlled_value
    zeta = int((x <= lo and corr > 0) or (x >= hi and corr < 0))
    if all_unsaturated:
        rate = -sign * gains.k_P * (agent.phi_hat - stats.phi_avg)
    elif agent.gamma or zeta:
        rate = corr
    else:
        rate = 0.0
    return rate, corr, zeta


def control_step(agents: dict[int, NodeAgent], stats: AggregateStats, dt: float, gains: GainConfig, mode: str = "P"):
    """Integrate the saturation-aware consensus law for one step, then clamp.

    ``mode`` is ``"P"`` (controlled value is the generator power) or ``"D"``
    (droop coefficient; the law's right-hand side is negated).
    """
    if mode not in ("P", "D"):
        raise ValueError(f"mode must be 'P' or 'D', got {mode!r}")
    sup = [a for a in agents.values() if a.is_supplier]
    all_unsat = all(a.gamma for a in sup)
    updates = {}
    for a in sup:
        rate, corr, _ = control_rate(a, stats, gains, all_unsat, mode)
        lo, hi = a.bounds
        updates[a.id] = (min(max(a.controlled_value + dt * rate, lo), hi), corr)
    for a in sup:
        value, corr = updates[a.id]
        lo, hi = a.bounds
        a.controlled_value = value
        a.gamma = saturation_flag(value, lo, hi)
        a.zeta = int((value <= lo and corr > 0) or (value >= hi and corr < 0))
    return {i: v for i, (v, _) in updates.items()}


def project_box_sum(x, lo, hi, total, iters=200):
    """Euclidean projection of ``x`` onto ``{lo <= y <= hi, sum(y) = total}``.

    The projection is ``clip(x + c)`` for a scalar shift ``c``, found by bisection.
    """
    a, b = -1.0, 1.0
    while np.clip(x + a, lo, hi).sum() > total and a > -1e300:
        a *= 2.0
    while np.clip(x + b, lo, hi).sum() < total and b < 1e300:
        b *= 2.0
    for _ in range(iters):
        c = 0.5 * (a + b)
        if np.clip(x + c, lo, hi).sum() > total:
            b = c
        else:
            a = c
    return np.clip(x + 0.5 * (a + b), lo, hi)


def consensus_commodity(net: FlowNetwork, k: float = 1.0, dt: float = 0.01, max_steps: int = 20000, tol: float = 1e-9,
                        bounds=None):
    """Drive supplier commodity to equal maximum downstream flows on a static network.

    Uses the unsaturated law ``dm_i/dt = -k (phi_i - mean phi)`` with exact
    ``phi``. Without ``bounds`` supplier limits are ignored; with
    ``bounds = (lo, hi)`` (arrays over suppliers) every step is projected back
    onto the box at fixed total supply. Stops early once the spread has not
    shrunk for ``STALL_STEPS`` steps. Returns ``(commodity, spread)``.
    """
    from .downstream import controllable_edges, phi_recursive
    from .network import solve_flows

    sup = np.flatnonzero(net.is_supplier)
    m = net.commodity.copy()
    total = float(m[sup].sum())
    spread = best = np.inf
    since_best = 0
    for _ in range(max_steps):
        flows = solve_flows(net, m)
        view = controllable_edges(net, flows)
        phi = phi_recursive(net, view, flows)
        ph = np.array([phi[net.nodes[i]] for i in sup])
        spread = float(ph.max() - ph.min())
        if spread <= tol:
            break
        if spread < 0.999 * best:
            best, since_best = spread, 0
        else:
            since_best += 1
            if since_best >= STALL_STEPS:
                break
        step = m[sup] - dt * k * (ph - ph.mean())
        new = step if bounds is None else project_box_sum(step, bounds[0], bounds[1], total)
        if np.array_equal(new, m[sup]):
            break  # held by the box
        m[sup] = new
    return m, spread


def agent_rows(t: float, agents: dict[int, NodeAgent]) -> list[tuple]:
    """Per-supplier export rows ``(t, node, phi_hat, value, gamma, zeta)``."""
    return [(t, a.id, a.phi_hat, a.controlled_value, a.gamma, a.zeta) for a in agents.values() if a.is_supplier]
