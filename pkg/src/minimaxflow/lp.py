"""Centralized minimax flow solver.

Flows are linear in the supplier decisions, so minimizing the largest
flow/capacity ratio over the controllable edges is an epigraph linear
program: minimize ``t`` subject to ``-t <= f_e / cap_e <= t``. Ties among
optimal decisions are broken by a second program that minimizes the L1
distance to the centre of the decision box. When that point is interior but
the suppliers' maximum downstream flows disagree, a consensus iteration
projected onto the box moves it to an optimal point where they agree, if it
finds one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import simplex
from .downstream import supplier_indicators
from .network import FlowAssignment, FlowNetwork, flow_matrix, solve_flows

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"

BOUNDARY_RTOL = 1e-9


@dataclass
class MinimaxSolution:
    status: str
    objective: float = np.nan
    supplier_commodity: dict[int, float] = field(default_factory=dict)
    controls: dict[int, float] = field(default_factory=dict)
    flows: FlowAssignment | None = None
    omega: float = 0.0
    boundary_feasible: bool = False
    binding: list[int] = field(default_factory=list)
    certificate: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def to_dict(self) -> dict:
        out = {
            "status": self.status,
            "objective": None if np.isnan(self.objective) else float(self.objective),
            "supplier_commodity": {str(k): float(v) for k, v in self.supplier_commodity.items()},
            "controls": {str(k): float(v) for k, v in self.controls.items()},
            "omega": float(self.omega),
            "boundary_feasible": self.boundary_feasible,
            "binding": list(self.binding),
            "certificate": self.certificate,
        }
        if self.flows is not None:
            net = self.flows.net
            out["edges"] = [
                {"edge": f"{a}->{b}", "flow": float(f), "ratio": float(abs(f) / cap)}
                for (a, b), f, cap in zip(net.edges, self.flows.values, net.capacity)
            ]
        return out


def controllable_mask(net: FlowNetwork) -> np.ndarray:
    beta = supplier_indicators(net)
    return np.array([bool(beta[(a, b)] and beta[(b, a)]) for a, b in net.edges])


def _epigraph(G, g0, cf, lo, hi, A_eq=None, b_eq=None):
    """Minimize max_e |(G x + g0)_e| over rows ``cf``, x in [lo, hi].

    Returns ``(x, t)`` or ``None`` if the box/equality is infeasible.
    """
    k = G.shape[1]
    Gc, gc = G[cf], g0[cf]
    ne = Gc.shape[0]
    # variables: x (k), t
    A_ub = np.vstack([np.hstack([Gc, -np.ones((ne, 1))]), np.hstack([-Gc, -np.ones((ne, 1))])])
    b_ub = np.concatenate([-gc, gc])
    Aeq = None if A_eq is None else np.hstack([A_eq, np.zeros((A_eq.shape[0], 1))])
    bounds = list(zip(lo, hi)) + [(0.0, np.inf)]
    c = np.zeros(k + 1)
    c[-1] = 1.0
    res = simplex.linprog(c, A_ub, b_ub, Aeq, b_eq, bounds)
    if res.status != simplex.OPTIMAL:
        return None
    t_star = res.x[-1]

    centre = np.where(np.isfinite(hi), 0.5 * (lo + hi), lo)
    # second stage: variables x, t, u (k); minimize sum u, u >= |x - centre|, t <= t*
    Z = np.zeros
    A2 = np.vstack(
        [
            np.hstack([A_ub, Z((2 * ne, k))]),
            np.hstack([np.eye(k), Z((k, 1)), -np.eye(k)]),
            np.hstack([-np.eye(k), Z((k, 1)), -np.eye(k)]),
        ]
    )
    b2 = np.concatenate([b_ub, centre, -centre])
    Aeq2 = None if Aeq is None else np.hstack([Aeq, Z((Aeq.shape[0], k))])
    t_cap = t_star + 1e-11 * max(1.0, t_star)
    bounds2 = list(zip(lo, hi)) + [(0.0, t_cap)] + [(0.0, np.inf)] * k
    c2 = np.concatenate([Z(k + 1), np.ones(k)])
    res2 = simplex.linprog(c2, A2, b2, Aeq2, b_eq, bounds2)
    if res2.status != simplex.OPTIMAL:
        return res.x[:k], t_star
    x = res2.x[:k]
    return x, float(np.max(np.abs(G[cf] @ x + g0[cf]), initial=0.0))


CONSENSUS_TOL = 1e-8


def _consensus_refine(net, m_full, t_star, sup_idx, lo, hi, shift):
    """Move an optimum to a point of the optimal face where supplier φ agree.

    ``shift`` maps supplier commodity to decision values (``x = m_s + shift``),
    so the decision box is ``[lo, hi] - shift`` in commodity space. Returns the
    refined ``(m_full, controls)`` or ``None`` when the projected consensus
    iteration does not converge or raises the objective.
    """
    from .distributed import consensus_commodity
    from .downstream import controllable_edges, phi_recursive

    flows = solve_flows(net, m_full)
    phi = phi_recursive(net, controllable_edges(net, flows), flows)
    sup_phi = [phi[net.nodes[i]] for i in sup_idx]
    if max(sup_phi) - min(sup_phi) <= CONSENSUS_TOL:
        return None
    cf = controllable_mask(net)
    step = 0.5 * float(net.capacity[cf].min()) if cf.any() else 1.0
    m, spread = consensus_commodity(
        net.with_commodity(m_full), k=step, dt=1.0, max_steps=5000, tol=CONSENSUS_TOL, bounds=(lo - shift, hi - shift)
    )
    if spread > CONSENSUS_TOL:
        return None
    if safety_margin(net, m) > t_star + 10 * CONSENSUS_TOL * max(1.0, t_star):
        return None
    return m, np.clip(m[sup_idx] + shift, lo, hi)


def _finish(net, m_full, controls, omega, lo, hi, sup_idx, t_star) -> MinimaxSolution:
    flows = solve_flows(net, m_full)
    ratios = flows.ratios()
    sol = MinimaxSolution(
        status=OPTIMAL,
        objective=float(t_star),
        supplier_commodity={net.nodes[i]: float(m_full[i]) for i in sup_idx},
        controls={net.nodes[i]: float(x) for i, x in zip(sup_idx, controls)},
        flows=flows,
        omega=float(omega),
    )
    sol.binding = [net.nodes[i] for i, hit in zip(sup_idx, _binding_mask(controls, lo, hi)) if hit]
    worst = int(np.argmax(ratios))
    if ratios[worst] > 1 + BOUNDARY_RTOL:
        a, b = net.edges[worst]
        sol.status = INFEASIBLE
        sol.certificate = (
            f"capacity violated on edge {{{a},{b}}}: |f|/cap = {ratios[worst]:.6g} > 1 at the best supplier choice"
        )
    elif ratios[worst] >= 1 - BOUNDARY_RTOL:
        sol.boundary_feasible = True
    return sol


def _binding_mask(x, lo, hi):
    span = np.maximum(1.0, np.abs(np.where(np.isfinite(hi), hi, lo)))
    return (x <= lo + 1e-9 * span) | (x >= hi - 1e-9 * span)


def _binding(x, lo, hi) -> bool:
    return bool(np.any(_binding_mask(np.asarray(x), lo, hi)))


def _supplier_box(net, sup_idx, lo=None, hi=None):
    lo = net.m_min[sup_idx] if lo is None else np.asarray(lo, dtype=float)
    hi = net.m_max[sup_idx] if hi is None else np.asarray(hi, dtype=float)
    lo = np.where(np.isnan(lo), 0.0, lo)
    hi = np.where(np.isnan(hi), np.inf, hi)
    return lo, hi


def solve_minimax(net: FlowNetwork) -> MinimaxSolution:
    """Choose supplier commodity within bounds to minimize the safety margin.

    Consumer commodity is taken from ``net.commodity``; supplier entries are
    ignored and replaced by the optimum.
    """
    sup_idx = np.flatnonzero(net.is_supplier)
    con_idx = np.flatnonzero(~net.is_supplier)
    lo, hi = _supplier_box(net, sup_idx)
    demand = -float(net.commodity[con_idx].sum())
    if demand < lo.sum() - 1e-9 * max(1.0, abs(demand)) or demand > hi.sum() + 1e-9 * max(1.0, abs(demand)):
        return MinimaxSolution(
            INFEASIBLE,
            certificate=(
                f"supplier bounds allow total supply in [{lo.sum():.6g}, {hi.sum():.6g}] "
                f"but consumers demand {demand:.6g}"
            ),
        )
    F = flow_matrix(net) / net.capacity[:, None]
    cf = controllable_mask(net)
    G = F[:, sup_idx]
    g0 = F[:, con_idx] @ net.commodity[con_idx]
    out = _epigraph(G, g0, cf, lo, hi, np.ones((1, sup_idx.size)), np.array([demand]))
    if out is None:
        return MinimaxSolution(INFEASIBLE, certificate="supplier box and balance constraint are inconsistent")
    x, t = out
    m_full = net.commodity.copy()
    m_full[sup_idx] = x
    # remove rounding drift so the balance tolerance holds exactly
    m_full[sup_idx[-1]] -= m_full.sum()
    if not _binding(x, lo, hi):
        refined = _consensus_refine(net, m_full, t, sup_idx, lo, hi, np.zeros(sup_idx.size))
        if refined is not None:
            m_full, x = refined
    return _finish(net, m_full, x, 0.0, lo, hi, sup_idx, t)


def solve_minimax_microgrid(net: FlowNetwork, power, droop, p_min, p_max) -> MinimaxSolution:
    """Minimax over generator set-points with droop sharing of the imbalance.

    The steady injections are ``m = P - omega * D`` with
    ``omega = sum(P) / sum(D over generators)``, which is linear in the
    generator powers; ``power``, ``droop``, ``p_min`` and ``p_max`` are arrays
    over the nodes of ``net`` (generator entries of ``power`` are ignored).
    """
    sup_idx = np.flatnonzero(net.is_supplier)
    con_idx = np.flatnonzero(~net.is_supplier)
    P = np.asarray(power, dtype=float)
    D = np.asarray(droop, dtype=float)[sup_idx]
    lo = np.asarray(p_min, dtype=float)[sup_idx]
    hi = np.asarray(p_max, dtype=float)[sup_idx]
    if np.any(D <= 0):
        raise ValueError("droop coefficients must be positive on generators")
    d_sum = D.sum()
    Pc = P[con_idx]
    k = sup_idx.size
    # m_s = M x + b0, m_c = Pc
    M = np.eye(k) - np.outer(D, np.ones(k)) / d_sum
    b0 = -D * Pc.sum() / d_sum
    F = flow_matrix(net) / net.capacity[:, None]
    cf = controllable_mask(net)
    G = F[:, sup_idx] @ M
    g0 = F[:, sup_idx] @ b0 + F[:, con_idx] @ Pc
    out = _epigraph(G, g0, cf, lo, hi)
    if out is None:
        return MinimaxSolution(INFEASIBLE, certificate="generator power box is empty")
    x, t = out
    omega = (x.sum() + Pc.sum()) / d_sum
    m_full = np.zeros(net.n)
    m_full[sup_idx] = x - omega * D
    m_full[con_idx] = Pc
    m_full[sup_idx[-1]] -= m_full.sum()
    if not _binding(x, lo, hi):
        # keep total generation, hence omega, fixed while moving along the face
        refined = _consensus_refine(net, m_full, t, sup_idx, lo, hi, omega * D)
        if refined is not None:
            m_full, x = refined
    return _finish(net, m_full, x, omega, lo, hi, sup_idx, t)


def safety_margin(net: FlowNetwork, commodity=None) -> float:
    """Largest flow/capacity ratio over controllable edges for a given commodity."""
    flows = solve_flows(net, commodity)
    cf = controllable_mask(net)
    return float(np.max(flows.ratios()[cf], initial=0.0))
