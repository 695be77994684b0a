"""Droop-controlled lossless AC microgrid on a tree.

Generators follow ``D_i d(delta_i)/dt = P_i - sum_j A_ij sin(delta_i - delta_j)``;
loads satisfy the same balance algebraically. Line flows are
``xi_ij = A_ij sin(delta_i - delta_j)``. One value per canonical edge is
stored, so antisymmetry is exact.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .distributed import GainConfig, propagate_beta
from .errors import InfeasibleSynchronization, NewtonDivergence, StepTooLarge
from .lp import controllable_mask, solve_minimax_microgrid
from .network import FlowAssignment, FlowNetwork, solve_flows

NEWTON_RTOL = 1e-10
NEWTON_MAXIT = 50
STEP_BOUND = 0.5
MODES = {"none": 0, "P": 1, "D": 2}


@dataclass
class GridModel:
    """Arrays are indexed like ``network.nodes``; loads carry NaN bounds and zero droop."""

    network: FlowNetwork
    coupling: np.ndarray
    droop: np.ndarray
    power: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    d_min: np.ndarray = None
    d_max: np.ndarray = None

    def __post_init__(self):
        net = self.network
        for name in ("coupling", "droop", "power", "p_min", "p_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).copy())
        if self.d_min is None:
            self.d_min = np.where(net.is_supplier, 0.5 * self.droop, np.nan)
        if self.d_max is None:
            self.d_max = np.where(net.is_supplier, 2.0 * self.droop, np.nan)
        self.d_min = np.asarray(self.d_min, dtype=float).copy()
        self.d_max = np.asarray(self.d_max, dtype=float).copy()
        if self.coupling.shape != (len(net.edges),) or np.any(self.coupling <= 0):
            raise ValueError("coupling must be positive, one value per edge")
        if np.any(self.droop[net.is_supplier] <= 0):
            raise ValueError("generator droop coefficients must be positive")

    @property
    def generators(self) -> np.ndarray:
        return np.flatnonzero(self.network.is_supplier)

    @property
    def loads(self) -> np.ndarray:
        return np.flatnonzero(~self.network.is_supplier)

    def copy(self) -> GridModel:
        return replace(self)

    def omega(self, power=None, droop=None) -> float:
        P = self.power if power is None else power
        D = self.droop if droop is None else droop
        return float(P.sum() / D[self.generators].sum())

    def injections(self, power=None, droop=None) -> np.ndarray:
        P = self.power if power is None else power
        D = self.droop if droop is None else droop
        m = P - self.omega(P, D) * np.where(self.network.is_supplier, D, 0.0)
        return m - m.sum() / m.size

    def stiffness(self, droop=None) -> float:
        """``max over generators of sum_j A_ij / D_i``, the explicit-Euler rate bound."""
        D = self.droop if droop is None else droop
        net = self.network
        return max(sum(self.coupling[e] for _, e in net.neighbors[i]) / D[i] for i in self.generators)

    def lp(self):
        return solve_minimax_microgrid(self.network, self.power, self.droop, self.p_min, self.p_max)


@dataclass
class SteadyState:
    flows: FlowAssignment
    omega: float
    sync_ratio: np.ndarray

    def __iter__(self):
        yield self.flows
        yield self.omega


@dataclass
class GridState:
    delta: np.ndarray
    t: float = 0.0
    xi: np.ndarray = field(default=None, repr=False)
    omega_inst: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_angles(cls, model: GridModel, delta, t=0.0, power=None, droop=None) -> GridState:
        delta = np.asarray(delta, dtype=float).copy()
        xi, inj = line_flows(model, delta)
        P = model.power if power is None else power
        D = model.droop if droop is None else droop
        g = model.generators
        om = np.full(delta.size, np.nan)
        om[g] = (P[g] - inj[g]) / D[g]
        return cls(delta, float(t), xi, om)


def line_flows(model: GridModel, delta):
    net = model.network
    eu, ev = _edge_arrays(net)
    xi = model.coupling * np.sin(delta[eu] - delta[ev])
    inj = np.bincount(eu, xi, net.n) - np.bincount(ev, xi, net.n)
    return xi, inj


def _edge_arrays(net):
    eu = np.array([net.index[a] for a, _ in net.edges], dtype=np.intp)
    ev = np.array([net.index[b] for _, b in net.edges], dtype=np.intp)
    return eu, ev


def load_forest(net: FlowNetwork):
    """Post-order of the load-only subgraph with parent links.

    Returns ``(order, parent, parent_edge)``; ``order`` lists every load after
    all of its children, ``parent`` is -1 at component roots.
    """
    parent = np.full(net.n, -1, dtype=np.intp)
    parent_edge = np.full(net.n, -1, dtype=np.intp)
    seen = np.zeros(net.n, dtype=bool)
    order = []
    for root in range(net.n):
        if net.is_supplier[root] or seen[root]:
            continue
        seen[root] = True
        comp = [root]
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for w, e in net.neighbors[v]:
                if not net.is_supplier[w] and not seen[w]:
                    seen[w] = True
                    parent[w] = v
                    parent_edge[w] = e
                    comp.append(w)
                    queue.append(w)
        order.extend(reversed(comp))
    return np.array(order, dtype=np.intp), parent, parent_edge


def steady_state(model: GridModel) -> SteadyState:
    """Phase-locked flows and common frequency deviation.

    Raises :class:`InfeasibleSynchronization` when some line would need
    ``|f| >= A``.
    """
    omega = model.omega()
    flows = solve_flows(model.network, model.injections())
    ratio = np.abs(flows.values) / model.coupling
    if np.any(ratio >= 1):
        e = int(np.argmax(ratio))
        a, b = model.network.edges[e]
        raise InfeasibleSynchronization(f"line {{{a},{b}}} needs |f|/A = {ratio[e]:.6g} >= 1")
    return SteadyState(flows, omega, ratio)


def equilibrium_angles(model: GridModel, flows: FlowAssignment | None = None) -> np.ndarray:
    """Angles reproducing ``flows`` (default: the steady state), first generator at 0."""
    if flows is None:
        flows = steady_state(model).flows
    net = model.network
    root = int(model.generators[0])
    order, parent, parent_edge = net.bfs(root)
    delta = np.zeros(net.n)
    for v in order[1:]:
        p, e = parent[v], parent_edge[v]
        f = flows[(net.nodes[p], net.nodes[v])]
        delta[v] = delta[p] - np.arcsin(f / model.coupling[e])
    return delta


def _newton_tol(P):
    return NEWTON_RTOL * max(1.0, float(np.max(np.abs(P))))


def _check_step(model, dt, droop=None):
    rate = dt * model.stiffness(droop)
    if rate >= STEP_BOUND:
        raise StepTooLarge(f"dt * max(sum A / D) = {rate:.4g} >= {STEP_BOUND}")


def integrate(model: GridModel, state: GridState, dt: float, backend=None) -> GridState:
    """One step: explicit Euler on generator angles, Newton re-solve of load angles."""
    _check_step(model, dt)
    k = backend or kernels.backend
    net = model.network
    eu, ev = _edge_arrays(net)
    order, parent, pedge = load_forest(net)
    delta = state.delta.copy()
    history = np.zeros(NEWTON_MAXIT + 1)
    n_e = len(net.edges)
    done = k.advance(
        1, dt, 1, 0, 1.0, 1.0, 1.0, _newton_tol(model.power), NEWTON_MAXIT,
        eu, ev, model.coupling, net.capacity, np.ones(n_e), np.ones(n_e),
        model.generators.astype(np.intp), order, parent, pedge,
        delta, model.power.copy(), model.droop.copy(), np.zeros(net.n),
        np.zeros(net.n), np.zeros(net.n), np.zeros(net.n, dtype=np.intp), np.zeros(net.n, dtype=np.intp), history,
    )
    if done < 1:
        raise NewtonDivergence(f"load solve failed at t = {state.t + dt:.6g}", _trim(history))
    return GridState.from_angles(model, delta, state.t + dt)


def _trim(history):
    nz = np.flatnonzero(history)
    return list(history[: nz[-1] + 1]) if nz.size else [0.0]


class ClosedLoop:
    """Grid plus per-node estimator and saturation-aware controller.

    Each tick integrates the grid, runs the maximum-downstream-flow estimator
    on the live line flows and, unless ``mode == "none"``, updates generator
    power (``"P"``) or droop (``"D"``).
    """

    def __init__(self, model: GridModel, mode="P", gains=None, dt=1e-3, substeps=4, backend=None, delta=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {sorted(MODES)}, got {mode!r}")
        self.model = model
        self.mode = mode
        self.gains = gains or GainConfig()
        self.dt = float(dt)
        self.substeps = int(substeps)
        self.backend = backend or kernels.backend
        net = model.network
        self.net = net
        if (self.dt / self.substeps) * self.gains.k_phi >= 2:
            raise ValueError("estimator sub-step too large: (dt / substeps) * k_phi must be < 2")
        _check_step(model, self.dt, model.d_min if mode == "D" else None)

        self.beta_hat, self.beta_sweeps = propagate_beta(net)
        self.cf = controllable_mask(net)
        self.eu, self.ev = _edge_arrays(net)
        self.beta_uv = np.array([self.beta_hat[(a, b)] for a, b in net.edges], dtype=float)
        self.beta_vu = np.array([self.beta_hat[(b, a)] for a, b in net.edges], dtype=float)
        self.gens = model.generators.astype(np.intp)
        self.load_order, self.load_parent, self.load_parent_edge = load_forest(net)

        self.P = model.power.copy()
        self.D = np.where(net.is_supplier, model.droop, 0.0)
        self.delta = equilibrium_angles(model) if delta is None else np.asarray(delta, dtype=float).copy()
        self.phi = np.zeros(net.n)
        if mode == "D":
            self.lo, self.hi = model.d_min.copy(), model.d_max.copy()
        else:
            self.lo, self.hi = model.p_min.copy(), model.p_max.copy()
        self.lo = np.nan_to_num(self.lo, nan=-np.inf)
        self.hi = np.nan_to_num(self.hi, nan=np.inf)
        x = self.P if mode != "D" else self.D
        self.gamma = ((self.lo < x) & (x < self.hi)).astype(np.intp)
        self.zeta = np.zeros(net.n, dtype=np.intp)
        self.history = np.zeros(NEWTON_MAXIT + 1)
        self.tick = 0
        self._solve_loads()

    @property
    def t(self) -> float:
        return self.tick * self.dt

    def _tol(self):
        return _newton_tol(self.P)

    def _solve_loads(self):
        it = self.backend.solve_loads(
            self.delta, self.P, self.model.coupling, self.eu, self.ev,
            self.load_order, self.load_parent, self.load_parent_edge, self._tol(), NEWTON_MAXIT, self.history,
        )
        if it < 0:
            raise NewtonDivergence(f"load solve failed at t = {self.t:.6g}", _trim(self.history))

    def advance(self, n_ticks: int = 1) -> None:
        done = self.backend.advance(
            int(n_ticks), self.dt, self.substeps, MODES[self.mode],
            self.gains.k_phi, self.gains.k_P, self.gains.k_P_gamma, self._tol(), NEWTON_MAXIT,
            self.eu, self.ev, self.model.coupling, self.net.capacity, self.beta_uv, self.beta_vu,
            self.gens, self.load_order, self.load_parent, self.load_parent_edge,
            self.delta, self.P, self.D, self.phi, self.lo, self.hi, self.gamma, self.zeta, self.history,
        )
        self.tick += done
        if done < n_ticks:
            raise NewtonDivergence(f"load solve failed at t = {self.t + self.dt:.6g}", _trim(self.history))

    def run_until(self, t: float) -> None:
        n = int(round(t / self.dt)) - self.tick
        if n > 0:
            self.advance(n)

    def set_power(self, node, value: float) -> None:
        """Overwrite ``P`` at ``node`` and re-solve the load angles."""
        i = self.net.index[node]
        self.P[i] = float(value)
        if self.net.is_supplier[i]:
            self.gamma[i] = int(self.lo[i] < self.P[i] < self.hi[i]) if self.mode == "P" else self.gamma[i]
        else:
            self._solve_loads()

    def set_controls(self, powers: dict) -> None:
        for node, value in powers.items():
            self.set_power(node, value)

    def current_model(self) -> GridModel:
        """The model with the live power and droop values."""
        m = self.model.copy()
        m.power = self.P.copy()
        m.droop = np.where(self.net.is_supplier, self.D, 0.0)
        return m

    def state(self) -> GridState:
        return GridState.from_angles(self.model, self.delta, self.t, self.P, self.D)

    def xi(self) -> np.ndarray:
        return line_flows(self.model, self.delta)[0]

    def ratios(self) -> np.ndarray:
        return np.abs(self.xi()) / self.net.capacity

    def j_xi(self) -> float:
        return float(np.max(self.ratios()[self.cf], initial=0.0))

    def phi_spread(self) -> float:
        ph = self.phi[self.gens]
        return float(ph.max() - ph.min())

    def sync_ratio(self) -> float:
        return float(np.max(np.abs(self.xi()) / self.model.coupling))

    def snapshot(self) -> dict:
        st = self.state()
        g = self.gens
        return {
            "t": self.t,
            "J_xi": float(np.max(np.abs(st.xi[self.cf]) / self.net.capacity[self.cf], initial=0.0)),
            "ratios": np.abs(st.xi) / self.net.capacity,
            "P": self.P[g].copy(),
            "D": self.D[g].copy(),
            "phi": self.phi[g].copy(),
            "gamma": self.gamma[g].copy(),
            "zeta": self.zeta[g].copy(),
            "omega": st.omega_inst[g].copy(),
        }


def attach_controller(model: GridModel, mode="P", gains=None, dt=1e-3, substeps=4, backend=None) -> ClosedLoop:
    return ClosedLoop(model, mode=mode, gains=gains, dt=dt, substeps=substeps, backend=backend)
