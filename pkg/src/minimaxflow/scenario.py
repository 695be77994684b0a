"""Scenario configuration, event scheduling, runs and oracle comparison.

A scenario is a YAML document::

    seed: 0
    network:
      nodes:
        - {id: 1, role: generator, P: 10.0, D: 0.2, P_min: 8.0, P_max: 12.0}
        - {id: 2, role: load, P: -4.0}
      edges:
        - {from: 1, to: 2, capacity: 8.0, coupling: 30.0}
    events:
      - {time: 6.0, node: 2, P: -6.0}
    sim:
      T_end: 18.0
      dt: 0.001
      substeps: 4
      output_stride: 0.01
      mode: P
      gains: {k_phi: 200.0, k_P: 40.0, k_P_gamma: 40.0}
      baseline: {enabled: false, resolve_period: 1.0, apply_delay: 1.5}

Optional node fields are ``D_min``/``D_max`` (droop box, default 0.5x and 2x
``D``); ``P_min``/``P_max`` default to 0.8x and 1.2x ``P``. An edge without
``coupling`` gets three times the largest steady line flow of the scenario.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
import yaml

from .distributed import GainConfig
from .errors import ConfigInvalid, InvalidCounts, InvalidNetwork, MinimaxFlowError
from .lp import controllable_mask
from .microgrid import ClosedLoop, GridModel, steady_state
from .network import FlowNetwork, solve_flows

log = logging.getLogger(__name__)

ROLES = ("generator", "load")
COUPLING_FACTOR = 3.0
MATCH_RTOL = 1e-3
SPREAD_TOL = 1e-4


def _plain(value):
    """numpy scalars to builtins so YAML output stays portable."""
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


@dataclass
class NodeSpec:
    id: int
    role: str
    P: float
    D: float | None = None
    P_min: float | None = None
    P_max: float | None = None
    D_min: float | None = None
    D_max: float | None = None

    def to_dict(self):
        return {k: _plain(v) for k, v in asdict(self).items() if v is not None}


@dataclass
class EdgeSpec:
    src: int
    dst: int
    capacity: float
    coupling: float | None = None

    def to_dict(self):
        d = {"from": _plain(self.src), "to": _plain(self.dst), "capacity": _plain(self.capacity)}
        if self.coupling is not None:
            d["coupling"] = _plain(self.coupling)
        return d


@dataclass
class Event:
    time: float
    node: int
    P: float


@dataclass
class Baseline:
    enabled: bool = False
    resolve_period: float = 1.0
    apply_delay: float = 1.5


@dataclass
class SimSpec:
    T_end: float = 18.0
    dt: float = 1e-3
    substeps: int = 4
    output_stride: float = 0.01
    mode: str = "P"
    gains: GainConfig = field(default_factory=GainConfig)
    baseline: Baseline = field(default_factory=Baseline)

    def to_dict(self):
        return {
            "T_end": _plain(self.T_end),
            "dt": _plain(self.dt),
            "substeps": _plain(self.substeps),
            "output_stride": _plain(self.output_stride),
            "mode": self.mode,
            "gains": {k: _plain(v) for k, v in asdict(self.gains).items()},
            "baseline": {k: _plain(v) for k, v in asdict(self.baseline).items()},
        }


@dataclass
class ScenarioConfig:
    nodes: list[NodeSpec]
    edges: list[EdgeSpec]
    events: list[Event] = field(default_factory=list)
    sim: SimSpec = field(default_factory=SimSpec)
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "seed": _plain(self.seed),
            "network": {
                "nodes": [n.to_dict() for n in self.nodes],
                "edges": [e.to_dict() for e in self.edges],
            },
            "events": [{k: _plain(v) for k, v in asdict(e).items()} for e in self.events],
            "sim": self.sim.to_dict(),
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None, width=120)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @property
    def generators(self) -> list[int]:
        return [n.id for n in self.nodes if n.role == "generator"]

    @property
    def loads(self) -> list[int]:
        return [n.id for n in self.nodes if n.role == "load"]


# parsing


def _get(d, key, path, kind=float, default=...):
    if not isinstance(d, dict):
        raise ConfigInvalid(path, "expected a mapping")
    if key not in d or d[key] is None:
        if default is ...:
            raise ConfigInvalid(f"{path}.{key}" if path else key, "missing")
        return default
    v = d[key]
    try:
        if kind is int:
            if isinstance(v, bool) or float(v) != int(v):
                raise ValueError
            return int(v)
        if kind is float:
            if isinstance(v, bool):
                raise ValueError
            out = float(v)
            if not math.isfinite(out):
                raise ValueError
            return out
        if kind is bool:
            if not isinstance(v, bool):
                raise ValueError
            return v
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigInvalid(f"{path}.{key}" if path else key, f"expected {kind.__name__}, got {v!r}") from None


def parse_config(data) -> ScenarioConfig:
    """Build and validate a :class:`ScenarioConfig` from plain data."""
    if not isinstance(data, dict):
        raise ConfigInvalid("", "top level must be a mapping")
    net = data.get("network")
    if not isinstance(net, dict):
        raise ConfigInvalid("network", "missing or not a mapping")
    raw_nodes = net.get("nodes")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ConfigInvalid("network.nodes", "expected a non-empty list")
    nodes = []
    for k, nd in enumerate(raw_nodes):
        p = f"network.nodes[{k}]"
        role = _get(nd, "role", p, str)
        if role not in ROLES:
            raise ConfigInvalid(f"{p}.role", f"must be one of {ROLES}, got {role!r}")
        spec = NodeSpec(_get(nd, "id", p, int), role, _get(nd, "P", p))
        if role == "generator":
            spec.D = _get(nd, "D", p)
            for key, factor in (("P_min", 0.8), ("P_max", 1.2)):
                setattr(spec, key, _get(nd, key, p, default=factor * spec.P))
            for key in ("D_min", "D_max"):
                setattr(spec, key, _get(nd, key, p, default=None))
        nodes.append(spec)
    raw_edges = net.get("edges")
    if not isinstance(raw_edges, list):
        raise ConfigInvalid("network.edges", "expected a list")
    edges = []
    for k, ed in enumerate(raw_edges):
        p = f"network.edges[{k}]"
        edges.append(
            EdgeSpec(_get(ed, "from", p, int), _get(ed, "to", p, int), _get(ed, "capacity", p),
                     _get(ed, "coupling", p, default=None))
        )
    raw_events = data.get("events") or []
    if not isinstance(raw_events, list):
        raise ConfigInvalid("events", "expected a list")
    events = [
        Event(_get(ev, "time", f"events[{k}]"), _get(ev, "node", f"events[{k}]", int), _get(ev, "P", f"events[{k}]"))
        for k, ev in enumerate(raw_events)
    ]
    s = data.get("sim") or {}
    if not isinstance(s, dict):
        raise ConfigInvalid("sim", "expected a mapping")
    g = s.get("gains") or {}
    b = s.get("baseline") or {}
    d = SimSpec()
    try:
        gains = GainConfig(
            _get(g, "k_phi", "sim.gains", default=d.gains.k_phi),
            _get(g, "k_P", "sim.gains", default=d.gains.k_P),
            _get(g, "k_P_gamma", "sim.gains", default=d.gains.k_P_gamma),
        )
    except ValueError as exc:
        raise ConfigInvalid("sim.gains", str(exc)) from None
    sim = SimSpec(
        _get(s, "T_end", "sim", default=d.T_end),
        _get(s, "dt", "sim", default=d.dt),
        _get(s, "substeps", "sim", int, default=d.substeps),
        _get(s, "output_stride", "sim", default=d.output_stride),
        _get(s, "mode", "sim", str, default=d.mode),
        gains,
        Baseline(
            _get(b, "enabled", "sim.baseline", bool, default=False),
            _get(b, "resolve_period", "sim.baseline", default=1.0),
            _get(b, "apply_delay", "sim.baseline", default=1.5),
        ),
    )
    cfg = ScenarioConfig(nodes, edges, events, sim, _get(data, "seed", "", int, default=0))
    validate_config(cfg)
    return cfg


def validate_config(cfg: ScenarioConfig) -> None:
    ids = [n.id for n in cfg.nodes]
    if len(set(ids)) != len(ids):
        raise ConfigInvalid("network.nodes", "duplicate node ids")
    known = set(ids)
    for k, n in enumerate(cfg.nodes):
        p = f"network.nodes[{k}]"
        if n.role == "generator":
            if n.P <= 0:
                raise ConfigInvalid(f"{p}.P", "generator power must be positive")
            if n.D <= 0:
                raise ConfigInvalid(f"{p}.D", "droop coefficient must be positive")
            if not 0 < n.P_min <= n.P_max:
                raise ConfigInvalid(f"{p}.P_min", "need 0 < P_min <= P_max")
            if (n.D_min is None) != (n.D_max is None):
                raise ConfigInvalid(f"{p}.D_min", "give both D_min and D_max or neither")
            if n.D_min is not None and not 0 < n.D_min <= n.D_max:
                raise ConfigInvalid(f"{p}.D_min", "need 0 < D_min <= D_max")
        elif n.P > 0:
            raise ConfigInvalid(f"{p}.P", "load power must be <= 0")
    if len(cfg.generators) < 2:
        raise ConfigInvalid("network.nodes", "need at least two generators")
    if not cfg.loads:
        raise ConfigInvalid("network.nodes", "need at least one load")
    for k, e in enumerate(cfg.edges):
        p = f"network.edges[{k}]"
        for key, v in (("from", e.src), ("to", e.dst)):
            if v not in known:
                raise ConfigInvalid(f"{p}.{key}", f"unknown node {v}")
        if e.capacity <= 0:
            raise ConfigInvalid(f"{p}.capacity", "must be positive")
        if e.coupling is not None and e.coupling <= 0:
            raise ConfigInvalid(f"{p}.coupling", "must be positive")
    try:
        _network(cfg)
    except InvalidNetwork as exc:
        raise ConfigInvalid("network.edges", str(exc)) from None
    last = -math.inf
    roles = {n.id: n.role for n in cfg.nodes}
    for k, ev in enumerate(cfg.events):
        p = f"events[{k}]"
        if ev.time < 0 or ev.time < last:
            raise ConfigInvalid(f"{p}.time", "events must have nonnegative, nondecreasing times")
        last = ev.time
        if ev.node not in known:
            raise ConfigInvalid(f"{p}.node", f"unknown node {ev.node}")
        if roles[ev.node] != "load":
            raise ConfigInvalid(f"{p}.node", "events may only change load power")
        if ev.P > 0:
            raise ConfigInvalid(f"{p}.P", "load power must be <= 0")
    s = cfg.sim
    if s.T_end <= 0:
        raise ConfigInvalid("sim.T_end", "must be positive")
    if s.dt <= 0:
        raise ConfigInvalid("sim.dt", "must be positive")
    if s.substeps < 1:
        raise ConfigInvalid("sim.substeps", "must be >= 1")
    if s.output_stride < s.dt:
        raise ConfigInvalid("sim.output_stride", "must be >= dt")
    if s.mode not in ("P", "D", "none"):
        raise ConfigInvalid("sim.mode", f"must be P, D or none, got {s.mode!r}")
    if s.baseline.apply_delay < 0:
        raise ConfigInvalid("sim.baseline.apply_delay", "must be >= 0")
    if s.baseline.resolve_period <= 0:
        raise ConfigInvalid("sim.baseline.resolve_period", "must be positive")


def loads_config(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid("", f"YAML error: {exc}") from None
    return parse_config(data)


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid("", f"cannot read {path}: {exc}") from None
    return loads_config(text)


# model construction


def _network(cfg: ScenarioConfig) -> FlowNetwork:
    return FlowNetwork(
        [n.id for n in cfg.nodes],
        [(e.src, e.dst) for e in cfg.edges],
        cfg.generators,
        _edge_values(cfg, "capacity"),
    )


def _edge_values(cfg, attr):
    out = {}
    for e in cfg.edges:
        a, b = min(e.src, e.dst), max(e.src, e.dst)
        out[(a, b)] = getattr(e, attr)
    keys = sorted(out)
    return [out[k] for k in keys]


def _node_array(cfg, net, attr, default=np.nan):
    arr = np.full(net.n, default, dtype=float)
    for n in cfg.nodes:
        v = getattr(n, attr)
        if v is not None:
            arr[net.index[n.id]] = v
    return arr


def active_events(cfg: ScenarioConfig) -> list[Event]:
    """Events inside the horizon; later ones are dropped with a warning."""
    out = []
    for ev in cfg.events:
        if ev.time >= cfg.sim.T_end:
            log.warning("event at t=%g (node %d) is at or beyond T_end=%g and is ignored", ev.time, ev.node, cfg.sim.T_end)
        else:
            out.append(ev)
    return out


def windows(cfg: ScenarioConfig) -> list[tuple[float, float]]:
    """Steady windows ``[start, end)`` between consecutive event times."""
    cuts = sorted({ev.time for ev in active_events(cfg) if ev.time > 0})
    edges = [0.0] + cuts + [cfg.sim.T_end]
    return list(zip(edges[:-1], edges[1:]))


def powers_at(cfg: ScenarioConfig, net: FlowNetwork, t: float) -> np.ndarray:
    """Node powers after all events with ``time <= t`` have been applied."""
    P = _node_array(cfg, net, "P")
    for ev in active_events(cfg):
        if ev.time <= t:
            P[net.index[ev.node]] = ev.P
    return P


def build_model(cfg: ScenarioConfig, t: float = 0.0) -> GridModel:
    net = _network(cfg)
    coupling = np.array(_edge_values(cfg, "coupling"), dtype=object)
    if any(c is None for c in coupling):
        default = default_coupling(cfg, net)
        coupling = np.array([default if c is None else c for c in coupling], dtype=float)
    D = _node_array(cfg, net, "D", 0.0)
    return GridModel(
        net, coupling.astype(float), D, powers_at(cfg, net, t),
        _node_array(cfg, net, "P_min"), _node_array(cfg, net, "P_max"),
        np.where(net.is_supplier, _node_array(cfg, net, "D_min"), np.nan) if _has_dbox(cfg) else None,
        np.where(net.is_supplier, _node_array(cfg, net, "D_max"), np.nan) if _has_dbox(cfg) else None,
    )


def _has_dbox(cfg):
    return all(n.D_min is not None for n in cfg.nodes if n.role == "generator")


def default_coupling(cfg: ScenarioConfig, net: FlowNetwork | None = None) -> float:
    """Three times the largest steady line flow over all windows at nominal set-points."""
    net = net or _network(cfg)
    D = _node_array(cfg, net, "D", 0.0)
    biggest = 0.0
    for start, _ in windows(cfg):
        P = powers_at(cfg, net, start)
        omega = P.sum() / D[net.is_supplier].sum()
        m = P - omega * D
        biggest = max(biggest, float(np.max(np.abs(solve_flows(net, m - m.mean()).values))))
    return COUPLING_FACTOR * max(biggest, 1e-9)


# random instances


def generate_random_instance(seed: int, N: int = 12, N_s: int = 4, T_end: float = 8.0) -> ScenarioConfig:
    """Random balanced microgrid on a uniformly random labeled tree.

    Node ids are ``1..N``. Capacities are scaled so that the maximum
    flow/capacity ratio over controllable edges at nominal set-points lies in
    ``[0.3, 0.9]``; edges that supplier choices cannot affect get at least
    1.5x their flow. Generator boxes are 0.8x to 1.2x nominal.
    """
    if not (isinstance(N, int) and isinstance(N_s, int)) or not 2 <= N_s < N:
        raise InvalidCounts(f"need 2 <= N_s < N, got N={N}, N_s={N_s}")
    rng = np.random.default_rng(seed)
    if N == 2:
        tree_edges = [(0, 1)]
    else:
        tree = nx.from_prufer_sequence([int(v) for v in rng.integers(0, N, N - 2)])
        tree_edges = sorted(tree.edges())
    gen = set(int(v) for v in rng.choice(N, N_s, replace=False))
    P = np.zeros(N)
    loads = [v for v in range(N) if v not in gen]
    P[loads] = -rng.uniform(1.0, 5.0, len(loads))
    share = rng.uniform(0.5, 1.5, N_s)
    P[sorted(gen)] = -P.sum() * share / share.sum()
    P = np.round(P, 6)
    P[sorted(gen)[-1]] -= P.sum()

    edges = [(a + 1, b + 1) for a, b in tree_edges]
    net = FlowNetwork(range(1, N + 1), edges, [v + 1 for v in gen], np.ones(N - 1), P)
    f = np.abs(solve_flows(net).values)
    cf = controllable_mask(net)
    j_nom = rng.uniform(0.3, 0.9)
    spread = rng.uniform(0.3, 1.0, N - 1)
    if cf.any():
        spread[int(np.argmax(np.where(cf, spread, -1.0)))] = 1.0
    floor = 0.3 * max(float(f.max()), 1e-6)
    cap = np.where(cf, np.maximum(f, floor) / (j_nom * spread), np.maximum(1.5 * f, floor) * rng.uniform(1.0, 2.0, N - 1))
    cap = np.round(cap, 6)
    coupling = round(COUPLING_FACTOR * float(cap.max()), 6)

    nodes = []
    for v in range(N):
        if v in gen:
            sum_a = coupling * sum(1 for e in edges if v + 1 in e)
            D = round(sum_a / rng.uniform(150.0, 300.0), 6)
            p = float(P[v])
            nodes.append(NodeSpec(v + 1, "generator", p, D, round(0.8 * p, 6), round(1.2 * p, 6)))
        else:
            nodes.append(NodeSpec(v + 1, "load", float(P[v])))
    edge_specs = [EdgeSpec(a, b, float(c), coupling) for (a, b), c in zip(net.edges, cap)]
    sim = SimSpec(T_end=T_end, output_stride=0.05)
    return ScenarioConfig(nodes, edge_specs, [], sim, int(seed))


def with_tight_boxes(cfg: ScenarioConfig, width: float = 0.02) -> ScenarioConfig | None:
    """Copy of ``cfg`` whose boxes exclude the unconstrained optimum for some generator.

    Boxes are ``[1 - width, 1 + width]`` around nominal; returns ``None`` if no
    box binds at the resulting optimum.
    """
    out = loads_config(cfg.dumps())
    for n in out.nodes:
        if n.role == "generator":
            n.P_min = round((1 - width) * n.P, 9)
            n.P_max = round((1 + width) * n.P, 9)
    sol = build_model(out).lp()
    if not sol.optimal or not sol.binding:
        return None
    return out


# running


@dataclass
class WindowSummary:
    start: float
    end: float
    J_steady: float
    J_max: float
    phi_spread: float
    lp_status: str
    J_lp: float
    gap: float

    @property
    def match(self) -> bool:
        return self.lp_status == "optimal" and self.gap <= MATCH_RTOL


@dataclass
class RunReport:
    mode: str
    baseline: bool
    timeseries: str | None
    windows: list[WindowSummary]
    max_J: float
    fault: bool
    verdict: str
    backend: str = ""
    header: list[str] = field(default_factory=list, repr=False)
    rows: list[list[float]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "baseline": self.baseline,
            "timeseries": self.timeseries,
            "max_J_xi": self.max_J,
            "fault": self.fault,
            "verdict": self.verdict,
            "backend": self.backend,
            "windows": [asdict(w) | {"match": w.match} for w in self.windows],
        }

    def summary_text(self) -> str:
        lines = [
            f"mode: {self.mode}{' (delayed centralized baseline)' if self.baseline else ''}",
            f"max J_xi over run: {self.max_J:.6f}",
            f"fault (J_xi >= 1): {'yes' if self.fault else 'no'}",
            "windows:",
        ]
        for w in self.windows:
            lines.append(
                f"  [{w.start:g}, {w.end:g}) steady J={w.J_steady:.6f} max J={w.J_max:.6f} "
                f"LP J*={w.J_lp:.6f} ({w.lp_status}) gap={w.gap:.2e} phi spread={w.phi_spread:.2e}"
            )
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines) + "\n"


def csv_header(net: FlowNetwork) -> list[str]:
    cols = ["t", "J_xi"] + [f"ratio_{a}_{b}" for a, b in net.edges]
    for g in net.suppliers:
        cols += [f"{k}_{g}" for k in ("P", "D", "phi", "gamma", "zeta", "omega")]
    return cols


def _row(snap) -> list[float]:
    row = [snap["t"], snap["J_xi"], *snap["ratios"]]
    for k in range(len(snap["P"])):
        row += [snap["P"][k], snap["D"][k], snap["phi"][k], int(snap["gamma"][k]), int(snap["zeta"][k]), snap["omega"][k]]
    return row


def lp_per_window(cfg: ScenarioConfig) -> list:
    return [build_model(cfg, start).lp() for start, _ in windows(cfg)]


def summarize(cfg: ScenarioConfig, header: list[str], rows: list[list[float]], lps=None, mode="P", baseline=False):
    """Per-window summary from time-series rows; also used to re-derive a report from CSV."""
    lps = lp_per_window(cfg) if lps is None else lps
    col = {name: k for k, name in enumerate(header)}
    t = np.array([r[0] for r in rows])
    J = np.array([r[1] for r in rows])
    phi_cols = [col[c] for c in header if c.startswith("phi_")]
    out = []
    wins = windows(cfg)
    for k, ((start, end), sol) in enumerate(zip(wins, lps)):
        last = k == len(wins) - 1
        sel = np.flatnonzero((t >= start - 1e-12) & ((t <= end + 1e-12) if last else (t < end - 1e-12)))
        i = sel[-1]
        phis = [rows[i][c] for c in phi_cols]
        j_lp = sol.objective if sol.optimal else math.nan
        gap = abs(J[i] - j_lp) / max(j_lp, 1e-9) if sol.optimal else math.nan
        out.append(
            WindowSummary(float(start), float(end), float(J[i]), float(J[sel].max()), float(max(phis) - min(phis)),
                          sol.status, float(j_lp), float(gap))
        )
    max_J = float(J.max())
    fault = bool(max_J >= 1)
    if any(w.lp_status != "optimal" for w in out):
        verdict = "infeasible"
    elif all(w.match for w in out):
        verdict = "match"
    else:
        verdict = "mismatch"
    return out, max_J, fault, verdict


def run_scenario(cfg: ScenarioConfig, out_dir=None, mode: str | None = None, baseline: bool | None = None,
                 backend=None) -> RunReport:
    """Run the closed loop (or the delayed centralized baseline) and write outputs.

    With ``baseline`` the generators are not controlled online; every
    ``resolve_period`` the minimax program is solved on the current loads and
    its set-points are applied ``apply_delay`` later.
    """
    s = cfg.sim
    mode = s.mode if mode is None else mode
    baseline = s.baseline.enabled if baseline is None else baseline
    model = build_model(cfg)
    steady_state(model)
    loop = ClosedLoop(model, mode="none" if baseline else mode, gains=s.gains, dt=s.dt, substeps=s.substeps,
                      backend=backend)
    net = model.network
    dt = s.dt
    n_total = int(round(s.T_end / dt))

    def tick_of(time):
        return int(math.ceil(time / dt - 1e-9))

    actions: dict[int, list] = {}
    for ev in active_events(cfg):
        actions.setdefault(tick_of(ev.time), []).append(("event", ev))
    if baseline:
        k = 0
        while k * s.baseline.resolve_period <= s.T_end + 1e-12:
            actions.setdefault(tick_of(k * s.baseline.resolve_period), []).append(("resolve", None))
            k += 1
    n_rows = int(math.ceil(s.T_end / s.output_stride - 1e-9)) + 1
    row_ticks = sorted({min(int(round(r * s.output_stride / dt)), n_total) for r in range(n_rows - 1)} | {n_total})
    for rt in row_ticks:
        actions.setdefault(rt, []).append(("row", None))

    rows: list[list[float]] = []
    pending: list[tuple[int, dict]] = []
    while True:
        tick = loop.tick
        for kind, payload in sorted(actions.get(tick, []), key=lambda a: ("event", "resolve", "apply", "row").index(a[0])):
            try:
                if kind == "event":
                    loop.set_power(payload.node, payload.P)
                elif kind == "resolve":
                    sol = loop.current_model().lp()
                    if sol.optimal or sol.controls:
                        apply_at = tick + int(round(s.baseline.apply_delay / dt))
                        pending.append((apply_at, sol.controls))
                        actions.setdefault(apply_at, []).append(("apply", None))
                    # an apply due now (zero delay) is handled below
                    _apply_due(loop, pending, tick)
                elif kind == "apply":
                    _apply_due(loop, pending, tick)
                elif kind == "row":
                    rows.append(_row(loop.snapshot()))
            except MinimaxFlowError as exc:
                _stamp(exc, tick * dt)
                raise
        if tick >= n_total:
            break
        nxt = min(k for k in actions if k > tick)
        try:
            loop.advance(nxt - tick)
        except MinimaxFlowError as exc:
            _stamp(exc, loop.t)
            raise

    header = csv_header(net)
    wins, max_J, fault, verdict = summarize(cfg, header, rows, mode=mode, baseline=baseline)
    report = RunReport("baseline" if baseline else mode, baseline, None, wins, max_J, fault, verdict,
                       getattr(loop.backend, "__name__", "").rsplit(".", 1)[-1], header, rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "timeseries.csv"
        write_csv(path, header, rows)
        report.timeseries = str(path)
        (out / "summary.txt").write_text(report.summary_text())
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return report


def _stamp(exc, t):
    """Attach the simulation time to an error message, once."""
    msg = str(exc.args[0]) if exc.args else ""
    if "at t =" not in msg:
        exc.args = (f"{msg} (at t = {t:.6g} s)",) + tuple(exc.args[1:])


def _apply_due(loop, pending, tick):
    due = [p for p in pending if p[0] <= tick]
    for item in due:
        loop.set_controls(item[1])
        pending.remove(item)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def read_csv(path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader]
    return header, rows


def summary_from_csv(cfg: ScenarioConfig, path):
    header, rows = read_csv(path)
    return summarize(cfg, header, rows)


def compare_oracle(cfg: ScenarioConfig, mode: str = "P", backend=None) -> dict:
    """Distributed steady state against the minimax program, window by window."""
    model = build_model(cfg)
    try:
        steady_state(model)
    except MinimaxFlowError as exc:
        return {"verdict": "infeasible", "reason": str(exc), "windows": []}
    report = run_scenario(cfg, mode=mode, baseline=False, backend=backend)
    wins = []
    for w in report.windows:
        dist_status = "infeasible" if w.J_steady >= 1 else "feasible"
        lp_status = "infeasible" if w.lp_status != "optimal" else "feasible"
        wins.append({
            "start": w.start,
            "end": w.end,
            "J_dist": w.J_steady,
            "J_lp": w.J_lp,
            "gap": w.gap,
            "phi_spread": w.phi_spread,
            "lp_status": lp_status,
            "dist_status": dist_status,
            "match": w.match,
        })
    if any(x["lp_status"] == "infeasible" for x in wins):
        verdict = "infeasible" if all(x["dist_status"] == x["lp_status"] for x in wins) else "inconsistent"
    else:
        verdict = "match" if all(x["match"] for x in wins) else "mismatch"
    return {"verdict": verdict, "windows": wins}


def consensus_setpoints(cfg: ScenarioConfig, tol: float = 1e-7, t: float = 0.0):
    """Generator powers at which exact supplier maximum downstream flows agree.

    Runs the unsaturated consensus law on the static flow network (exact
    flows, no grid dynamics, no boxes) from nominal set-points. Returns
    ``(powers, spread, interior)``, where ``interior`` tells whether every
    generator ends strictly inside its box. Loads are taken at time ``t``.
    """
    from .distributed import consensus_commodity

    model = build_model(cfg, t)
    net = model.network.with_commodity(model.injections())
    cf = controllable_mask(net)
    step = 0.5 * float(net.capacity[cf].min()) if cf.any() else 1.0
    m, spread = consensus_commodity(net, k=step, dt=1.0, max_steps=5000, tol=tol)
    g = model.generators
    P = m[g] + model.omega() * model.droop[g]
    interior = bool(spread <= tol and np.all((model.p_min[g] < P) & (P < model.p_max[g])))
    return {net.nodes[i]: float(p) for i, p in zip(g, P)}, spread, interior
