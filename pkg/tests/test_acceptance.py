"""Acceptance criteria, each at its stated tolerance.

Every test records one ``criterion N: PASS/FAIL ...`` line; the lines are
repeated in the terminal summary. Run this file directly to execute only
these checks.
"""

import logging
import time

import numpy as np
import pytest

from minimaxflow.cli import default_scenario
from minimaxflow.distributed import estimate_phi, propagate_beta
from minimaxflow.downstream import analyze, controllable_edges, dag_depth, phi_recursive, supplier_indicators
from minimaxflow.microgrid import ClosedLoop, equilibrium_angles, steady_state
from minimaxflow.network import incidence_matrix, leaf_elimination_oracle, solve_flows
from minimaxflow.scenario import (
    build_model,
    compare_oracle,
    consensus_setpoints,
    generate_random_instance,
    load_config,
    run_scenario,
    with_tight_boxes,
)

from conftest import perturb_suppliers, random_network, record_criterion

log = logging.getLogger("minimaxflow.acceptance")

RTOL_J = 1e-3


def instances(seed, count, n_max, n_min=3):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield rng, random_network(rng, int(rng.integers(n_min, n_max + 1)))


@pytest.fixture(scope="module")
def bundled_runs():
    cfg = load_config(default_scenario())
    return {
        "P": run_scenario(cfg, mode="P", baseline=False),
        "D": run_scenario(cfg, mode="D", baseline=False),
        "baseline": run_scenario(cfg, baseline=True),
    }


class TestAcceptance:
    def test_criterion_1_flow_oracle(self):
        start = time.perf_counter()
        worst_gap = worst_res = 0.0
        for _, net in instances(1, 500, 50, n_min=2):
            f = solve_flows(net, method="pinv").values
            worst_gap = max(worst_gap, float(np.max(np.abs(f - leaf_elimination_oracle(net).values))))
            worst_res = max(worst_res, float(np.max(np.abs(incidence_matrix(net) @ f - net.commodity))))
        elapsed = time.perf_counter() - start
        ok = worst_gap <= 1e-10 and worst_res <= 1e-10 and elapsed < 10
        record_criterion(1, ok, f"500 trees: max |f_pinv - f_leaf| = {worst_gap:.2e}, max residual = {worst_res:.2e}, {elapsed:.1f} s")
        assert ok

    def test_criterion_2_uncontrollable_flows_fixed(self):
        worst = 0.0
        for rng, net in instances(2, 200, 30):
            view = controllable_edges(net, solve_flows(net))
            fixed = np.array([e not in view.controllable_edges for e in net.edges])
            base = solve_flows(net).values[fixed]
            for _ in range(100):
                moved = solve_flows(net, perturb_suppliers(rng, net)).values[fixed]
                if moved.size:
                    worst = max(worst, float(np.max(np.abs(moved - base))))
        ok = worst <= 1e-10
        record_criterion(2, ok, f"200 instances x 100 perturbations: max change outside controllable set = {worst:.2e}")
        assert ok

    def test_criterion_3_downstream_union(self):
        bad = 0
        for _, net in instances(3, 1000, 40):
            view, report = analyze(net)
            union = set().union(*(report.downstream[s] for s in net.suppliers))
            bad += union != view.directed_controllable
        record_criterion(3, bad == 0, f"1000 instances: {bad} with union of supplier downstreams != oriented controllable set")
        assert bad == 0

    def test_criterion_4_critical_cluster(self):
        rng = np.random.default_rng(4)
        checked = missing = 0
        while checked < 200:
            net = random_network(rng, int(rng.integers(4, 31)))
            _, report = analyze(net)
            if np.all(report.supplier_phi(net) > 0):
                checked += 1
                missing += len(report.critical_clusters) < 1
        record_criterion(4, missing == 0, f"200 instances with all supplier phi > 0: {missing} without a critical consumer cluster")
        assert missing == 0

    def test_criterion_5_estimator_and_indicators(self):
        k_phi, h = 200.0, 2.5e-4
        worst = 0.0
        sweep_bad = beta_bad = 0
        for _, net in instances(5, 200, 30):
            beta, sweeps = propagate_beta(net)
            sweep_bad += sweeps > net.n - 2
            beta_bad += beta != supplier_indicators(net)
            flows = solve_flows(net)
            view = controllable_edges(net, flows)
            t_end = 10 * dag_depth(view, net.nodes) / k_phi
            est = estimate_phi(net, flows, k_phi, t_end, h, beta=beta)
            exact = phi_recursive(net, view, flows)
            worst = max(worst, max(abs(est[v] - exact[v]) for v in net.nodes))
        ok = worst <= 1e-6 and sweep_bad == 0 and beta_bad == 0
        record_criterion(
            5, ok,
            f"200 instances: max |phi_hat - phi| at t = 10 depth / k_phi = {worst:.2e}; "
            f"sweeps > N-2: {sweep_bad}; indicator mismatches: {beta_bad}",
        )
        assert ok

    def test_criterion_6_consensus_reaches_optimum(self):
        start = time.perf_counter()
        seed = matched = checked = 0
        failures = []
        while checked < 100:
            cfg = generate_random_instance(seed)
            if consensus_setpoints(cfg)[2]:
                checked += 1
                rec = compare_oracle(cfg)
                w = rec["windows"][0] if rec["windows"] else None
                if w and rec["verdict"] == "match" and w["phi_spread"] <= 1e-4:
                    matched += 1
                else:
                    failures.append(seed)
            seed += 1
        elapsed = time.perf_counter() - start
        ok = matched == 100 and elapsed < 120
        record_criterion(
            6, ok,
            f"{matched}/100 non-binding instances reach phi spread <= 1e-4 and J within {RTOL_J:g} of the optimum "
            f"({seed} seeds drawn, {elapsed:.1f} s)" + (f"; failing seeds {failures}" if failures else ""),
        )
        assert ok

    def test_criterion_7_saturated_regime(self):
        seed = matched = checked = 0
        failures = []
        while checked < 100:
            cfg = with_tight_boxes(generate_random_instance(seed), 0.05)
            if cfg is not None:
                checked += 1
                rec = compare_oracle(cfg)
                if rec["verdict"] == "match":
                    matched += 1
                else:
                    gap = rec["windows"][0]["gap"] if rec["windows"] else float("nan")
                    failures.append(seed)
                    log.warning("saturated regime: seed %d does not match the optimum (%s, gap %.3g)", seed, rec["verdict"], gap)
            seed += 1
        ok = matched >= 95
        record_criterion(
            7, ok,
            f"{matched}/100 tight-box instances within {RTOL_J:g} of the optimum (need >= 95); "
            f"non-matching seeds: {failures}",
        )
        assert ok

    def test_criterion_8_grid_steady_state(self):
        worst_flow = worst_freq = 0.0
        for seed in range(20):
            model = build_model(generate_random_instance(1000 + seed))
            rng = np.random.default_rng(seed)
            delta = equilibrium_angles(model) + rng.uniform(-0.1, 0.1, model.network.n)
            loop = ClosedLoop(model, mode="none", delta=delta)
            loop.run_until(20.0)
            ss = steady_state(model)
            st = loop.state()
            worst_flow = max(worst_flow, float(np.max(np.abs(st.xi - ss.flows.values))))
            worst_freq = max(worst_freq, float(np.max(np.abs(st.omega_inst[model.generators] - ss.omega))))
        ok = worst_flow <= 1e-6 and worst_freq <= 1e-6
        record_criterion(8, ok, f"20 grids: max |xi - f| = {worst_flow:.2e}, max |d delta/dt - omega| = {worst_freq:.2e}")
        assert ok

    def test_criterion_9_distributed_beats_delayed_baseline(self, bundled_runs):
        dist, base = bundled_runs["P"], bundled_runs["baseline"]
        step = 1
        peak_d, peak_b = dist.windows[step].J_max, base.windows[step].J_max
        gaps = [abs(a.J_steady - b.J_steady) / b.J_steady for a, b in zip(dist.windows, base.windows)]
        ok = peak_d < peak_b and max(gaps) <= RTOL_J
        record_criterion(
            9, ok,
            f"step-window peak J: distributed {peak_d:.4f} < baseline {peak_b:.4f}; "
            f"steady J per window {[round(w.J_steady, 5) for w in dist.windows]} vs "
            f"{[round(w.J_steady, 5) for w in base.windows]} (max rel gap {max(gaps):.1e})",
        )
        assert ok

    def test_criterion_10_droop_mode_matches_power_mode(self, bundled_runs):
        p, d = bundled_runs["P"], bundled_runs["D"]
        gaps = [abs(a.J_steady - b.J_steady) / a.J_steady for a, b in zip(p.windows, d.windows)]
        ok = max(gaps) <= RTOL_J
        record_criterion(10, ok, f"steady J, D mode vs P mode, max rel gap over windows = {max(gaps):.1e}")
        assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
