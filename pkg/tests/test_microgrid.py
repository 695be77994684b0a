import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minimaxflow.errors import InfeasibleSynchronization, NewtonDivergence, StepTooLarge
from minimaxflow.microgrid import (
    ClosedLoop,
    GridModel,
    GridState,
    equilibrium_angles,
    integrate,
    line_flows,
    load_forest,
    steady_state,
)
from minimaxflow.network import FlowNetwork
from minimaxflow.scenario import build_model, generate_random_instance


def feeder(P=(1.2, -0.5, -0.5), D=(2.0, 0.0, 0.0), A=(5.0, 5.0)):
    """Generator 1 feeding loads 2 and 3 along a path."""
    net = FlowNetwork([1, 2, 3], [(1, 2), (2, 3)], [1], [2.0, 2.0])
    nan = np.nan
    return GridModel(net, A, D, P, [0.5, nan, nan], [2.0, nan, nan])


def two_generators(P=(0.3, -0.3), D=(1.0, 1.0), A=1.0):
    net = FlowNetwork([1, 2], [(1, 2)], [1, 2], [1.0])
    return GridModel(net, [A], D, P, [-1.0, -1.0], [1.0, 1.0])


def load_residual(model, delta):
    _, inj = line_flows(model, delta)
    return np.max(np.abs((model.power - inj)[model.loads]))


class TestSteadyState:
    def test_single_generator_example(self):
        flows, omega = steady_state(feeder())
        assert omega == pytest.approx(0.1)
        assert flows[(1, 2)] == pytest.approx(1.0, abs=1e-12)
        assert flows[(2, 3)] == pytest.approx(0.5, abs=1e-12)

    def test_balanced_power_gives_zero_frequency(self):
        assert steady_state(feeder(P=(1.0, -0.5, -0.5))).omega == 0.0

    def test_weak_line_cannot_synchronize(self):
        with pytest.raises(InfeasibleSynchronization):
            steady_state(feeder(A=(0.9, 5.0)))

    def test_sync_ratio(self):
        ss = steady_state(feeder())
        np.testing.assert_allclose(ss.sync_ratio, [0.2, 0.1])

    def test_equilibrium_reproduces_flows(self):
        model = feeder()
        xi, _ = line_flows(model, equilibrium_angles(model))
        np.testing.assert_allclose(xi, [1.0, 0.5], atol=1e-12)


class TestIntegrate:
    def test_equilibrium_is_fixed_point(self):
        model = feeder(P=(1.0, -0.5, -0.5))
        state = GridState.from_angles(model, equilibrium_angles(model))
        start = state.delta.copy()
        for _ in range(200):
            state = integrate(model, state, 1e-3)
        assert np.linalg.norm(state.delta - start) <= 1e-9

    def test_rotating_equilibrium_keeps_differences(self):
        model = feeder()
        state = GridState.from_angles(model, equilibrium_angles(model))
        start = state.delta.copy()
        for _ in range(100):
            state = integrate(model, state, 1e-3)
        np.testing.assert_allclose(state.delta - state.delta[0], start - start[0], atol=1e-9)
        assert state.delta[0] == pytest.approx(0.1 * 0.1, rel=1e-9)

    def test_two_node_monotone_decay(self):
        model = two_generators()
        target = np.arcsin(0.3)
        state = GridState.from_angles(model, [0.0, 0.0])
        errs = []
        for _ in range(10000):
            state = integrate(model, state, 1e-3)
            errs.append(abs(state.delta[0] - state.delta[1] - target))
        assert all(b <= a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-6

    def test_load_step_settles_to_new_steady_state(self):
        model = feeder(P=(1.0, -0.5, -0.5))
        state = GridState.from_angles(model, equilibrium_angles(model))
        stepped = feeder(P=(1.0, -0.5, -0.7))
        for _ in range(5000):
            state = integrate(stepped, state, 1e-3)
        ss = steady_state(stepped)
        np.testing.assert_allclose(state.xi, ss.flows.values, atol=1e-8)

    def test_loads_solved_every_step(self):
        model = feeder()
        state = GridState.from_angles(model, [0.3, 0.0, 0.0])
        for _ in range(20):
            state = integrate(model, state, 1e-3)
            assert load_residual(model, state.delta) <= 1e-8

    def test_step_bound(self):
        model = feeder()
        with pytest.raises(StepTooLarge):
            integrate(model, GridState.from_angles(model, np.zeros(3)), 0.5)

    def test_overloaded_load_diverges(self):
        model = feeder(P=(3.0, -1.0, -2.0), A=(5.0, 1.0))
        with pytest.raises(NewtonDivergence) as info:
            integrate(model, GridState.from_angles(model, np.zeros(3)), 1e-3)
        assert len(info.value.residuals) >= 1

    def test_instantaneous_frequency(self):
        model = feeder()
        state = GridState.from_angles(model, equilibrium_angles(model))
        assert state.omega_inst[0] == pytest.approx(0.1)
        assert np.isnan(state.omega_inst[1:]).all()

    @settings(max_examples=20)
    @given(seed=st.integers(0, 10_000))
    def test_frequencies_synchronize(self, seed):
        model = build_model(generate_random_instance(seed))
        rng = np.random.default_rng(seed)
        delta = equilibrium_angles(model) + rng.uniform(-0.05, 0.05, model.network.n)
        state = GridState.from_angles(model, delta)
        for _ in range(3000):
            state = integrate(model, state, 1e-3)
        om = state.omega_inst[model.generators]
        assert np.ptp(om) <= 1e-6
        assert om.mean() == pytest.approx(model.omega(), abs=1e-6)


class TestLoadForest:
    def test_children_before_parents(self):
        model = build_model(generate_random_instance(3, N=20, N_s=5))
        order, parent, _ = load_forest(model.network)
        pos = {v: k for k, v in enumerate(order)}
        assert set(order) == set(model.loads)
        for v in order:
            if parent[v] >= 0:
                assert pos[v] < pos[parent[v]]
                assert not model.network.is_supplier[parent[v]]


class TestClosedLoop:
    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            ClosedLoop(feeder(), mode="Q")

    def test_rejects_unstable_estimator_substep(self):
        with pytest.raises(ValueError):
            ClosedLoop(feeder(), dt=1e-2, substeps=1)

    def test_starts_at_steady_flows(self):
        model = build_model(generate_random_instance(1))
        loop = ClosedLoop(model, mode="none")
        ss = steady_state(model)
        np.testing.assert_allclose(loop.xi(), ss.flows.values, atol=1e-9)

    def test_no_control_keeps_setpoints(self):
        model = build_model(generate_random_instance(2))
        loop = ClosedLoop(model, mode="none")
        loop.run_until(0.5)
        np.testing.assert_array_equal(loop.P, model.power)
        assert loop.t == pytest.approx(0.5)

    def test_estimates_match_exact_at_rest(self):
        from minimaxflow.downstream import analyze

        model = build_model(generate_random_instance(4))
        loop = ClosedLoop(model, mode="none")
        loop.run_until(1.0)
        net = model.network.with_commodity(model.injections())
        exact = analyze(net)[1].supplier_phi(net)
        np.testing.assert_allclose(loop.phi[model.generators], exact, atol=1e-6)

    def test_power_mode_keeps_box_and_reduces_spread(self):
        model = build_model(generate_random_instance(5))
        loop = ClosedLoop(model, mode="P")
        loop.run_until(0.3)
        early = loop.phi_spread()
        loop.run_until(6.0)
        g = model.generators
        assert np.all(loop.P[g] >= model.p_min[g]) and np.all(loop.P[g] <= model.p_max[g])
        assert loop.phi_spread() <= early + 1e-9

    def test_droop_mode_keeps_box(self):
        model = build_model(generate_random_instance(6))
        loop = ClosedLoop(model, mode="D", dt=5e-4)
        loop.run_until(3.0)
        g = model.generators
        assert np.all(loop.D[g] >= model.d_min[g]) and np.all(loop.D[g] <= model.d_max[g])
        np.testing.assert_array_equal(loop.P, model.power)

    def test_load_change_resolves_angles(self):
        model = build_model(generate_random_instance(7))
        loop = ClosedLoop(model, mode="none")
        load = model.network.nodes[int(model.loads[0])]
        loop.set_power(load, 1.1 * loop.P[model.loads[0]])
        assert load_residual(loop.current_model(), loop.delta) <= 1e-8

    def test_snapshot_fields(self):
        model = build_model(generate_random_instance(8))
        snap = ClosedLoop(model, mode="P").snapshot()
        assert set(snap) == {"t", "J_xi", "ratios", "P", "D", "phi", "gamma", "zeta", "omega"}
        assert snap["P"].shape == (len(model.generators),)
