import numpy as np
import pytest

from nlielab.energy import KernelSet, PotentialSet, SpeciesState, build_potential, gaussian_kernel, \
    quadratic_kernel, zero_kernel
from nlielab.graph_dynamics import CFLViolationError, EdgeFluxField, EdgeVelocityField, Integrator, \
    IntegratorConfig, edge_gradient, evolve, heun_step, nonlocal_divergence, nonlocal_gradient, outflow_rates, \
    stable_dt, step, upwind_flux, upwind_velocity
from nlielab.graph_model import BaseMeasure, Graph, SpatialGrid, build_graph, indicator_ball


def _pair(length, eta):
    base = BaseMeasure(SpatialGrid(1, ((0, length),), (2,), periodic=False), np.ones(2))
    return Graph.from_edges(base, [(0, 1)], [eta])


def test_integrator_from_arg():
    assert Integrator.from_arg('heun') == Integrator.HEUN
    assert IntegratorConfig(integrator='euler').integrator == Integrator.EULER
    with pytest.raises(ValueError):
        Integrator.from_arg('rk4')
    with pytest.raises(ValueError):
        IntegratorConfig(cfl_safety=1.5)
    assert IntegratorConfig(t_end=1.0, checkpoints=(0.5, 0.25, 2.0)).targets() == [0.25, 0.5, 1.0]


def test_nonlocal_gradient():
    assert nonlocal_gradient([1.0, 4.0, 9.0], (0, 2)) == 8.0
    graph = _pair(1.0, 1.0)
    np.testing.assert_array_equal(edge_gradient(graph, [[1.0, 4.0], [2.0, -1.0]]), [[3.0], [-3.0]])


def test_velocity_points_down_the_potential(two_node_graph, single):
    graph = two_node_graph()
    ks, ps = single(zero_kernel(), build_potential('x^2', 1))
    vel = upwind_velocity(ks, ps, SpeciesState([[0.5, 0.5]]), graph)
    assert vel.value(0, 0, 1) == pytest.approx(-1)
    assert vel.value(0, 1, 0) == pytest.approx(1)


def test_upwind_flux_and_divergence():
    graph = _pair(0.2, 1.0)
    state = SpeciesState([[0.5, 0.5]])

    flux = upwind_flux(state, EdgeVelocityField(graph, [2.0]), graph)
    assert flux.value(0, 0, 1) == pytest.approx(0.01)
    assert flux.value(0, 1, 0) == pytest.approx(-0.01)
    flux = upwind_flux(state, EdgeVelocityField(graph, [-2.0]), graph)
    assert flux.value(0, 0, 1) == pytest.approx(-0.01)

    np.testing.assert_allclose(nonlocal_divergence(EdgeFluxField(graph, [0.3]), graph), [[0.3, -0.3]])


def test_flux_uses_the_upwind_density():
    graph = _pair(0.2, 1.0)
    state = SpeciesState([[1.0, 0.0]])
    assert upwind_flux(state, EdgeVelocityField(graph, [-2.0]), graph).value(0, 0, 1) == 0
    assert upwind_flux(state, EdgeVelocityField(graph, [2.0]), graph).value(0, 0, 1) == pytest.approx(0.02)


def test_stable_dt():
    state = SpeciesState([[1.0, 1.0]])
    graph = _pair(0.25, 24.0)
    vel = EdgeVelocityField(graph, [1.0])
    assert stable_dt(state, vel, graph, safety=0.5) == pytest.approx(1 / 6)
    graph = _pair(0.25, 48.0)
    assert stable_dt(state, EdgeVelocityField(graph, [1.0]), graph, safety=0.5) == pytest.approx(1 / 12)
    assert stable_dt(state, EdgeVelocityField(graph, [0.0]), graph, dt_max=0.3) == 0.3
    with pytest.raises(ValueError):
        stable_dt(state, vel, graph, safety=0)


def test_euler_step(two_node_graph, single):
    graph = two_node_graph(density=0.5)
    ks, ps = single(zero_kernel(), build_potential('x', 1))
    state = SpeciesState([[0.0, 2.0]])

    new, flux, vel = step(state, ks, ps, graph, 0.5)
    np.testing.assert_allclose(new.densities, [[0.5, 1.5]])
    assert flux.value(0, 0, 1) == pytest.approx(-0.5)
    assert vel.value(0, 0, 1) == pytest.approx(-1)
    np.testing.assert_allclose(new.masses(graph.weights), [1.0])

    with pytest.raises(CFLViolationError):
        step(state, ks, ps, graph, 2.5)


def test_full_cfl_step_empties_the_node(two_node_graph, single):
    graph = two_node_graph(density=0.5)
    ks, ps = single(zero_kernel(), build_potential('x', 1))
    new, _, _ = step(SpeciesState([[0.0, 2.0]]), ks, ps, graph, 2.0)
    np.testing.assert_allclose(new.densities, [[2.0, 0.0]])


def test_symmetric_state_is_stationary(two_node_graph, single):
    graph = two_node_graph()
    ks, ps = single(quadratic_kernel(1))
    state = SpeciesState([[0.5, 0.5]])
    new, flux, _ = step(state, ks, ps, graph, 1.0)
    np.testing.assert_array_equal(new.densities, state.densities)
    assert flux.value(0, 0, 1) == 0


def test_heun_step_rejects_large_steps(two_node_graph, single):
    graph = two_node_graph(density=0.5)
    ks, ps = single(zero_kernel(), build_potential('x', 1))
    state = SpeciesState([[0.0, 2.0]])
    new, _, _ = heun_step(state, ks, ps, graph, 0.5)
    np.testing.assert_allclose(new.masses(graph.weights), [1.0])
    with pytest.raises(CFLViolationError):
        heun_step(state, ks, ps, graph, 3.0)


def _two_species_ring(torus):
    bm = torus(512)
    graph = build_graph(bm, indicator_ball(3, 1), 1 / 64)
    ks = KernelSet([[gaussian_kernel(1, 0.1), quadratic_kernel(0.5)], [quadratic_kernel(0.5), zero_kernel()]])
    ps = PotentialSet([build_potential('zero', 1), build_potential('cos(2 * pi * x)', 1)])
    x = bm.positions[:, 0]
    state = SpeciesState.from_profiles([np.exp(-((x - 0.3) / 0.05) ** 2), 1 + 0.9 * np.sin(6 * np.pi * x)],
                                       bm.weights)
    return graph, ks, ps, state


@pytest.mark.slow
def test_mass_and_positivity_over_many_steps(torus):
    graph, ks, ps, state = _two_species_ring(torus)
    initial = state.masses(graph.weights)
    for _ in range(1000):
        vel = upwind_velocity(ks, ps, state, graph)
        state, _, _ = step(state, ks, ps, graph, stable_dt(state, vel, graph, 0.9), vel=vel)
        assert state.min_density() >= 0
    np.testing.assert_allclose(state.masses(graph.weights), initial, atol=1e-10)


def test_evolve_records_checkpoints(torus):
    graph, ks, ps, state = _two_species_ring(torus)
    config = IntegratorConfig(integrator='heun', t_end=0.002, checkpoints=(0.0005, 0.001), record_every=10 ** 6,
                              dt_max=1e-4)
    traj = evolve(state, ks, ps, graph, config=config)
    assert traj.times == [0.0, 0.0005, 0.001, 0.002]
    assert len(traj.fluxes) == len(traj.velocities) == len(traj.states) - 1
    assert traj.steps == 20
    assert traj.state_at(0.001) is traj.states[2]
    with pytest.raises(KeyError):
        traj.state_at(0.0015)
    np.testing.assert_allclose(traj.masses(), 1.0, atol=1e-12)
    assert len(traj.diagnostics) == len(traj.states)
    energies = [record.energy for record in traj.diagnostics]
    assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))


def test_evolve_with_t_end_override(two_node_graph, single):
    graph = two_node_graph(density=0.5)
    ks, ps = single(zero_kernel(), build_potential('x', 1))
    traj = evolve(SpeciesState([[0.0, 2.0]]), ks, ps, graph, t_end=1.0,
                  config=IntegratorConfig(dt_max=0.25, cfl_safety=1.0))
    assert traj.final_time == 1.0
    assert traj.steps == 4
    # node 1 loses the fraction dt / 2 of its mass per step
    np.testing.assert_allclose(traj.final_state.densities, [[2 - 2 * 0.875 ** 4, 2 * 0.875 ** 4]])


def test_evolve_rejects_unnormalised_state(two_node_graph, single):
    graph = two_node_graph()
    ks, ps = single(quadratic_kernel(1))
    with pytest.raises(ValueError):
        evolve(SpeciesState([[1.0, 1.0]]), ks, ps, graph, t_end=0.1)


def test_outflow_rates_follow_the_velocity_sign():
    graph = _pair(0.25, 24.0)
    np.testing.assert_allclose(outflow_rates(EdgeVelocityField(graph, [1.0]), graph), [[3.0, 0.0]])
    np.testing.assert_allclose(outflow_rates(EdgeVelocityField(graph, [-1.0]), graph), [[0.0, 3.0]])


@pytest.mark.parametrize('relabel, potential', [
    (lambda k, n: (k + 5) % n, 'zero'),
    (lambda k, n: n - 1 - k, 'cos(2 * pi * x)'),
])
def test_evolution_commutes_with_ring_symmetries(torus, relabel, potential):
    # shifts and reflections of the ring map the graph onto itself
    bm = torus(64)
    graph = build_graph(bm, indicator_ball(3, 1), 1 / 16)
    cross = quadratic_kernel(0.5)
    ks = KernelSet([[gaussian_kernel(1, 0.1), cross], [cross, zero_kernel()]])
    ps = PotentialSet([build_potential(potential, 1), build_potential('zero', 1)])
    x = bm.positions[:, 0]
    state = SpeciesState.from_profiles([np.exp(-((x - 0.3) / 0.1) ** 2), 1 + 0.5 * np.sin(2 * np.pi * x)],
                                       bm.weights)
    perm = np.array([relabel(k, 64) for k in range(64)])
    # node perm[k] of the relabelled state carries node k of the original
    moved = np.empty_like(state.densities)
    moved[:, perm] = state.densities
    config = IntegratorConfig(t_end=0.02, dt_max=0.002)
    original = evolve(state, ks, ps, graph, config=config, with_diagnostics=False)
    relabelled = evolve(SpeciesState(moved), ks, ps, graph, config=config, with_diagnostics=False)
    np.testing.assert_allclose(relabelled.final_state.densities[:, perm], original.final_state.densities,
                               rtol=1e-9, atol=1e-12)
