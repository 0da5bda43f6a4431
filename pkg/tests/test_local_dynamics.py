import math

import numpy as np
import pytest

from nlielab.energy import KernelSet, PotentialSet, SpeciesState, build_potential, gaussian_kernel, \
    quadratic_kernel, zero_kernel
from nlielab.graph_dynamics import CFLViolationError, IntegratorConfig
from nlielab.graph_model import SpatialGrid, build_base_measure, lebesgue_measure
from nlielab.limit_harness import initial_data
from nlielab.local_dynamics import InterfaceFlux, LocalState, LocalTrajectory, TensorSource, chain_rule_residual, \
    evolve_local, heun_step_local, interface_flux, interface_velocities, local_action, local_de_giorgi_residual, \
    local_slope, local_velocity, shift, stable_dt_local, step_local
from nlielab.tensor_field import TensorField


def _two_cells():
    grid = SpatialGrid(1, ((-0.5, 1.5),), (2,), periodic=False)
    return grid, TensorField.identity(grid), KernelSet.single(quadratic_kernel(0.5)), PotentialSet.zeros(1)


def test_tensor_source_from_arg():
    assert TensorSource.from_arg('epsilon_graph') == TensorSource.EPSILON_GRAPH
    assert TensorSource.from_arg(TensorSource.IDENTITY) == TensorSource.IDENTITY
    with pytest.raises(ValueError):
        TensorSource.from_arg('graph')


def test_shift_reads_zero_outside_bounded_boxes():
    bounded = SpatialGrid(1, ((0, 1),), (4,), periodic=False)
    ring = SpatialGrid(1, ((0, 1),), (4,))
    values = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(shift(values, bounded, 0, 1), [2.0, 3.0, 4.0, 0.0])
    np.testing.assert_array_equal(shift(values, bounded, 0, -1), [0.0, 1.0, 2.0, 3.0])
    np.testing.assert_array_equal(shift(values, ring, 0, 1), [2.0, 3.0, 4.0, 1.0])

    grid = SpatialGrid(2, ((0, 1), (0, 1)), (2, 3), periodic=False)
    np.testing.assert_array_equal(shift(np.arange(6.0), grid, 1, 1), [1.0, 2.0, 0.0, 4.0, 5.0, 0.0])


def test_two_cell_step():
    grid, tensor, ks, ps = _two_cells()
    state = LocalState([[0.75, 0.25]])
    np.testing.assert_allclose(local_velocity(ks, ps, state, grid)[0, :, 0], [0.25, -0.75])
    np.testing.assert_allclose(interface_velocities(tensor, local_velocity(ks, ps, state, grid))[0, 0], [-0.25, 0.0])
    np.testing.assert_allclose(interface_flux(state, tensor, local_velocity(ks, ps, state, grid)).values[0, 0],
                               [-0.0625, 0.0])

    new, flux, _ = step_local(state, ks, ps, tensor, 1.0)
    np.testing.assert_allclose(flux.values[0, 0], [-0.0625, 0.0])
    np.testing.assert_allclose(new.densities, [[0.8125, 0.1875]])
    np.testing.assert_allclose(flux.cell_centered()[0, :, 0], [-0.03125, -0.03125])
    assert stable_dt_local(state, ks, ps, tensor) == pytest.approx(4.0)
    with pytest.raises(CFLViolationError):
        step_local(state, ks, ps, tensor, 5.0)


def test_two_cell_chain_rule_residual():
    grid, tensor, ks, ps = _two_cells()
    traj = evolve_local(LocalState([[0.75, 0.25]]), ks, ps, tensor, t_end=1.0,
                        config=IntegratorConfig(dt_max=1.0))
    assert traj.steps == 1
    np.testing.assert_allclose(traj.final_state.densities, [[0.8125, 0.1875]])
    assert chain_rule_residual(traj, ks, ps) == pytest.approx(1 / 512)
    assert traj.power_integrals == pytest.approx([-1 / 64])


def test_chain_rule_residual_sees_the_potentials():
    grid, lstate = _gaussian_blob(64)
    ks = KernelSet.single(quadratic_kernel(0.5))
    ps = PotentialSet([build_potential('cos(3 * x)', 1)])
    traj = evolve_local(lstate, ks, ps, TensorField.identity(grid), t_end=0.1, config=IntegratorConfig(dt_max=0.01))
    with pytest.raises(TypeError):
        chain_rule_residual(traj, ks)
    assert chain_rule_residual(traj, ks, ps) != pytest.approx(chain_rule_residual(traj, ks, PotentialSet.zeros(1)))


@pytest.mark.parametrize('integrator', ['euler', 'heun'])
def test_local_residuals_do_not_depend_on_record_every(integrator):
    grid, lstate = _gaussian_blob(64)
    ks = KernelSet.single(quadratic_kernel(0.5))
    ps = PotentialSet.zeros(1)
    tensor = TensorField.identity(grid)
    runs = [evolve_local(lstate, ks, ps, tensor, config=IntegratorConfig(integrator=integrator, t_end=0.2,
                                                                         dt_max=0.01, record_every=n))
            for n in (1, 10)]
    assert runs[0].steps == runs[1].steps == 20
    fine, coarse = (local_de_giorgi_residual(traj, ks, ps) for traj in runs)
    assert coarse == pytest.approx(fine, rel=1e-8, abs=1e-14)
    assert runs[1].diagnostics[-1].de_giorgi == pytest.approx(fine, rel=1e-8, abs=1e-14)
    assert sum(runs[1].power_integrals) == pytest.approx(sum(runs[0].power_integrals), rel=1e-8, abs=1e-14)
    # the coarse run sees a subset of the recorded times
    assert chain_rule_residual(runs[1], ks, ps) <= chain_rule_residual(runs[0], ks, ps) + 1e-12


def test_local_residuals_are_first_order():
    ks = KernelSet.single(quadratic_kernel(0.5))
    ps = PotentialSet.zeros(1)
    de_giorgi, chain_rule = [], []
    for cells in (128, 256, 512, 1024):
        grid, lstate = _gaussian_blob(cells)
        # dt proportional to the cell size
        config = IntegratorConfig(cfl_safety=1.0, dt_max=0.5 * grid.spacing[0], t_end=0.25, record_every=10 ** 6)
        traj = evolve_local(lstate, ks, ps, TensorField.identity(grid), config=config, with_diagnostics=False)
        de_giorgi.append(abs(local_de_giorgi_residual(traj, ks, ps)))
        chain_rule.append(chain_rule_residual(traj, ks, ps))
    for residuals in (de_giorgi, chain_rule):
        for coarse, fine in zip(residuals, residuals[1:]):
            assert coarse / fine >= 1.8


def _gaussian_blob(cells=512):
    grid = SpatialGrid(1, ((-1.2, 1.2),), (cells,), periodic=False)
    _, lstate = initial_data(['exp(-x1^2 / (2 * 0.09))'], lebesgue_measure(grid))
    return grid, lstate


def _variance(lstate, grid):
    x = grid.centers[:, 0]
    rho = lstate.densities[0] * grid.cell_volume
    mean = np.sum(rho * x)
    return float(np.sum(rho * (x - mean) ** 2))


def test_local_velocity_of_quadratic_attraction():
    grid, lstate = _gaussian_blob(64)
    ks = KernelSet.single(quadratic_kernel(0.5))
    ps = PotentialSet.zeros(1)
    x = grid.centers[:, 0]
    mean = float(np.sum(lstate.densities[0] * x) * grid.cell_volume)
    velocity = local_velocity(ks, ps, lstate, grid)
    np.testing.assert_allclose(velocity[0, :, 0], -(x - mean), atol=1e-12)

    tensor = TensorField.identity(grid)
    slope = local_slope(lstate, ks, ps, tensor)
    assert slope == pytest.approx(_variance(lstate, grid))
    assert local_action(lstate, lstate.densities[:, :, None] * velocity, tensor) == pytest.approx(slope)

    tensor = TensorField.constant(grid, [[4.0]])
    flux = lstate.densities[:, :, None] * tensor.apply(velocity)
    assert local_action(lstate, flux, tensor) == pytest.approx(local_slope(lstate, ks, ps, tensor))


def test_action_of_flux_from_empty_cells():
    grid = SpatialGrid(1, ((0, 1),), (2,))
    tensor = TensorField.identity(grid)
    state = LocalState([[2.0, 0.0]])
    assert local_action(state, np.array([[[0.0], [0.1]]]), tensor) == math.inf
    assert local_action(state, np.array([[[0.5], [0.0]]]), tensor) == pytest.approx(0.0625)


def test_variance_contracts_exponentially():
    grid, lstate = _gaussian_blob()
    ks = KernelSet.single(quadratic_kernel(0.5))
    checkpoints = (0.25, 0.5, 0.75)
    config = IntegratorConfig(t_end=1.0, checkpoints=checkpoints, record_every=10 ** 6)
    traj = evolve_local(lstate, ks, PotentialSet.zeros(1), TensorField.identity(grid), config=config,
                        with_diagnostics=False)
    v0 = _variance(lstate, grid)
    for t in checkpoints + (1.0,):
        assert _variance(traj.state_at(t), grid) == pytest.approx(v0 * math.exp(-2 * t), rel=5e-2)
    np.testing.assert_allclose(traj.final_state.total_masses(grid), 1.0, atol=1e-12)


@pytest.mark.slow
def test_variance_contraction_rate_scales_with_the_tensor():
    # the blob shrinks to a few cells by t = 1, so compare decay rates on a fine grid
    grid, lstate = _gaussian_blob(2048)
    ks = KernelSet.single(quadratic_kernel(0.5))
    checkpoints = (0.125, 0.25, 0.5)
    config = IntegratorConfig(t_end=1.0, checkpoints=checkpoints, record_every=10 ** 6)
    traj = evolve_local(lstate, ks, PotentialSet.zeros(1), TensorField.constant(grid, [[4.0]]), config=config,
                        with_diagnostics=False)
    v0 = _variance(lstate, grid)
    for t in checkpoints + (1.0,):
        rate = -math.log(_variance(traj.state_at(t), grid) / v0) / (2 * t)
        assert rate == pytest.approx(4.0, rel=5e-2)


def test_frozen_local_trajectory():
    grid, lstate = _gaussian_blob(64)
    ks = KernelSet.single(quadratic_kernel(0.5))
    ps = PotentialSet.zeros(1)
    tensor = TensorField.identity(grid)
    zero = InterfaceFlux(grid, np.zeros((1, 1, 64)))
    traj = LocalTrajectory(grid, tensor, times=[0.0, 0.3], states=[lstate, lstate], fluxes=[zero])
    slope = local_slope(lstate, ks, ps, tensor)
    assert local_de_giorgi_residual(traj, ks, ps, tensor) == pytest.approx(0.15 * slope)


def test_zero_interaction_keeps_the_state():
    grid, lstate = _gaussian_blob(64)
    ks = KernelSet.single(zero_kernel())
    traj = evolve_local(lstate, ks, PotentialSet.zeros(1), TensorField.identity(grid), t_end=0.5,
                        config=IntegratorConfig(dt_max=0.1))
    assert traj.steps == 5
    np.testing.assert_array_equal(traj.final_state.densities, lstate.densities)
    assert all(record.slope == 0 for record in traj.diagnostics)


def test_two_dimensional_run_conserves_mass():
    grid = SpatialGrid(2, ((0, 1), (0, 1)), (16, 16))
    base = lebesgue_measure(grid)
    ks = KernelSet([[gaussian_kernel(1, 0.2), quadratic_kernel(0.1)], [quadratic_kernel(0.1), zero_kernel()]])
    _, lstate = initial_data(['exp(-((x1 - 0.4)^2 + (x2 - 0.5)^2) / 0.02)', '1 + 0.5 * sin(2 * pi * x2)'], base)
    tensor = TensorField.constant(grid, [[2.0, 0.3], [0.3, 1.0]])
    traj = evolve_local(lstate, ks, PotentialSet.zeros(2), tensor, t_end=0.05,
                        config=IntegratorConfig(integrator='heun', dt_max=0.01))
    for state in traj.states:
        np.testing.assert_allclose(state.total_masses(grid), 1.0, atol=1e-12)
        assert state.min_density() >= 0
    energies = [record.energy for record in traj.diagnostics]
    assert energies[-1] < energies[0]


def test_heun_local_step_is_conservative():
    grid, lstate = _gaussian_blob(64)
    ks = KernelSet.single(gaussian_kernel(1, 0.3))
    tensor = TensorField.identity(grid)
    dt = 0.5 * stable_dt_local(lstate, ks, PotentialSet.zeros(1), tensor)
    new, flux, _ = heun_step_local(lstate, ks, PotentialSet.zeros(1), tensor, dt)
    assert new.total_masses(grid)[0] == pytest.approx(1.0, abs=1e-12)
    assert flux.values.shape == (1, 1, 64)
    # the upper boundary is closed
    assert flux.values[0, 0, -1] == 0


def test_evolve_local_rejects_bad_inputs():
    grid, lstate = _gaussian_blob(64)
    ks = KernelSet.single(zero_kernel())
    with pytest.raises(ValueError):
        evolve_local(lstate, ks, PotentialSet.zeros(1), TensorField.constant(grid, [[-1.0]]), t_end=0.1)
    with pytest.raises(ValueError):
        evolve_local(LocalState(2 * lstate.densities), ks, PotentialSet.zeros(1), TensorField.identity(grid),
                     t_end=0.1)


def test_from_graph_state_converts_to_lebesgue_density():
    grid = SpatialGrid(1, ((0, 1),), (4,), periodic=False)
    base = build_base_measure(grid, '1 + x1')
    graph_state, lstate = initial_data(['1'], base)
    np.testing.assert_allclose(LocalState.from_graph_state(graph_state, base).densities, lstate.densities)
    np.testing.assert_allclose(graph_state.masses(base.weights), [1.0])
    assert isinstance(graph_state, SpeciesState)
