"""
Upwind finite volume solver for the tensor weighted local interaction system

    d/dt rho_i + div(rho_i T v_i) = 0,   v_i = -grad(dE/drho_i),

on the same grid as the graph solver, with the local gradient flow diagnostics.
Interface velocities are the mean of the adjacent cell values of T v, interface fluxes are upwinded
per axis, boundaries of bounded boxes carry zero flux.
"""
import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from nlielab.energy import KernelSet, PotentialSet, SpeciesState, energy, kernel_table, second_moments
from nlielab.gf_diagnostics import DiagnosticsRecord
from nlielab.graph_dynamics import CFLViolationError, Integrator, IntegratorConfig
from nlielab.graph_model import SpatialGrid, lebesgue_measure
from nlielab.tensor_field import TensorField

logger = logging.getLogger(__name__)

# cells below this fraction of the maximal density count as empty in the action
DENSITY_THRESHOLD = 1e-14


class TensorSource(enum.Enum):
    IDENTITY = 'identity'
    FROM_CONNECTIVITY = 'from_connectivity'
    EPSILON_GRAPH = 'epsilon_graph'

    @staticmethod
    def from_arg(arg):
        if isinstance(arg, TensorSource):
            return arg
        for source in TensorSource:
            if arg == source.value:
                return source
        raise ValueError(f'Unknown tensor source "{arg}".')


class LocalState(SpeciesState):
    """
    Cell densities rho_i(x_k) >= 0 with respect to Lebesgue measure, shape (N, n).
    """
    @classmethod
    def from_graph_state(cls, state: SpeciesState, base):
        """
        Lebesgue densities of a state given with respect to the base measure.
        """
        return cls(state.densities * base.density[None, :])

    def cell_masses(self, grid: SpatialGrid):
        return self.densities * grid.cell_volume

    def total_masses(self, grid: SpatialGrid):
        return self.densities.sum(axis=1) * grid.cell_volume


class InterfaceFlux:
    """
    Normal flux through the upper interface of every cell per axis, values of shape (d, N, n).
    Entry [a, i, k] is the flux of species i from cell k to its upper neighbour along axis a,
    zero on the boundary of a bounded box.
    """
    def __init__(self, grid: SpatialGrid, values):
        values = np.array(values, dtype=float)
        if values.ndim != 3 or values.shape[0] != grid.dim or values.shape[2] != grid.n_nodes:
            raise ValueError(f'Interface flux must have shape (d, N, n), got {values.shape}.')
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @property
    def n_species(self):
        return self.values.shape[1]

    def cell_centered(self):
        """
        :returns (N, n, d) average of the two interface fluxes of each cell per axis
        """
        out = np.empty((self.n_species, self.grid.n_nodes, self.grid.dim))
        for a in range(self.grid.dim):
            upper = self.values[a]
            lower = shift(upper, self.grid, a, -1)
            out[:, :, a] = 0.5 * (upper + lower)
        return out

    def __mul__(self, factor):
        return InterfaceFlux(self.grid, self.values * factor)

    __rmul__ = __mul__


def shift(values, grid: SpatialGrid, axis, offset):
    """
    Values of the neighbour at index + offset along axis, (..., n) -> (..., n).
    On bounded boxes neighbours outside the grid read 0.
    """
    values = np.asarray(values)
    lead = values.shape[:-1]
    shaped = values.reshape(lead + grid.cells)
    ax = len(lead) + axis
    rolled = np.roll(shaped, -offset, axis=ax)
    if not grid.periodic:
        index = [slice(None)] * rolled.ndim
        index[ax] = slice(-offset, None) if offset > 0 else slice(None, -offset)
        rolled[tuple(index)] = 0
    return rolled.reshape(values.shape)


def _upper_boundary(grid: SpatialGrid, axis):
    """
    Cells whose upper interface along axis is the box boundary.
    """
    if grid.periodic:
        return np.zeros(grid.n_nodes, dtype=bool)
    return grid.multi_indices[:, axis] == grid.cells[axis] - 1


def local_velocity(ks: KernelSet, ps: PotentialSet, lstate: LocalState, grid: SpatialGrid, table=None):
    """
    v_i(x_k) = -grad P_i(x_k) - sum_j sum_b grad_x K_ij(x_k, x_b) rho_jb |cell|

    :returns (N, n, d)
    """
    if lstate.n_nodes != grid.n_nodes:
        raise ValueError(f'State has {lstate.n_nodes} cells, grid has {grid.n_nodes}.')
    table = table or kernel_table(ks, grid)
    masses = lstate.cell_masses(grid)
    out = np.zeros((lstate.n_species, grid.n_nodes, grid.dim))
    for i in range(lstate.n_species):
        if not ps[i].is_zero:
            out[i] -= ps[i].grad(grid.centers)
        for j in range(lstate.n_species):
            out[i] -= table.convolve_grad(i, j, masses[j])
    return out


def interface_velocities(tensor: TensorField, velocity):
    """
    :param velocity: (N, n, d) cell velocities
    :returns (d, N, n) normal velocities on the upper interfaces, mean of T v in the adjacent cells
    """
    grid = tensor.grid
    tv = tensor.apply(velocity)
    out = np.empty((grid.dim,) + velocity.shape[:2])
    for a in range(grid.dim):
        component = tv[:, :, a]
        u = 0.5 * (component + shift(component, grid, a, 1))
        u[:, _upper_boundary(grid, a)] = 0.0
        out[a] = u
    return out


def interface_flux(lstate: LocalState, tensor: TensorField, velocity):
    """
    F = u_+ rho_left - u_- rho_right on every upper interface.
    """
    grid = tensor.grid
    u = interface_velocities(tensor, velocity)
    rho = lstate.densities
    values = np.empty_like(u)
    for a in range(grid.dim):
        values[a] = np.maximum(u[a], 0) * rho - np.maximum(-u[a], 0) * shift(rho, grid, a, 1)
    return InterfaceFlux(grid, values)


def _rates(u, grid: SpatialGrid):
    """
    (N, n) outflow rates sum_a (u_+(k + 1/2) + u_-(k - 1/2)) / h_a
    """
    rate = np.zeros(u.shape[1:])
    for a in range(grid.dim):
        rate += (np.maximum(u[a], 0) + shift(np.maximum(-u[a], 0), grid, a, -1)) / grid.spacing[a]
    return rate


def stable_dt_local(lstate: LocalState, ks: KernelSet, ps: PotentialSet, tensor: TensorField, safety=1.0,
                    dt_max=math.inf, table=None, velocity=None):
    """
    dt = safety / max outflow rate, dt_max if nothing moves.
    """
    if not 0 < safety <= 1:
        raise ValueError(f'CFL safety must be in (0, 1], got {safety}.')
    if velocity is None:
        velocity = local_velocity(ks, ps, lstate, tensor.grid, table)
    rate = float(np.max(_rates(interface_velocities(tensor, velocity), tensor.grid)))
    if rate <= 0:
        return dt_max
    return safety / rate


def step_local(lstate: LocalState, ks: KernelSet, ps: PotentialSet, tensor: TensorField, dt, table=None,
               velocity=None):
    """
    One conservative upwind Euler step.

    :returns (new state, interface flux, cell velocity)
    :raises CFLViolationError if dt exceeds the stability bound
    """
    if dt < 0:
        raise ValueError(f'Time step must be non negative, got {dt}.')
    grid = tensor.grid
    if velocity is None:
        velocity = local_velocity(ks, ps, lstate, grid, table)
    u = interface_velocities(tensor, velocity)
    rate = _rates(u, grid)
    max_rate = float(np.max(rate))
    if max_rate > 0 and dt > (1 + 1e-12) / max_rate:
        raise CFLViolationError(f'Time step {dt:.6g} exceeds the stability bound {1 / max_rate:.6g}.')

    rho = lstate.densities
    inflow = np.zeros_like(rho)
    for a in range(grid.dim):
        from_lower = shift(np.maximum(u[a], 0) * rho, grid, a, -1)
        from_upper = np.maximum(-u[a], 0) * shift(rho, grid, a, 1)
        inflow += (from_lower + from_upper) / grid.spacing[a]
    new = LocalState(rho * np.maximum(0.0, 1.0 - dt * rate) + dt * inflow)
    return new, interface_flux(lstate, tensor, velocity), velocity


def heun_step_local(lstate: LocalState, ks: KernelSet, ps: PotentialSet, tensor: TensorField, dt, table=None,
                    velocity=None):
    first, flux, velocity = step_local(lstate, ks, ps, tensor, dt, table, velocity)
    second, _, _ = step_local(first, ks, ps, tensor, dt, table)
    return LocalState(0.5 * (lstate.densities + second.densities)), flux, velocity


@dataclass
class LocalTrajectory:
    grid: SpatialGrid
    tensor: TensorField
    times: List[float] = field(default_factory=list)
    states: List[LocalState] = field(default_factory=list)
    fluxes: List[InterfaceFlux] = field(default_factory=list)
    velocities: list = field(default_factory=list)
    slope_integrals: List[float] = field(default_factory=list)
    action_integrals: List[float] = field(default_factory=list)
    power_integrals: List[float] = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    steps: int = 0

    @property
    def final_state(self):
        return self.states[-1]

    def state_at(self, t, tol=1e-12):
        for time, state in zip(self.times, self.states):
            if abs(time - t) <= tol * max(1.0, abs(t)):
                return state
        raise KeyError(f'No recorded state at t={t}.')


def local_energy(ks: KernelSet, ps: PotentialSet, lstate: LocalState, grid: SpatialGrid, table=None):
    return energy(ks, ps, lstate, lebesgue_measure(grid), table or kernel_table(ks, grid))


def evolve_local(initial: LocalState, ks: KernelSet, ps: PotentialSet, tensor: TensorField, t_end=None,
                 config: IntegratorConfig = None, table=None, with_diagnostics=True):
    """
    Integrates the local system to t_end with CFL limited explicit steps.

    :raises ValueError if the tensor field is not positive definite
    """
    config = config or IntegratorConfig()
    if t_end is not None:
        config = dataclasses.replace(config, t_end=t_end)
    grid = tensor.grid
    failures = tensor.spd_failures()
    if failures.size:
        raise ValueError(f'Tensor field is not positive definite at {failures.size} nodes, first node {failures[0]}.')
    masses = initial.total_masses(grid)
    if np.any(np.abs(masses - 1) > 1e-8):
        raise ValueError(f'Species masses must be 1, got {masses.tolist()}.')
    table = table or kernel_table(ks, grid)
    advance = heun_step_local if config.integrator == Integrator.HEUN else step_local

    traj = LocalTrajectory(grid, tensor, times=[0.0], states=[initial])
    state, t = initial, 0.0
    since_record = 0
    block = np.zeros(3)
    for target in config.targets():
        while t < target:
            if traj.steps >= config.max_steps:
                raise RuntimeError(f'Step limit {config.max_steps} reached at t={t:.6g}.')
            velocity = local_velocity(ks, ps, state, grid, table)
            dt = min(stable_dt_local(state, ks, ps, tensor, config.cfl_safety, config.dt_max, velocity=velocity),
                     config.dt_max, target - t)
            while True:
                try:
                    new_state, flux, velocity = advance(state, ks, ps, tensor, dt, table, velocity)
                    break
                except CFLViolationError:
                    dt /= 2
                    logger.debug(f'Halving local step to {dt:.6g} at t={t:.6g}')
            if since_record == 0:
                traj.fluxes.append(flux)
                traj.velocities.append(velocity)
            block += dt * np.array([local_slope(state, ks, ps, tensor, table, velocity),
                                    local_action(state, flux, tensor), _power(velocity, flux, grid)])
            state = new_state
            t = target if target - (t + dt) <= 1e-12 * max(1.0, target) else t + dt
            traj.steps += 1
            since_record += 1
            if since_record >= config.record_every or t == target:
                traj.times.append(t)
                traj.states.append(state)
                traj.slope_integrals.append(float(block[0]))
                traj.action_integrals.append(float(block[1]))
                traj.power_integrals.append(float(block[2]))
                block = np.zeros(3)
                since_record = 0

    if with_diagnostics:
        traj.diagnostics = local_trajectory_diagnostics(traj, ks, ps, table)
    logger.info(f'Local run finished at t={t:.6g}: {traj.steps} steps, {len(traj.states)} recorded states')
    return traj


def local_slope(lstate: LocalState, ks: KernelSet, ps: PotentialSet, tensor: TensorField, table=None, velocity=None):
    """
    sum_i sum_k <v_i, T v_i>(x_k) rho_ik |cell|
    """
    grid = tensor.grid
    if velocity is None:
        velocity = local_velocity(ks, ps, lstate, grid, table)
    quad = np.einsum('ika,ika->ik', velocity, tensor.apply(velocity))
    return float(np.sum(quad * lstate.densities) * grid.cell_volume)


def local_action(lstate: LocalState, flux, tensor: TensorField, threshold=DENSITY_THRESHOLD):
    """
    sum_i int <T^-1 j/rho, j/rho> drho with the cell centred flux j.

    :param flux: InterfaceFlux (reconstructed by interface averaging) or cell centred (N, n, d) array
    :returns +inf if a cell below the density threshold carries flux
    """
    grid = tensor.grid
    j = flux.cell_centered() if isinstance(flux, InterfaceFlux) else np.asarray(flux, dtype=float)
    rho = lstate.densities
    cutoff = threshold * float(np.max(rho)) if rho.size else 0.0
    empty = rho <= cutoff
    carrying = np.any(j != 0, axis=-1)
    if np.any(empty & carrying):
        return math.inf
    quad = np.einsum('ika,kab,ikb->ik', j, tensor.inverse(), j)
    return float(np.sum(np.where(empty, 0.0, quad / np.where(empty, 1.0, rho))) * grid.cell_volume)


def local_interval_dissipation(ltraj: LocalTrajectory, m, ks: KernelSet, ps: PotentialSet, table=None):
    """
    Integrals over the recorded interval [t_m, t_m+1) of the local slope, the realized local action and
    the power sum_i sum_k grad phi_i . j_i |cell|.

    Runs from evolve_local carry them summed over every step of the interval. Trajectories assembled by hand
    fall back to the left endpoint value times the interval length.
    :returns (slope integral, action integral, power integral)
    """
    if len(ltraj.slope_integrals) == len(ltraj.fluxes):
        return ltraj.slope_integrals[m], ltraj.action_integrals[m], ltraj.power_integrals[m]
    grid = ltraj.grid
    dt = ltraj.times[m + 1] - ltraj.times[m]
    state = ltraj.states[m]
    flux = ltraj.fluxes[m]
    velocity = ltraj.velocities[m] if m < len(ltraj.velocities) else local_velocity(ks, ps, state, grid, table)
    return (dt * local_slope(state, ks, ps, ltraj.tensor, table, velocity),
            dt * local_action(state, flux, ltraj.tensor),
            dt * _power(velocity, flux, grid))


def _power(velocity, flux, grid: SpatialGrid):
    return -float(np.sum(velocity * flux.cell_centered())) * grid.cell_volume


def local_de_giorgi_residual(ltraj: LocalTrajectory, ks: KernelSet, ps: PotentialSet, tensor: TensorField = None,
                             table=None):
    """
    E(T) - E(0) + 1/2 sum over all steps dt (local slope + realized local action), a left Riemann sum per step.

    :param tensor: tensor the dissipation is measured with, the tensor of the run if omitted
    """
    tensor = ltraj.tensor if tensor is None else tensor
    grid = tensor.grid
    table = table or kernel_table(ks, grid)
    if len(ltraj.states) < 2:
        return 0.0
    if tensor is not ltraj.tensor:
        ltraj = dataclasses.replace(ltraj, tensor=tensor, slope_integrals=[], action_integrals=[],
                                    power_integrals=[])
    total = local_energy(ks, ps, ltraj.states[-1], grid, table) - local_energy(ks, ps, ltraj.states[0], grid, table)
    for m in range(len(ltraj.fluxes)):
        slope, action, _ = local_interval_dissipation(ltraj, m, ks, ps, table)
        total += 0.5 * (slope + action)
    return total


def chain_rule_residual(ltraj: LocalTrajectory, ks: KernelSet, ps: PotentialSet, table=None):
    """
    max over recorded times t_m of |E(t_m) - E(0) - int_0^t_m sum_i sum_k grad phi_i . j_i |cell| dt|
    with phi_i the variational derivative and j_i the cell centred realized flux, integrated step by step.

    :param ps: potentials the run was made with
    """
    grid = ltraj.grid
    table = table or kernel_table(ks, grid)
    if len(ltraj.states) < 2:
        return 0.0
    e0 = local_energy(ks, ps, ltraj.states[0], grid, table)
    integral = 0.0
    worst = 0.0
    for m in range(len(ltraj.fluxes)):
        integral += local_interval_dissipation(ltraj, m, ks, ps, table)[2]
        worst = max(worst, abs(local_energy(ks, ps, ltraj.states[m + 1], grid, table) - e0 - integral))
    return worst


def local_trajectory_diagnostics(ltraj: LocalTrajectory, ks: KernelSet, ps: PotentialSet, table=None):
    grid = ltraj.grid
    tensor = ltraj.tensor
    table = table or kernel_table(ks, grid)
    records = []
    e0 = None
    running = 0.0
    for m, (t, state) in enumerate(zip(ltraj.times, ltraj.states)):
        e = local_energy(ks, ps, state, grid, table)
        velocity = ltraj.velocities[m] if m < len(ltraj.velocities) else None
        slope = local_slope(state, ks, ps, tensor, table, velocity)
        action = local_action(state, ltraj.fluxes[m], tensor) if m < len(ltraj.fluxes) else slope
        if e0 is None:
            e0 = e
        elif e > records[-1].energy + 1e-8 * (1 + abs(records[-1].energy)):
            logger.warning(f'Local energy increased at t={t:.6g}: {records[-1].energy:.10g} -> {e:.10g}')
        records.append(DiagnosticsRecord(
            time=float(t), energy=e, slope=slope, action=action, de_giorgi=e - e0 + running,
            masses=tuple(state.total_masses(grid)),
            second_moments=tuple(second_moments(state, grid.centers, np.full(grid.n_nodes, grid.cell_volume))),
            min_density=state.min_density()))
        if m < len(ltraj.fluxes):
            slope_integral, action_integral, _ = local_interval_dissipation(ltraj, m, ks, ps, table)
            running += 0.5 * (slope_integral + action_integral)
    return records
