"""
Upwind nonlocal interaction dynamics on a graph.

Edge fields are stored once per unordered edge in the graph's stored orientation k -> l,
the value on l -> k is the negation.
"""
import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from nlielab.energy import KernelSet, PotentialSet, SpeciesState, kernel_table, variational_derivatives
from nlielab.graph_model import Graph

logger = logging.getLogger(__name__)


class CFLViolationError(ValueError):
    pass


class Integrator(enum.Enum):
    EULER = 'euler'
    HEUN = 'heun'

    @staticmethod
    def from_arg(arg):
        if isinstance(arg, Integrator):
            return arg
        if arg == 'euler':
            return Integrator.EULER
        elif arg == 'heun':
            return Integrator.HEUN
        else:
            raise ValueError(f'Unknown integrator "{arg}".')


@dataclass(frozen=True)
class IntegratorConfig:
    """
    :param integrator: euler (default) or heun
    :param cfl_safety: fraction c of the stable step that is used, 0 < c <= 1
    :param dt_max: step used when all velocities vanish, also an upper bound for every step
    :param t_end: final time
    :param record_every: keep every n-th state (checkpoints and the final state are always kept)
    :param checkpoints: times that are hit exactly and always recorded
    """
    integrator: Integrator = Integrator.EULER
    cfl_safety: float = 0.9
    dt_max: float = 0.1
    t_end: float = 1.0
    record_every: int = 1
    checkpoints: tuple = ()
    max_steps: int = 10 ** 7

    def __post_init__(self):
        object.__setattr__(self, 'integrator', Integrator.from_arg(self.integrator))
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f'cfl_safety must be in (0, 1], got {self.cfl_safety}.')
        if not self.dt_max > 0:
            raise ValueError(f'dt_max must be positive, got {self.dt_max}.')
        if self.t_end < 0:
            raise ValueError(f't_end must be non negative, got {self.t_end}.')
        if self.record_every < 1:
            raise ValueError(f'record_every must be at least 1, got {self.record_every}.')
        checkpoints = tuple(sorted(float(t) for t in self.checkpoints if 0 < t < self.t_end))
        object.__setattr__(self, 'checkpoints', checkpoints)

    def targets(self):
        """
        :returns increasing stop times: checkpoints followed by t_end
        """
        return list(self.checkpoints) + [float(self.t_end)]


class EdgeField:
    """
    Antisymmetric per species edge values, shape (N, E), in stored edge orientation.
    """
    def __init__(self, graph: Graph, values):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape[-1] != graph.n_edges:
            raise ValueError(f'Edge field has {values.shape[-1]} values, graph has {graph.n_edges} edges.')
        values.setflags(write=False)
        self.graph = graph
        self.values = values

    @property
    def n_species(self):
        return self.values.shape[0]

    def positive_part(self):
        """
        :returns (N, E) positive part on the stored orientation k -> l
        """
        return np.maximum(self.values, 0.0)

    def negative_part(self):
        """
        :returns (N, E) negative part on k -> l, i.e. the positive part on l -> k
        """
        return np.maximum(-self.values, 0.0)

    def value(self, i, k, l):
        """
        Oriented lookup, 0 if {k, l} is not an edge.
        """
        graph = self.graph
        forward = np.flatnonzero((graph.sources == k) & (graph.targets == l))
        if forward.size:
            return float(self.values[i, forward[0]])
        backward = np.flatnonzero((graph.sources == l) & (graph.targets == k))
        if backward.size:
            return -float(self.values[i, backward[0]])
        return 0.0

    def __mul__(self, factor):
        return type(self)(self.graph, self.values * factor)

    __rmul__ = __mul__

    def __repr__(self):
        return f'{type(self).__name__}(N={self.n_species}, E={self.values.shape[-1]})'


class EdgeVelocityField(EdgeField):
    pass


class EdgeFluxField(EdgeField):
    pass


def nonlocal_gradient(f, edge):
    """
    :returns f(x_l) - f(x_k) for edge (k, l)
    """
    k, l = edge
    f = np.asarray(f)
    return f[..., l] - f[..., k]


def edge_gradient(graph: Graph, f):
    """
    Nonlocal gradient of node fields (..., n) on all stored edges, (..., E).
    """
    f = np.asarray(f, dtype=float)
    return f[..., graph.targets] - f[..., graph.sources]


def upwind_velocity(ks: KernelSet, ps: PotentialSet, state: SpeciesState, graph: Graph, table=None):
    """
    v_i(x, y) = -(phi_i(y) - phi_i(x)) with phi_i the variational derivative of the energy.
    """
    table = table or kernel_table(ks, graph.grid)
    phi = variational_derivatives(ks, ps, state, graph.base, table)
    return EdgeVelocityField(graph, -edge_gradient(graph, phi))


def _edge_mass_products(graph: Graph):
    m = graph.weights
    return m[graph.sources] * m[graph.targets]


def upwind_flux(state: SpeciesState, vel: EdgeVelocityField, graph: Graph):
    """
    j(x_k, x_l) = v_+(x_k, x_l) r_k m_k m_l - v_-(x_k, x_l) r_l m_l m_k
    """
    r = state.densities
    values = (vel.positive_part() * r[:, graph.sources]
              - vel.negative_part() * r[:, graph.targets]) * _edge_mass_products(graph)
    return EdgeFluxField(graph, values)


def nonlocal_divergence(flux: EdgeFluxField, graph: Graph):
    """
    div(x_k) = sum_l eta(x_k, x_l) j(x_k, x_l) over both orientations, shape (N, n).
    d r_k / dt = -div(x_k) / m_k.
    """
    weighted = flux.values * graph.eta
    return graph.sum_at_sources(weighted) - graph.sum_at_targets(weighted)


def outflow_rates(vel: EdgeVelocityField, graph: Graph):
    """
    :returns (N, n) rate_k = sum_l eta(x_k, x_l) v_+(x_k, x_l) m_l, so that mass leaves node k at rate_k r_k m_k
    """
    m = graph.weights
    return (graph.sum_at_sources(graph.eta * vel.positive_part() * m[graph.targets])
            + graph.sum_at_targets(graph.eta * vel.negative_part() * m[graph.sources]))


def stable_dt(state: SpeciesState, vel: EdgeVelocityField, graph: Graph, safety=1.0, dt_max=math.inf):
    """
    dt = safety / max total outflow rate, dt_max if nothing flows out anywhere.
    """
    if not 0 < safety <= 1:
        raise ValueError(f'CFL safety must be in (0, 1], got {safety}.')
    if not np.all(np.isfinite(vel.values)):
        raise ValueError('Velocities must be finite.')
    if graph.n_edges == 0:
        return dt_max
    rate = float(np.max(outflow_rates(vel, graph)))
    if rate <= 0:
        return dt_max
    return safety / rate


def _euler_update(state: SpeciesState, vel: EdgeVelocityField, graph: Graph, dt):
    """
    r'_k = r_k (1 - dt rate_k) + dt inflow_k / m_k, identical to r_k - dt div(x_k) / m_k
    but non negative by construction when dt rate_k <= 1.
    """
    r = state.densities
    m = graph.weights
    mm = _edge_mass_products(graph)
    to_target = graph.eta * vel.positive_part() * r[:, graph.sources] * mm
    to_source = graph.eta * vel.negative_part() * r[:, graph.targets] * mm
    inflow = graph.sum_at_targets(to_target) + graph.sum_at_sources(to_source)
    rate = outflow_rates(vel, graph)
    return SpeciesState(r * np.maximum(0.0, 1.0 - dt * rate) + dt * inflow / m[None, :])


def _check_cfl(state, vel, graph, dt):
    limit = stable_dt(state, vel, graph, safety=1.0)
    if dt > limit * (1 + 1e-12):
        raise CFLViolationError(f'Time step {dt:.6g} exceeds the stability bound {limit:.6g}.')


def step(state: SpeciesState, ks: KernelSet, ps: PotentialSet, graph: Graph, dt, table=None, vel=None):
    """
    One explicit Euler upwind step.

    :param vel: upwind velocity of state, recomputed if not given
    :returns (new state, realized flux, realized velocity)
    :raises CFLViolationError if dt exceeds stable_dt with safety 1
    """
    if dt < 0:
        raise ValueError(f'Time step must be non negative, got {dt}.')
    if vel is None:
        vel = upwind_velocity(ks, ps, state, graph, table)
    _check_cfl(state, vel, graph, dt)
    return _euler_update(state, vel, graph, dt), upwind_flux(state, vel, graph), vel


def heun_step(state: SpeciesState, ks: KernelSet, ps: PotentialSet, graph: Graph, dt, table=None, vel=None):
    """
    Strong stability preserving Heun step, average of the state and two Euler steps.
    The realized flux and velocity are those of the first stage.

    :raises CFLViolationError if either stage violates its stability bound
    """
    first, flux, vel = step(state, ks, ps, graph, dt, table, vel)
    second, _, _ = step(first, ks, ps, graph, dt, table)
    return SpeciesState(0.5 * (state.densities + second.densities)), flux, vel


@dataclass
class Trajectory:
    """
    Recorded states at times t_0 = 0 < ... < t_M together with the realized flux and velocity
    of the first step on [t_m, t_m+1), the integrals of slope and flux action over every step
    of that interval, and per state diagnostics.
    """
    graph: Graph
    times: List[float] = field(default_factory=list)
    states: List[SpeciesState] = field(default_factory=list)
    fluxes: List[EdgeFluxField] = field(default_factory=list)
    velocities: List[EdgeVelocityField] = field(default_factory=list)
    slope_integrals: List[float] = field(default_factory=list)
    action_integrals: List[float] = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    steps: int = 0

    @property
    def grid(self):
        return self.graph.grid

    @property
    def final_state(self):
        return self.states[-1]

    @property
    def final_time(self):
        return self.times[-1]

    def state_at(self, t, tol=1e-12):
        """
        :returns the recorded state at time t (e.g. a checkpoint)
        """
        for time, state in zip(self.times, self.states):
            if abs(time - t) <= tol * max(1.0, abs(t)):
                return state
        raise KeyError(f'No recorded state at t={t}.')

    def masses(self):
        weights = self.graph.weights
        return np.array([state.masses(weights) for state in self.states])


def evolve(initial: SpeciesState, ks: KernelSet, ps: PotentialSet, graph: Graph, t_end=None,
           config: IntegratorConfig = None, table=None, with_diagnostics=True):
    """
    Integrates the upwind system up to t_end with CFL limited explicit steps.

    :param t_end: overrides config.t_end if given
    :param with_diagnostics: compute energy, slope, action and moments for every recorded state
    :returns Trajectory
    """
    config = config or IntegratorConfig()
    if t_end is not None:
        config = dataclasses.replace(config, t_end=t_end)
    initial.check_against(graph.weights)
    # gf_diagnostics builds on this module
    from nlielab.gf_diagnostics import action_density, flux_action
    table = table or kernel_table(ks, graph.grid)
    advance = heun_step if config.integrator == Integrator.HEUN else step

    traj = Trajectory(graph, times=[0.0], states=[initial])
    state, t = initial, 0.0
    since_record = 0
    block_slope = block_action = 0.0
    for target in config.targets():
        while t < target:
            if traj.steps >= config.max_steps:
                raise RuntimeError(f'Step limit {config.max_steps} reached at t={t:.6g}.')
            vel = upwind_velocity(ks, ps, state, graph, table)
            dt = min(stable_dt(state, vel, graph, config.cfl_safety, config.dt_max), config.dt_max, target - t)
            while True:
                try:
                    new_state, flux, vel = advance(state, ks, ps, graph, dt, table, vel)
                    break
                except CFLViolationError:
                    # only the second Heun stage can fail here
                    dt /= 2
                    logger.debug(f'Halving step to {dt:.6g} at t={t:.6g}')
            if since_record == 0:
                traj.fluxes.append(flux)
                traj.velocities.append(vel)
            block_slope += dt * action_density(graph, state, vel)
            block_action += dt * flux_action(graph, state, flux)
            state = new_state
            t = target if target - (t + dt) <= 1e-12 * max(1.0, target) else t + dt
            traj.steps += 1
            since_record += 1
            if since_record >= config.record_every or t == target:
                traj.times.append(t)
                traj.states.append(state)
                traj.slope_integrals.append(block_slope)
                traj.action_integrals.append(block_action)
                block_slope = block_action = 0.0
                since_record = 0
        logger.debug(f'Reached t={t:.6g} after {traj.steps} steps')

    if with_diagnostics:
        from nlielab.gf_diagnostics import trajectory_diagnostics
        traj.diagnostics = trajectory_diagnostics(traj, ks, ps, table)
    logger.info(f'Graph run finished at t={t:.6g}: {traj.steps} steps, {len(traj.states)} recorded states')
    return traj
