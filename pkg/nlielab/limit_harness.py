"""
epsilon sweeps comparing the graph dynamics with the local tensor weighted dynamics.
"""
import asyncio
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from nlielab import utils
from nlielab.energy import KernelSet, KernelTable, PotentialSet, SpeciesState
from nlielab.expression import Expression, coordinate_env, coordinate_names, parse_expression
from nlielab.gf_diagnostics import de_giorgi_residual, first_variation_form
from nlielab.graph_dynamics import IntegratorConfig, evolve
from nlielab.graph_model import BaseMeasure, Connectivity, SpatialGrid, build_graph, evaluate_on_points
from nlielab.local_dynamics import (LocalState, TensorSource, evolve_local, local_de_giorgi_residual)
from nlielab.tensor_field import (TensorField, epsilon_tensor_field, limit_tensor_field, tensor_error)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ('epsilon', 'species', 'distance_T', 'tensor_err', 'degiorgi_graph', 'degiorgi_local', 'l_eps_err',
               'runtime_s')


class MassMismatchError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


def w1_distance_1d(a, b, grid: SpatialGrid, tol=1e-8):
    """
    1-Wasserstein distance of two Lebesgue cell densities on a line, sum |A - B| h with A, B the
    cumulative masses. Periodic grids are cut at their lower bound.

    :raises MassMismatchError if the masses differ by more than tol
    """
    if grid.dim != 1:
        raise ValueError(f'w1_distance_1d needs a 1D grid, got dimension {grid.dim}.')
    h = float(grid.spacing[0])
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (grid.n_nodes,) or b.shape != (grid.n_nodes,):
        raise GridMismatchError(f'Densities of shape {a.shape} and {b.shape} do not live on {grid.n_nodes} cells.')
    cdf_a = np.cumsum(a) * h
    cdf_b = np.cumsum(b) * h
    if abs(cdf_a[-1] - cdf_b[-1]) > tol:
        raise MassMismatchError(f'Mass mismatch {cdf_a[-1]:.12g} vs {cdf_b[-1]:.12g}.')
    return float(np.sum(np.abs(cdf_a - cdf_b)) * h)


def l1_distance(a, b, grid: SpatialGrid):
    """
    1/2 int |a - b| dx of cell densities.
    """
    return 0.5 * float(np.sum(np.abs(np.asarray(a) - np.asarray(b)))) * grid.cell_volume


def compare_states(state: SpeciesState, base: BaseMeasure, lstate: LocalState, grid: SpatialGrid):
    """
    Per species distance of a graph state (densities with respect to the base measure) and a local state:
    W1 on lines, half the L1 distance of cell densities in 2D.

    :raises GridMismatchError if the states do not live on the same grid
    """
    if base.grid != grid:
        raise GridMismatchError(f'Graph state lives on {base.grid}, local state on {grid}.')
    if state.densities.shape != lstate.densities.shape:
        raise GridMismatchError(f'State shapes differ: {state.densities.shape} vs {lstate.densities.shape}.')
    lebesgue = state.densities * base.density[None, :]
    if grid.dim == 1:
        return [w1_distance_1d(lebesgue[i], lstate.densities[i], grid) for i in range(state.n_species)]
    return [l1_distance(lebesgue[i], lstate.densities[i], grid) for i in range(state.n_species)]


def initial_data(profiles: Sequence, base: BaseMeasure):
    """
    Normalises Lebesgue density profiles f_i to unit mass.

    :param profiles: per species expression, expression string in x1..xd, callable or array
    :returns (graph state r_i = f_i / (density * mass_i), local state rho_i = f_i / mass_i)
    """
    grid = base.grid
    values = []
    for i, profile in enumerate(profiles):
        f = evaluate_on_points(profile, grid.centers)
        if np.any(f < 0) or not np.all(np.isfinite(f)):
            raise ValueError(f'Initial profile of species {i + 1} must be finite and non negative.')
        mass = float(np.sum(f)) * grid.cell_volume
        if mass <= 0:
            raise ValueError(f'Initial profile of species {i + 1} has no mass.')
        values.append(f / mass)
    rho = np.stack(values)
    return SpeciesState(rho / base.density[None, :]), LocalState(rho)


def limit_first_variation(lstate: LocalState, tensor: TensorField, grad_phi, grad_psi):
    """
    sum_i int grad phi . T grad psi drho, with gradients given per node (n, d).
    """
    grid = tensor.grid
    quad = np.einsum('ka,ka->k', grad_phi, tensor.apply(grad_psi))
    return float(np.sum(lstate.densities @ quad) * grid.cell_volume)


@dataclass
class SweepConfig:
    """
    :param epsilons: decreasing epsilon ladder
    :param initial: per species initial Lebesgue profile
    :param test_field: test function for the first variation error, expression in x1..xd
    :param tensor_resolution: quadrature cells per axis for the limit tensor
    :param threads: parallel epsilon rows
    :param record_runtimes: write wall clock times into the rows, NaN keeps the rows reproducible bit for bit
    """
    base: BaseMeasure
    connectivity: Connectivity
    ks: KernelSet
    ps: PotentialSet
    initial: Sequence
    epsilons: Sequence[float]
    graph_integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    local_integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    tensor_source: TensorSource = TensorSource.FROM_CONNECTIVITY
    tensor_resolution: Optional[int] = None
    test_field: Optional[str] = None
    threads: int = 1
    record_runtimes: bool = True

    def __post_init__(self):
        self.epsilons = [float(e) for e in self.epsilons]
        if not self.epsilons:
            raise ValueError('Sweep needs at least one epsilon.')
        if any(e <= 0 for e in self.epsilons) or any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError(f'Epsilons must be positive and strictly decreasing, got {self.epsilons}.')
        self.tensor_source = TensorSource.from_arg(self.tensor_source)
        if len(self.initial) != self.ks.n_species:
            raise ValueError(f'{len(self.initial)} initial profiles for {self.ks.n_species} species.')


@dataclass
class SweepRow:
    epsilon: float
    species: int
    distance_T: float
    tensor_err: float
    degiorgi_graph: float
    degiorgi_local: float
    l_eps_err: float
    runtime_s: float
    checkpoint_distances: Dict[float, float] = field(default_factory=dict)
    error: Optional[str] = None

    def as_tuple(self):
        return tuple(getattr(self, name) for name in CSV_COLUMNS)


@dataclass
class SweepReport:
    epsilons: List[float]
    rows: List[SweepRow] = field(default_factory=list)
    local_runtime_s: float = 0.0

    def rows_for(self, epsilon):
        return [row for row in self.rows if row.epsilon == epsilon]

    def distances(self, species):
        """
        :returns terminal distances of one species (1 based) in epsilon order
        """
        return [row.distance_T for row in self.rows if row.species == species]

    def tensor_errors(self):
        return [self.rows_for(e)[0].tensor_err for e in self.epsilons]

    def failed_rows(self):
        return [row for row in self.rows if row.error is not None]

    def monotone_trend(self, species, slack=0.15):
        """
        :returns whether d_(k+1) <= (1 + slack) d_k along the ladder
        """
        d = self.distances(species)
        return all(b <= (1 + slack) * a for a, b in zip(d, d[1:]))


def _test_field_gradient(expr: Expression, grid: SpatialGrid):
    env = coordinate_env('x', grid.centers)
    values = np.broadcast_to(np.asarray(expr.evaluate(env), dtype=float), (grid.n_nodes,))
    grads = np.stack([np.broadcast_to(np.asarray(expr.derivative(name).evaluate(env), dtype=float), (grid.n_nodes,))
                      for name in coordinate_names('x', grid.dim)], axis=-1)
    return values, grads


class _Sweep:
    """
    Shared inputs of the rows of one sweep.
    """
    def __init__(self, cfg: SweepConfig):
        self.cfg = cfg
        base = cfg.base
        self.grid = base.grid
        # filled before the rows share it across threads
        self.table = KernelTable(cfg.ks, self.grid).fill()
        self.graph_initial, self.local_initial = initial_data(cfg.initial, base)
        self.limit_tensor = limit_tensor_field(cfg.connectivity, base, cfg.tensor_resolution)
        self.test_field = None
        if cfg.test_field:
            expr = parse_expression(cfg.test_field, variables=coordinate_names('x', self.grid.dim))
            self.test_field = _test_field_gradient(expr, self.grid)
        self.local = None

    def local_tensor(self, epsilon_tensor=None):
        source = self.cfg.tensor_source
        if source == TensorSource.IDENTITY:
            return TensorField.identity(self.grid)
        if source == TensorSource.EPSILON_GRAPH:
            return epsilon_tensor
        return self.limit_tensor

    def run_local(self):
        cfg = self.cfg
        start = time.perf_counter()
        if cfg.tensor_source == TensorSource.EPSILON_GRAPH:
            # depends on the row, evolved per epsilon
            return 0.0
        tensor = self.local_tensor()
        traj = evolve_local(self.local_initial, cfg.ks, cfg.ps, tensor, config=cfg.local_integrator, table=self.table,
                            with_diagnostics=False)
        self.local = (traj, local_de_giorgi_residual(traj, cfg.ks, cfg.ps, tensor, self.table))
        return time.perf_counter() - start

    def run_row(self, epsilon):
        cfg = self.cfg
        start = time.perf_counter()
        graph = build_graph(cfg.base, cfg.connectivity, epsilon)
        eps_tensor = epsilon_tensor_field(graph)
        margin = epsilon * cfg.connectivity.support_radius
        interior = self.grid.interior_mask(margin)
        t_err = tensor_error(eps_tensor, self.limit_tensor, interior)

        traj = evolve(self.graph_initial, cfg.ks, cfg.ps, graph, config=cfg.graph_integrator, table=self.table,
                      with_diagnostics=False)
        dg_graph = de_giorgi_residual(traj, graph, cfg.ks, cfg.ps, self.table)

        if self.local is None:
            tensor = self.local_tensor(eps_tensor)
            ltraj = evolve_local(self.local_initial, cfg.ks, cfg.ps, tensor, config=cfg.local_integrator,
                                 table=self.table, with_diagnostics=False)
            local = (ltraj, local_de_giorgi_residual(ltraj, cfg.ks, cfg.ps, tensor, self.table))
        else:
            local = self.local
        ltraj, dg_local = local

        l_err = math.nan
        if self.test_field is not None:
            values, grads = self.test_field
            l_graph = first_variation_form(graph, self.graph_initial, values, values)
            l_limit = limit_first_variation(self.local_initial, self.limit_tensor, grads, grads)
            l_err = abs(l_graph - l_limit)

        terminal = compare_states(traj.final_state, cfg.base, ltraj.final_state, self.grid)
        checkpoints = {}
        for t in cfg.graph_integrator.checkpoints:
            try:
                checkpoints[t] = compare_states(traj.state_at(t), cfg.base, ltraj.state_at(t), self.grid)
            except KeyError:
                logger.warning(f'Checkpoint t={t} missing in one of the runs')
        runtime = time.perf_counter() - start if cfg.record_runtimes else math.nan
        rows = []
        for i, distance in enumerate(terminal):
            rows.append(SweepRow(epsilon, i + 1, distance, t_err, dg_graph, dg_local, l_err, runtime,
                                 {t: d[i] for t, d in checkpoints.items()}))
        logger.info(f'eps={epsilon:g}: distances {[f"{d:.4g}" for d in terminal]}, tensor error {t_err:.4g}, '
                    f'{runtime:.1f}s')
        return rows

    def nan_rows(self, epsilon, error):
        return [SweepRow(epsilon, i + 1, *([math.nan] * 6), error=error) for i in range(self.cfg.ks.n_species)]


async def run_sweep_async(cfg: SweepConfig) -> SweepReport:
    """
    Runs the epsilon rows on a thread pool. Rows keep the epsilon order, a failing row is logged
    and filled with NaN while the others continue.
    """
    sweep = _Sweep(cfg)
    report = SweepReport(list(cfg.epsilons))
    report.local_runtime_s = sweep.run_local()

    async def row(executor, epsilon):
        try:
            return await utils.run_blocking(executor, sweep.run_row, epsilon)
        except Exception as e:
            logger.exception(f'Sweep row eps={epsilon:g} failed')
            return sweep.nan_rows(epsilon, f'{type(e).__name__}: {e}')

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as executor:
        results = await asyncio.gather(*(row(executor, eps) for eps in cfg.epsilons))
    for rows in results:
        report.rows.extend(rows)
    return report


def run_sweep(cfg: SweepConfig) -> SweepReport:
    return asyncio.run(run_sweep_async(cfg))
