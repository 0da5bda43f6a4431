"""
Gradient flow structure on the graph: upwind action, metric slope, De Giorgi residual
and the first variation form.
"""
import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from nlielab.energy import KernelSet, PotentialSet, SpeciesState, energy, kernel_table, second_moments
from nlielab.graph_dynamics import (EdgeFluxField, EdgeVelocityField, Trajectory, edge_gradient,
                                    upwind_velocity)
from nlielab.graph_model import Graph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """
    :param de_giorgi: E(t) - E(0) + 1/2 sum_{s < t} dt (slope + action), the running De Giorgi sum
    :param action: action of the realized flux leaving this state (of the upwind flux for the last state)
    """
    time: float
    energy: float
    slope: float
    action: float
    de_giorgi: float
    masses: tuple
    second_moments: tuple
    min_density: float


def _mass_products(graph: Graph):
    m = graph.weights
    return m[graph.sources] * m[graph.targets]


def action_density(graph: Graph, state: SpeciesState, vel: EdgeVelocityField):
    """
    1/2 sum over ordered pairs of eta (v_+(x,y)^2 r(x) + v_-(x,y)^2 r(y)) m(x) m(y), summed over species.
    Each unordered edge is stored once, which absorbs the factor 1/2.
    """
    r = state.densities
    per_edge = (vel.positive_part() ** 2 * r[:, graph.sources]
                + vel.negative_part() ** 2 * r[:, graph.targets]) * _mass_products(graph)
    return float(np.sum(per_edge @ graph.eta))


def flux_action(graph: Graph, state: SpeciesState, flux: EdgeFluxField):
    """
    Action of a flux: sum over edges of eta j^2 / (r_upwind m_k m_l), +inf if a flux leaves a node without mass.
    """
    r = state.densities
    j = flux.values
    upwind = np.where(j > 0, r[:, graph.sources], r[:, graph.targets])
    moving = j != 0
    if np.any(moving & (upwind <= 0)):
        return math.inf
    denominator = np.where(moving, upwind, 1.0) * _mass_products(graph)
    per_edge = np.where(moving, j ** 2 / denominator, 0.0)
    return float(np.sum(per_edge @ graph.eta))


def metric_slope(graph: Graph, state: SpeciesState, ks: KernelSet, ps: PotentialSet, table=None):
    """
    Action of the steepest descent velocity -grad(dE/drho).
    """
    return action_density(graph, state, upwind_velocity(ks, ps, state, graph, table))


def first_variation_form(graph: Graph, state: SpeciesState, phi, psi):
    """
    sum_i sum_edges grad psi_i eta (v_+ r_k - v_- r_l) m_k m_l with v = grad phi_i.

    :param phi: node fields (N, n) or (n,) used for every species
    :param psi: node fields (N, n) or (n,)
    """
    r = state.densities
    v = np.broadcast_to(edge_gradient(graph, phi), (state.n_species, graph.n_edges))
    w = np.broadcast_to(edge_gradient(graph, psi), (state.n_species, graph.n_edges))
    transported = np.maximum(v, 0) * r[:, graph.sources] - np.maximum(-v, 0) * r[:, graph.targets]
    return float(np.sum((w * transported * _mass_products(graph)) @ graph.eta))


def first_variation_asymmetry(graph: Graph, state: SpeciesState, phi, psi):
    """
    |l(grad phi)[grad psi] - l(grad psi)[grad phi]|
    """
    return abs(first_variation_form(graph, state, phi, psi) - first_variation_form(graph, state, psi, phi))


def graph_vector_flux(graph: Graph, flux: EdgeFluxField):
    """
    Vector flux density 1/(2 |cell|) sum_l (x_l - x_k) eta(x_k, x_l) j(x_k, x_l) per node, shape (N, n, d).
    For the upwind flux of smooth data this approximates rho T^eps v with rho the Lebesgue density.
    """
    weighted = flux.values * graph.eta
    out = np.zeros((flux.n_species, graph.n_nodes, graph.base.dim))
    for axis in range(graph.base.dim):
        contribution = weighted * graph.displacements[:, axis]
        out[:, :, axis] = graph.sum_at_sources(contribution) + graph.sum_at_targets(contribution)
    return out / (2 * graph.grid.cell_volume)


def interval_dissipation(traj: Trajectory, m, ks: KernelSet, ps: PotentialSet, table=None):
    """
    Integrals of slope and flux action over the recorded interval [t_m, t_m+1).

    Runs from evolve carry them summed over every step of the interval. Trajectories assembled by hand
    fall back to the left endpoint value times the interval length.
    :returns (slope integral, action integral)
    """
    if len(traj.slope_integrals) == len(traj.fluxes):
        return traj.slope_integrals[m], traj.action_integrals[m]
    graph = traj.graph
    dt = traj.times[m + 1] - traj.times[m]
    state = traj.states[m]
    vel = traj.velocities[m] if m < len(traj.velocities) else upwind_velocity(ks, ps, state, graph, table)
    return dt * action_density(graph, state, vel), dt * flux_action(graph, state, traj.fluxes[m])


def de_giorgi_residual(traj: Trajectory, graph: Graph, ks: KernelSet, ps: PotentialSet, table=None):
    """
    E(T) - E(0) + 1/2 sum over all steps dt (slope(rho) + action(rho, j)), a left Riemann sum per step.
    The realized flux action stands in for the squared metric derivative.
    """
    table = table or kernel_table(ks, graph.grid)
    if len(traj.states) < 2:
        return 0.0
    total = (energy(ks, ps, traj.states[-1], graph.base, table)
             - energy(ks, ps, traj.states[0], graph.base, table))
    for m in range(len(traj.fluxes)):
        slope, action = interval_dissipation(traj, m, ks, ps, table)
        total += 0.5 * (slope + action)
    return total


def dissipation_residuals(traj: Trajectory, ks: KernelSet, ps: PotentialSet, table=None):
    """
    Per recorded interval E(t_m+1) - E(t_m) + integral of the slope over its steps.
    """
    graph = traj.graph
    table = table or kernel_table(ks, graph.grid)
    energies = [energy(ks, ps, state, graph.base, table) for state in traj.states]
    out = []
    for m in range(len(traj.states) - 1):
        slope, _ = interval_dissipation(traj, m, ks, ps, table)
        out.append(energies[m + 1] - energies[m] + slope)
    return np.array(out)


def trajectory_diagnostics(traj: Trajectory, ks: KernelSet, ps: PotentialSet, table=None) -> List[DiagnosticsRecord]:
    graph = traj.graph
    table = table or kernel_table(ks, graph.grid)
    records = []
    e0 = None
    running = 0.0
    for m, (t, state) in enumerate(zip(traj.times, traj.states)):
        e = energy(ks, ps, state, graph.base, table)
        if m < len(traj.fluxes):
            slope = action_density(graph, state, traj.velocities[m])
            action = flux_action(graph, state, traj.fluxes[m])
        else:
            slope = metric_slope(graph, state, ks, ps, table)
            action = slope
        if e0 is None:
            e0 = e
        elif e > records[-1].energy + 1e-8 * (1 + abs(records[-1].energy)):
            logger.warning(f'Energy increased at t={t:.6g}: {records[-1].energy:.10g} -> {e:.10g}')
        records.append(DiagnosticsRecord(
            time=float(t), energy=e, slope=slope, action=action, de_giorgi=e - e0 + running,
            masses=tuple(state.masses(graph.weights)),
            second_moments=tuple(second_moments(state, graph.positions, graph.weights)),
            min_density=state.min_density()))
        if m < len(traj.fluxes):
            running += 0.5 * sum(interval_dissipation(traj, m, ks, ps, table))
    return records
