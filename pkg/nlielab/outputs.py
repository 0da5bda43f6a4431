"""
CSV tables and SVG plots of runs, tensor fields and sweeps.

Column orders are fixed, numbers are written with 17 significant digits so identical runs give
identical bytes.

trajectory csv:  time, energy, slope, action, de_giorgi, mass_1..mass_N, second_moment_1..N, min_density
state csv:       node, x1..xd, density_1..density_N
tensor csv:      node, x1..xd, T11, T12, .., Tdd (row major)
sweep csv:       epsilon, species, distance_T, tensor_err, degiorgi_graph, degiorgi_local, l_eps_err, runtime_s
"""
import csv
import logging
import os

import numpy as np

from nlielab.limit_harness import CSV_COLUMNS, SweepReport
from nlielab.utils import OutputError, ensure_directory, get_output

logger = logging.getLogger(__name__)

SVG_HASH_SALT = 'nlielab'


def _fmt(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return f'{float(value):.17g}'


def trajectory_header(n_species):
    return (['time', 'energy', 'slope', 'action', 'de_giorgi']
            + [f'mass_{i + 1}' for i in range(n_species)]
            + [f'second_moment_{i + 1}' for i in range(n_species)]
            + ['min_density'])


def write_trajectory_csv(traj, path, n_species=None):
    """
    One row per recorded state with diagnostics; an empty trajectory gives the header only.
    """
    records = traj.diagnostics
    if n_species is None:
        n_species = len(records[0].masses) if records else (traj.states[0].n_species if traj.states else 1)
    with get_output(path) as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(trajectory_header(n_species))
        for rec in records:
            writer.writerow([_fmt(rec.time), _fmt(rec.energy), _fmt(rec.slope), _fmt(rec.action),
                             _fmt(rec.de_giorgi)]
                            + [_fmt(m) for m in rec.masses] + [_fmt(m) for m in rec.second_moments]
                            + [_fmt(rec.min_density)])
    logger.info(f'Wrote {len(records)} trajectory rows to {path}')
    return path


def write_state_csv(state, grid, path):
    with get_output(path) as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['node'] + [f'x{a + 1}' for a in range(grid.dim)]
                        + [f'density_{i + 1}' for i in range(state.n_species)])
        for k in range(grid.n_nodes):
            writer.writerow([_fmt(k)] + [_fmt(x) for x in grid.centers[k]]
                            + [_fmt(state.densities[i, k]) for i in range(state.n_species)])
    return path


def write_tensor_csv(field, path):
    grid = field.grid
    d = grid.dim
    with get_output(path) as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['node'] + [f'x{a + 1}' for a in range(d)]
                        + [f'T{a + 1}{b + 1}' for a in range(d) for b in range(d)])
        for k in range(grid.n_nodes):
            writer.writerow([_fmt(k)] + [_fmt(x) for x in grid.centers[k]]
                            + [_fmt(v) for v in field.values[k].ravel()])
    return path


def write_tensor_error_csv(rows, path):
    """
    :param rows: [(epsilon, max Frobenius error)] in decreasing epsilon order
    """
    with get_output(path) as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['epsilon', 'tensor_err'])
        for epsilon, error in rows:
            writer.writerow([_fmt(epsilon), _fmt(error)])
    return path


def write_sweep_csv(report: SweepReport, path):
    """
    One row per (epsilon, species), epsilons decreasing.
    """
    rows = sorted(report.rows, key=lambda row: (-row.epsilon, row.species))
    with get_output(path) as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row.as_tuple()])
    logger.info(f'Wrote {len(rows)} sweep rows to {path}')
    return path


def _figure():
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
    matplotlib.rcParams['svg.hashsalt'] = SVG_HASH_SALT
    return plt


def _save_svg(plt, fig, path):
    try:
        fig.savefig(path, format='svg', metadata={'Date': None})
    except OSError as e:
        raise OutputError(path, e.strerror or e) from e
    finally:
        plt.close(fig)
    return path


def plot_energy_svg(traj, path, title='energy'):
    """
    Energy and slope against time.
    """
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    times = [rec.time for rec in traj.diagnostics]
    ax.plot(times, [rec.energy for rec in traj.diagnostics], label='energy')
    ax.plot(times, [rec.slope for rec in traj.diagnostics], label='slope', linestyle='--')
    ax.set_xlabel('t')
    ax.set_title(title)
    ax.legend()
    return _save_svg(plt, fig, path)


def plot_sweep_svg(report: SweepReport, path):
    """
    Terminal distances and tensor errors against epsilon, log-log.
    """
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 4))
    species = sorted({row.species for row in report.rows})
    for i in species:
        rows = sorted((row for row in report.rows if row.species == i), key=lambda row: -row.epsilon)
        ax.loglog([row.epsilon for row in rows], [row.distance_T for row in rows], marker='o',
                  label=f'distance species {i}')
    rows = sorted((row for row in report.rows if row.species == 1), key=lambda row: -row.epsilon)
    ax.loglog([row.epsilon for row in rows], [row.tensor_err for row in rows], marker='s', linestyle='--',
              label='tensor error')
    ax.set_xlabel('epsilon')
    ax.legend()
    return _save_svg(plt, fig, path)


def emit_outputs(result, directory, svg=False, prefix=None):
    """
    Writes the tables (and plots) of a run result into directory.

    :param result: Trajectory, LocalTrajectory or SweepReport
    :returns list of written paths
    """
    ensure_directory(directory)
    written = []
    if isinstance(result, SweepReport):
        name = prefix or 'sweep'
        written.append(write_sweep_csv(result, os.path.join(directory, f'{name}.csv')))
        if svg:
            written.append(plot_sweep_svg(result, os.path.join(directory, f'{name}.svg')))
        return written

    name = prefix or 'trajectory'
    written.append(write_trajectory_csv(result, os.path.join(directory, f'{name}.csv')))
    if result.states:
        grid = result.grid
        written.append(write_state_csv(result.final_state, grid, os.path.join(directory, f'{name}_final.csv')))
    if svg and result.diagnostics:
        written.append(plot_energy_svg(result, os.path.join(directory, f'{name}.svg'), title=name))
    return written
