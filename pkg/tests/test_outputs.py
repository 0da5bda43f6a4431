import csv
import math

import numpy as np
import pytest

from nlielab.energy import SpeciesState, gaussian_kernel
from nlielab.graph_dynamics import IntegratorConfig, Trajectory, evolve
from nlielab.graph_model import build_graph, indicator_ball
from nlielab.limit_harness import CSV_COLUMNS, SweepReport, SweepRow
from nlielab.outputs import emit_outputs, trajectory_header, write_state_csv, write_sweep_csv, \
    write_tensor_csv, write_trajectory_csv
from nlielab.tensor_field import TensorField
from nlielab.utils import OutputError


def _read(path):
    with open(path, newline='') as f:
        return list(csv.reader(f))


@pytest.fixture
def ring_run(torus, single):
    bm = torus(16)
    graph = build_graph(bm, indicator_ball(3, 1), 0.125)
    x = bm.positions[:, 0]
    state = SpeciesState.from_profiles([1 + 0.5 * np.cos(2 * np.pi * x)], bm.weights)
    ks, ps = single(gaussian_kernel(1, 0.2))
    return evolve(state, ks, ps, graph, config=IntegratorConfig(t_end=0.01, dt_max=0.005))


def _sweep_report():
    rows = [SweepRow(eps, i, 0.1 * eps, 0.01, 0.0, 0.0, math.nan, 0.5) for eps in (0.05, 0.2, 0.1) for i in (2, 1)]
    return SweepReport([0.2, 0.1, 0.05], rows)


def test_trajectory_csv(ring_run, tmp_path):
    path = write_trajectory_csv(ring_run, str(tmp_path / 'run.csv'))
    rows = _read(path)
    assert rows[0] == trajectory_header(1)
    assert rows[0] == ['time', 'energy', 'slope', 'action', 'de_giorgi', 'mass_1', 'second_moment_1', 'min_density']
    assert len(rows) - 1 == len(ring_run.states)
    assert [float(r[0]) for r in rows[1:]] == ring_run.times
    assert float(rows[-1][5]) == pytest.approx(1.0)


def test_empty_trajectory_gives_the_header(ring_run, tmp_path):
    path = write_trajectory_csv(Trajectory(ring_run.graph), str(tmp_path / 'empty.csv'), n_species=2)
    assert _read(path) == [trajectory_header(2)]


def test_state_and_tensor_csv(ring_run, tmp_path):
    rows = _read(write_state_csv(ring_run.final_state, ring_run.grid, str(tmp_path / 'state.csv')))
    assert rows[0] == ['node', 'x1', 'density_1']
    assert len(rows) == 17
    assert float(rows[1][1]) == pytest.approx(ring_run.grid.centers[0, 0])

    field = TensorField.constant(ring_run.grid, [[2.5]])
    rows = _read(write_tensor_csv(field, str(tmp_path / 'tensor.csv')))
    assert rows[0] == ['node', 'x1', 'T11']
    assert {float(r[2]) for r in rows[1:]} == {2.5}


def test_sweep_rows_in_decreasing_epsilon(tmp_path):
    rows = _read(write_sweep_csv(_sweep_report(), str(tmp_path / 'sweep.csv')))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [(float(r[0]), int(r[1])) for r in rows[1:]] == [(0.2, 1), (0.2, 2), (0.1, 1), (0.1, 2), (0.05, 1),
                                                            (0.05, 2)]
    assert rows[1][6] == 'nan'


def test_repeated_writes_are_identical(ring_run, tmp_path):
    first = emit_outputs(ring_run, str(tmp_path / 'a'), svg=True, prefix='graph')
    second = emit_outputs(ring_run, str(tmp_path / 'b'), svg=True, prefix='graph')
    assert [p.rsplit('/', 1)[1] for p in first] == ['graph.csv', 'graph_final.csv', 'graph.svg']
    for a, b in zip(first, second):
        with open(a, 'rb') as fa, open(b, 'rb') as fb:
            assert fa.read() == fb.read()

    report = _sweep_report()
    first = emit_outputs(report, str(tmp_path / 'a'), svg=True)
    second = emit_outputs(report, str(tmp_path / 'b'), svg=True)
    assert [p.rsplit('/', 1)[1] for p in first] == ['sweep.csv', 'sweep.svg']
    for a, b in zip(first, second):
        with open(a, 'rb') as fa, open(b, 'rb') as fb:
            assert fa.read() == fb.read()


def test_unwritable_targets_raise(ring_run, tmp_path):
    with pytest.raises(OutputError) as e:
        write_trajectory_csv(ring_run, str(tmp_path / 'missing' / 'run.csv'))
    assert e.value.path.endswith('run.csv')

    blocker = tmp_path / 'file'
    blocker.write_text('')
    with pytest.raises(OutputError):
        emit_outputs(ring_run, str(blocker / 'sub'))
