"""
Experiment files.

Experiments are TOML files with the sections [grid], [measure], [connectivity], [species], [kernels],
[potentials], [integrator], [graph], [local], [sweep], [validation] and [output]; see configs/ for
examples. Presets are written as calls, e.g. "indicator_ball(3)" or "quadratic(0.5)", everything else
is read as an expression.
"""
import logging
import tomllib
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from nlielab.energy import (KernelSamplePlan, KernelSet, PotentialSet, build_kernel, build_potential,
                            validate_kernels, validate_potentials)
from nlielab.expression import ExpressionError, coordinate_names, parse_expression
from nlielab.graph_dynamics import IntegratorConfig
from nlielab.graph_model import (BaseMeasure, Connectivity, SamplePlan, SpatialGrid, build_base_measure,
                                 expression_connectivity, gaussian_cutoff, indicator_ball, trapezoid_ball,
                                 validate_base_measure, validate_connectivity)
from nlielab.limit_harness import SweepConfig
from nlielab.local_dynamics import TensorSource
from nlielab.tensor_field import ellipsoid_connectivity, identity_connectivity
from nlielab.validation import ValidationReport

logger = logging.getLogger(__name__)

CONNECTIVITY_PRESETS = ('indicator_ball', 'trapezoid_ball', 'gaussian_cutoff', 'ellipsoid', 'identity')


class ConfigError(ValueError):
    def __init__(self, message, path=None):
        super().__init__(f'{path}: {message}' if path else message)
        self.path = path


@dataclass
class RunConfig:
    path: Optional[str]
    grid: SpatialGrid
    base: BaseMeasure
    density_bounds: tuple
    connectivity: Connectivity
    n_species: int
    ks: KernelSet
    ps: PotentialSet
    kernel_specs: Dict[str, str]
    initial: List[str]
    integrator: IntegratorConfig
    local_integrator: IntegratorConfig
    epsilon: Optional[float] = None
    tensor_source: TensorSource = TensorSource.FROM_CONNECTIVITY
    tensor_resolution: Optional[int] = None
    epsilons: List[float] = field(default_factory=list)
    threads: int = 1
    record_runtimes: bool = True
    test_field: Optional[str] = None
    output_directory: str = 'out'
    svg: bool = False
    reports: List[ValidationReport] = field(default_factory=list)

    def sweep_config(self, threads=None) -> SweepConfig:
        if not self.epsilons:
            raise ConfigError('[sweep] epsilons missing', self.path)
        return SweepConfig(self.base, self.connectivity, self.ks, self.ps, self.initial, self.epsilons,
                           graph_integrator=self.integrator, local_integrator=self.local_integrator,
                           tensor_source=self.tensor_source, tensor_resolution=self.tensor_resolution,
                           test_field=self.test_field, threads=threads or self.threads,
                           record_runtimes=self.record_runtimes)

    def validation_summary(self):
        return '\n'.join(str(report) for report in self.reports)


class _Section:
    """
    Key access with precise error messages.
    """
    def __init__(self, name, data, path):
        if not isinstance(data, dict):
            raise ConfigError(f'[{name}] must be a table', path)
        self.name = name
        self.data = data
        self.path = path

    def require(self, key):
        if key not in self.data:
            raise ConfigError(f'[{self.name}] missing key "{key}"', self.path)
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def error(self, key, message):
        return ConfigError(f'[{self.name}] {key}: {message}', self.path)


def _section(doc, name, path, required=True):
    if name not in doc:
        if required:
            raise ConfigError(f'missing section [{name}]', path)
        return _Section(name, {}, path)
    return _Section(name, doc[name], path)


def _parse_grid(section: _Section):
    dim = section.require('dim')
    try:
        return SpatialGrid(int(dim), tuple(tuple(b) for b in section.require('bounds')),
                           tuple(section.require('cells')), bool(section.get('periodic', True)))
    except (TypeError, ValueError) as e:
        raise section.error('grid', e) from None


def _parse_connectivity(section: _Section, dim):
    spec = str(section.require('theta'))
    names = coordinate_names('z', dim) + coordinate_names('w', dim)
    try:
        expr = parse_expression(spec, variables=names + ['identity'], functions=CONNECTIVITY_PRESETS)
    except ExpressionError as e:
        raise section.error('theta', e) from None
    call = expr.as_call()
    try:
        if call is not None and call[0] in CONNECTIVITY_PRESETS:
            name, args = call
            if name == 'identity' and not args:
                return identity_connectivity(dim)
            if name == 'indicator_ball' and len(args) == 1:
                return indicator_ball(args[0], dim)
            if name == 'trapezoid_ball' and len(args) == 1:
                return trapezoid_ball(args[0], dim)
            if name == 'gaussian_cutoff' and len(args) == 2:
                return gaussian_cutoff(args[0], args[1], dim)
            if name == 'ellipsoid' and len(args) == dim:
                return ellipsoid_connectivity(np.diag(args))
            if name == 'ellipsoid' and dim == 2 and len(args) == 3:
                a, b, c = args
                return ellipsoid_connectivity(np.array([[a, b], [b, c]]))
            raise section.error('theta', f'wrong arguments for preset "{spec}"')
        return expression_connectivity(expr, dim, float(section.require('support_radius')),
                                       float(section.require('moment_bound')),
                                       float(section.require('nondegeneracy')))
    except ConfigError:
        raise
    except ValueError as e:
        raise section.error('theta', e) from None


def _kernel_key(i, k):
    return f'K{i + 1}{k + 1}'


def _normalized(spec):
    return ''.join(str(spec).split())


def _parse_kernels(section: _Section, n, dim):
    specs = {}
    for i in range(n):
        for k in range(n):
            specs[_kernel_key(i, k)] = str(section.require(_kernel_key(i, k)))
    for i in range(n):
        for k in range(i + 1, n):
            a, b = specs[_kernel_key(i, k)], specs[_kernel_key(k, i)]
            if _normalized(a) != _normalized(b):
                raise ConfigError(f'[kernels] {_kernel_key(i, k)} = "{a}" differs from {_kernel_key(k, i)} = "{b}", '
                                  f'violating the symmetry of the cross-interactions', section.path)
    built = {}
    rows = []
    for i in range(n):
        row = []
        for k in range(n):
            key = _kernel_key(min(i, k), max(i, k))
            if key not in built:
                try:
                    built[key] = build_kernel(specs[key], dim)
                except ValueError as e:
                    raise section.error(key, e) from None
            row.append(built[key])
        rows.append(row)
    return KernelSet(rows, section.get('growth_constant'), section.get('lipschitz_constant')), specs


def _parse_potentials(section: _Section, n, dim):
    potentials = []
    for i in range(n):
        key = f'P{i + 1}'
        try:
            potentials.append(build_potential(str(section.get(key, 'zero')), dim))
        except ValueError as e:
            raise section.error(key, e) from None
    return PotentialSet(potentials)


def _parse_integrator(section: _Section, defaults: IntegratorConfig = None):
    defaults = defaults or IntegratorConfig()
    try:
        return IntegratorConfig(
            integrator=section.get('integrator', defaults.integrator),
            cfl_safety=float(section.get('cfl_safety', defaults.cfl_safety)),
            dt_max=float(section.get('dt_max', defaults.dt_max)),
            t_end=float(section.get('t_end', defaults.t_end)),
            record_every=int(section.get('record_every', defaults.record_every)),
            checkpoints=tuple(section.get('checkpoints', defaults.checkpoints)))
    except ValueError as e:
        raise ConfigError(f'[{section.name}] {e}', section.path) from None


def _escalate(report: ValidationReport, path):
    hard = report.hard_failures()
    if hard:
        details = '; '.join(f'{check.name}: {check.detail}' for check in hard)
        raise ConfigError(f'{report.subject} violates hard assumptions: {details}', path)


def load_config(path, record_every=None, validate=True) -> RunConfig:
    """
    Reads and validates an experiment file.

    :param record_every: overrides [integrator] record_every
    :param validate: run the assumption validators (hard failures raise ConfigError)
    :raises ConfigError for missing keys, unparsable expressions, asymmetric cross kernels and hard
            validation failures
    """
    try:
        with open(path, 'rb') as f:
            doc = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f'cannot read config: {e.strerror}', path) from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'invalid TOML: {e}', path) from None
    return parse_config(doc, path, record_every=record_every, validate=validate)


def output_directory_of(path):
    """
    [output] directory of an experiment file without parsing the rest, for setting up the logfile
    before the run. None if the file cannot be read, load_config reports that.
    """
    try:
        with open(path, 'rb') as f:
            doc = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError):
        return None
    output = doc.get('output', {})
    if not isinstance(output, dict):
        return None
    return str(output.get('directory', RunConfig.output_directory))


def parse_config(doc, path=None, record_every=None, validate=True) -> RunConfig:
    grid = _parse_grid(_section(doc, 'grid', path))
    dim = grid.dim

    measure = _section(doc, 'measure', path)
    try:
        density = measure.require('density')
        if isinstance(density, str):
            density = parse_expression(density, variables=coordinate_names('x', dim))
        base = build_base_measure(grid, density)
    except ValueError as e:
        raise measure.error('density', e) from None
    bounds = tuple(float(b) for b in measure.require('bounds'))
    if len(bounds) != 2:
        raise measure.error('bounds', 'expected [c_mu, C_mu]')

    connectivity = _parse_connectivity(_section(doc, 'connectivity', path), dim)

    species = _section(doc, 'species', path)
    n = int(species.require('count'))
    if n < 1:
        raise species.error('count', f'must be positive, got {n}')
    initial = [str(s) for s in species.require('initial')]
    if len(initial) != n:
        raise species.error('initial', f'{len(initial)} profiles for {n} species')
    for i, profile in enumerate(initial):
        try:
            parse_expression(profile, variables=coordinate_names('x', dim))
        except ExpressionError as e:
            raise species.error(f'initial[{i}]', e) from None

    ks, specs = _parse_kernels(_section(doc, 'kernels', path), n, dim)
    ps = _parse_potentials(_section(doc, 'potentials', path, required=False), n, dim)

    integrator = _parse_integrator(_section(doc, 'integrator', path, required=False))
    if record_every is not None:
        integrator = IntegratorConfig(integrator.integrator, integrator.cfl_safety, integrator.dt_max,
                                      integrator.t_end, int(record_every), integrator.checkpoints)
    local = _section(doc, 'local', path, required=False)
    local_integrator = _parse_integrator(local, integrator)
    try:
        tensor_source = TensorSource.from_arg(local.get('tensor', 'from_connectivity'))
    except ValueError as e:
        raise local.error('tensor', e) from None

    graph = _section(doc, 'graph', path, required=False)
    sweep = _section(doc, 'sweep', path, required=False)
    validation = _section(doc, 'validation', path, required=False)
    output = _section(doc, 'output', path, required=False)

    test_field = sweep.get('test_field')
    if test_field is not None:
        try:
            parse_expression(test_field, variables=coordinate_names('x', dim))
        except ExpressionError as e:
            raise sweep.error('test_field', e) from None

    cfg = RunConfig(
        path=str(path) if path is not None else None, grid=grid, base=base, density_bounds=bounds,
        connectivity=connectivity, n_species=n, ks=ks, ps=ps, kernel_specs=specs, initial=initial,
        integrator=integrator, local_integrator=local_integrator,
        epsilon=float(graph.get('epsilon')) if graph.get('epsilon') is not None else None,
        tensor_source=tensor_source, tensor_resolution=local.get('tensor_resolution'),
        epsilons=[float(e) for e in sweep.get('epsilons', [])], threads=int(sweep.get('threads', 1)),
        record_runtimes=bool(sweep.get('record_runtimes', True)), test_field=test_field,
        output_directory=str(output.get('directory', 'out')), svg=bool(output.get('svg', False)))

    if validate:
        try:
            mu_report = validate_base_measure(base, bounds, sample_pairs=int(validation.get('sample_pairs', 2000)),
                                              seed=int(validation.get('seed', 0)))
        except ValueError as e:
            raise measure.error('bounds', e) from None
        cfg.reports.append(mu_report)
        _escalate(mu_report, path)

        z_box = grid.bounds
        plan = SamplePlan.default(connectivity, z_box=z_box, n_z=int(validation.get('z_samples', 5)),
                                  n_w=int(validation.get('w_samples', 512)),
                                  resolution=validation.get('quadrature'), seed=int(validation.get('seed', 0)))
        theta_report = validate_connectivity(connectivity, plan)
        cfg.reports.append(theta_report)
        _escalate(theta_report, path)

        kernel_plan = KernelSamplePlan.default(dim, radius=float(validation.get('kernel_radius', 2.0)),
                                               count=int(validation.get('kernel_samples', 48)),
                                               seed=int(validation.get('seed', 0)))
        cfg.reports.append(validate_kernels(ks, kernel_plan, dim))
        cfg.reports.append(validate_potentials(ps, kernel_plan, dim))
    logger.info(f'Loaded {path}: {n} species on {grid.n_nodes} nodes, connectivity {connectivity.name}')
    return cfg
