import inspect
import logging
import os

from nlielab import outputs
from nlielab.config import ConfigError, RunConfig, load_config
from nlielab.expression import ExpressionError
from nlielab.gf_diagnostics import de_giorgi_residual
from nlielab.graph_dynamics import evolve
from nlielab.graph_model import build_graph
from nlielab.limit_harness import initial_data, run_sweep_async
from nlielab.local_dynamics import TensorSource, evolve_local, local_de_giorgi_residual
from nlielab.tensor_field import TensorField, epsilon_tensor_field, limit_tensor_field, tensor_error

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUNTIME_ERROR = 2


def _print_doc(string):
    """
    Removes the common indentation of the non empty lines of a doc string and prints it.
    """
    lines = string.split('\n')
    indents = [len(line) - len(line.lstrip()) for line in lines if line.strip()]
    prefix = min(indents) if indents else 0
    for line in lines:
        print(line[prefix:] if line.strip() else line)


class LabCLI:
    """
    Runs the sub commands of run_lab_cli.py. Each cmd_<name> receives the parsed arguments.
    """
    def __init__(self):
        self.commands = {}

    def add_command(self, name, command):
        if name in self.commands:
            raise ValueError(f'Command {name} already registered.')
        self.commands[name] = command

    async def cmd_help(self, args=None):
        """
        help                    show this list
        """
        print('Commands:')
        for name, fun in inspect.getmembers(self):
            if name.startswith('cmd_') and fun.__doc__:
                _print_doc(fun.__doc__)
        for name, fun in self.commands.items():
            if fun.__doc__:
                _print_doc(fun.__doc__)

    async def run(self, command, args):
        """
        Dispatches a command and maps failures to exit codes.

        :returns 0 ok, 1 configuration error, 2 runtime failure
        """
        name = command.replace('-', '_')
        if hasattr(self, f'cmd_{name}'):
            fun = getattr(self, f'cmd_{name}')
        elif command in self.commands:
            fun = self.commands[command]
        else:
            print('command', command, 'not found, call help for help.')
            return EXIT_CONFIG_ERROR
        try:
            await fun(args)
        except (ConfigError, ExpressionError) as e:
            logger.error(str(e))
            print(f'configuration error: {e}')
            return EXIT_CONFIG_ERROR
        except Exception as e:
            logger.exception(e)
            print(f'run failed: {e}')
            return EXIT_RUNTIME_ERROR
        return EXIT_OK

    @staticmethod
    def _load(args) -> RunConfig:
        return load_config(args.config, record_every=getattr(args, 'record_every', None))

    @staticmethod
    def _out(args, cfg: RunConfig):
        return getattr(args, 'out', None) or cfg.output_directory

    @staticmethod
    def _svg(args, cfg: RunConfig):
        return bool(getattr(args, 'svg', False) or cfg.svg)

    async def cmd_validate(self, args):
        """
        validate --config F     load an experiment and print the assumption reports
        """
        cfg = self._load(args)
        print(cfg.validation_summary())
        soft = [check for report in cfg.reports for check in report.violations()]
        if soft:
            print(f'{len(soft)} soft violation(s)')

    async def cmd_simulate(self, args):
        """
        simulate --config F --out DIR
                                run the graph dynamics at [graph] epsilon
        """
        cfg = self._load(args)
        if cfg.epsilon is None:
            raise ConfigError('[graph] epsilon is required for simulate', cfg.path)
        graph = build_graph(cfg.base, cfg.connectivity, cfg.epsilon)
        state, _ = initial_data(cfg.initial, cfg.base)
        traj = evolve(state, cfg.ks, cfg.ps, graph, config=cfg.integrator)
        written = outputs.emit_outputs(traj, self._out(args, cfg), svg=self._svg(args, cfg), prefix='graph')
        residual = de_giorgi_residual(traj, graph, cfg.ks, cfg.ps)
        final = traj.diagnostics[-1]
        print(f't={final.time:.6g} energy={final.energy:.10g} slope={final.slope:.6g} '
              f'de_giorgi={residual:.6g} steps={traj.steps}')
        for path in written:
            print(path)

    def _local_tensor(self, cfg: RunConfig):
        source = cfg.tensor_source
        if source == TensorSource.IDENTITY:
            return TensorField.identity(cfg.grid)
        if source == TensorSource.EPSILON_GRAPH:
            if cfg.epsilon is None:
                raise ConfigError('[graph] epsilon is required for the epsilon_graph tensor', cfg.path)
            return epsilon_tensor_field(build_graph(cfg.base, cfg.connectivity, cfg.epsilon))
        return limit_tensor_field(cfg.connectivity, cfg.base, cfg.tensor_resolution)

    async def cmd_simulate_local(self, args):
        """
        simulate-local --config F --out DIR
                                run the local tensor weighted dynamics
        """
        cfg = self._load(args)
        tensor = self._local_tensor(cfg)
        _, lstate = initial_data(cfg.initial, cfg.base)
        traj = evolve_local(lstate, cfg.ks, cfg.ps, tensor, config=cfg.local_integrator)
        written = outputs.emit_outputs(traj, self._out(args, cfg), svg=self._svg(args, cfg), prefix='local')
        residual = local_de_giorgi_residual(traj, cfg.ks, cfg.ps, tensor)
        final = traj.diagnostics[-1]
        print(f't={final.time:.6g} energy={final.energy:.10g} slope={final.slope:.6g} '
              f'de_giorgi={residual:.6g} steps={traj.steps}')
        for path in written:
            print(path)

    async def cmd_tensor(self, args):
        """
        tensor --config F --out DIR
                                write the limit tensor, the epsilon tensors and their errors
        """
        cfg = self._load(args)
        out = outputs.ensure_directory(self._out(args, cfg))
        limit = limit_tensor_field(cfg.connectivity, cfg.base, cfg.tensor_resolution)
        written = [outputs.write_tensor_csv(limit, os.path.join(out, 'tensor_limit.csv'))]
        epsilons = list(cfg.epsilons)
        if cfg.epsilon is not None and cfg.epsilon not in epsilons:
            epsilons.append(cfg.epsilon)
        errors = []
        for epsilon in sorted(epsilons, reverse=True):
            field = epsilon_tensor_field(build_graph(cfg.base, cfg.connectivity, epsilon))
            interior = cfg.grid.interior_mask(epsilon * cfg.connectivity.support_radius)
            errors.append((epsilon, tensor_error(field, limit, interior)))
            if epsilon == cfg.epsilon:
                written.append(outputs.write_tensor_csv(field, os.path.join(out, 'tensor_eps.csv')))
        written.append(outputs.write_tensor_error_csv(errors, os.path.join(out, 'tensor_errors.csv')))
        for epsilon, error in errors:
            print(f'eps={epsilon:g} tensor_err={error:.6g}')
        for path in written:
            print(path)

    async def cmd_sweep(self, args):
        """
        sweep --config F --out DIR [--threads N]
                                run the graph-to-local epsilon sweep
        """
        cfg = self._load(args)
        report = await run_sweep_async(cfg.sweep_config(threads=getattr(args, 'threads', None)))
        written = outputs.emit_outputs(report, self._out(args, cfg), svg=self._svg(args, cfg))
        for row in report.rows:
            print(f'eps={row.epsilon:g} species={row.species} distance_T={row.distance_T:.6g} '
                  f'tensor_err={row.tensor_err:.6g}' + (f' error={row.error}' if row.error else ''))
        for path in written:
            print(path)
        if report.failed_rows():
            raise RuntimeError(f'{len(report.failed_rows())} sweep row(s) failed')
