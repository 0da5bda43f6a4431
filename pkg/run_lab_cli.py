#!/usr/bin/env python3

import argparse
import asyncio
import logging
import sys

from nlielab import logging_default as log
from nlielab.command_line_interface import LabCLI
from nlielab.config import output_directory_of

logger = logging.getLogger(__name__)

"""Runs experiments on multi-species interaction energies over epsilon-localizing graphs.

Usage:
    run_lab_cli.py validate --config <experiment.toml>
    run_lab_cli.py simulate --config <experiment.toml> [--out <dir>] [--svg] [--record-every <n>]
    run_lab_cli.py simulate-local --config <experiment.toml> [--out <dir>] [--svg] [--record-every <n>]
    run_lab_cli.py tensor --config <experiment.toml> [--out <dir>]
    run_lab_cli.py sweep --config <experiment.toml> [--out <dir>] [--svg] [--threads <n>]
    run_lab_cli.py help

Options:
    --out <dir>             Output directory, [output] directory of the experiment if omitted.
    --svg                   Also write SVG plots.
    --record-every <n>      Record every n-th step, overrides [integrator] record_every.
    --threads <n>           Parallel epsilon rows of a sweep.
    -l --log <name>         Also write a debug logfile <date>_<name>.log.
    -v --verbose            Debug output on the console.

Exit codes: 0 success, 1 configuration error, 2 run failure.
"""


def _parser():
    parser = argparse.ArgumentParser(description='nonlocal interaction energies on epsilon-localizing graphs')
    parser.add_argument('-l', '--log', help='logfile name, written next to the outputs')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug output on the console')
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('help', help='list commands')
    for name, text in (('validate', 'print the assumption reports'),
                       ('simulate', 'graph dynamics at [graph] epsilon'),
                       ('simulate-local', 'local tensor weighted dynamics'),
                       ('tensor', 'limit and epsilon tensors'),
                       ('sweep', 'graph-to-local epsilon sweep')):
        sub = commands.add_parser(name, help=text)
        sub.add_argument('--config', required=True, help='experiment TOML file')
        if name == 'validate':
            continue
        sub.add_argument('--out', default=None, help='output directory')
        if name != 'tensor':
            sub.add_argument('--svg', action='store_true', help='write SVG plots')
        if name in ('simulate', 'simulate-local', 'sweep'):
            sub.add_argument('--record-every', dest='record_every', type=int, default=None)
        if name == 'sweep':
            sub.add_argument('--threads', type=int, default=None)
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    directory = getattr(args, 'out', None)
    if directory is None and args.log is not None and getattr(args, 'config', None) is not None:
        directory = output_directory_of(args.config)
    log.configure(console_level=logging.DEBUG if args.verbose else logging.INFO, logfile_name=args.log,
                  directory=directory)
    cli = LabCLI()
    return asyncio.run(cli.run(args.command, args))


if __name__ == '__main__':
    sys.exit(main())
