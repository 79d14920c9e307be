"""
Command line frontend: ``ebl-dose <command> [options]``.

Each command reads an optional TOML run file (``--config``); flags override
the file. Exit codes: 0 success, 1 validation, 2 numeric, 3 I/O.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError
import uvicorn

from src.conf.config import TOOL_VERSION, configure_logging
from src.services.errors import EXIT_OK, EblError, exit_code_for
from src.services.geometry import GeometryKind
from src.services.pipeline import json_safe, load_run_config, run_command

logger = logging.getLogger(__name__)

GEOMETRIES = [kind.value for kind in GeometryKind]


def _common() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--config', type=Path, help='TOML run file')
    parent.add_argument('--out', type=Path, help='output directory')
    parent.add_argument('--seed', type=int, help='random seed')
    parent.add_argument('--threads', type=int, help='worker threads')
    parent.add_argument('--json', action='store_true', help='machine-readable summary')
    parent.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
    return parent


def _kernel_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--analytic', action='store_true',
                        help='analytic kernels (power law + forward Gaussian)')
    parser.add_argument('--kernels', type=Path, help='folder with kernel grids from psf')
    parser.add_argument('--pitch', type=float, help='grid pitch in nm')
    parser.add_argument('--half-width', type=float, help='kernel half-width in nm')


def _layout_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--geometry', choices=GEOMETRIES, help='built-in geometry')
    parser.add_argument('--layout', type=Path, help='layout file')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='ebl-dose',
        description='Electron-beam lithography dose simulation for Josephson junction bridges',
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {TOOL_VERSION}')
    commands = parser.add_subparsers(dest='command', required=True)
    common = _common()

    simulate = commands.add_parser('simulate', parents=[common],
                                   help='Monte Carlo transport to an event dump')
    simulate.add_argument('--stack', type=Path, help='stack and beam TOML file')
    simulate.add_argument('--trajectories', type=int, help='number of electrons')

    psf = commands.add_parser('psf', parents=[common], help='radial PSF, fits and kernels')
    psf.add_argument('--events', type=Path, help='event dump')
    psf.add_argument('--exits', type=Path, help='exits file (default: next to the events)')
    psf.add_argument('--bins', type=int, help='radial bins')
    psf.add_argument('--pitch', type=float, help='kernel pitch in nm')
    psf.add_argument('--half-width', type=float, help='kernel half-width in nm')

    dosemap = commands.add_parser('dosemap', parents=[common], help='dose maps and metrics')
    _layout_flags(dosemap)
    _kernel_flags(dosemap)
    dosemap.add_argument('--oracle', action='store_true', help='direct summation convolution')

    pec = commands.add_parser('pec', parents=[common], help='proximity effect correction')
    _layout_flags(pec)
    _kernel_flags(pec)
    pec.add_argument('--target', type=float, help='target mean dose per shape')
    pec.add_argument('--tol', type=float, help='relative tolerance')
    pec.add_argument('--max-iter', type=int, help='maximum iterations')

    sweep = commands.add_parser('sweep', parents=[common], help='dose window sweep')
    _layout_flags(sweep)
    _kernel_flags(sweep)
    sweep.add_argument('--start', type=float, help='first base dose')
    sweep.add_argument('--stop', type=float, help='last base dose')
    sweep.add_argument('--step', type=float, help='dose step')

    reproduce = commands.add_parser('reproduce-paper', parents=[common],
                                    help='full chain with a report of the reference checks')
    reproduce.add_argument('--stack', type=Path, help='stack and beam TOML file')
    reproduce.add_argument('--trajectories', type=int, help='number of electrons')
    _kernel_flags(reproduce)

    serve = commands.add_parser('serve', help='start the HTTP service')
    serve.add_argument('--host', default='127.0.0.1')
    serve.add_argument('--port', type=int, default=8000)
    serve.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
    return parser


def overrides_from(args: argparse.Namespace) -> dict:
    """
    The overrides_from function turns parsed flags into the nested shape of
    a run file; flags that were not given are left out.

    :param args: Parsed arguments
    :return: Nested dict for load_run_config
    """
    def get(name):
        return getattr(args, name, None)

    return {
        'stack': get('stack'),
        'events': get('events'),
        'exits': get('exits'),
        'output_dir': get('out'),
        'seed': get('seed'),
        'threads': get('threads'),
        'trajectory_count': get('trajectories'),
        'oracle': get('oracle') or None,
        'kernel': {
            'source': 'analytic' if get('analytic') else ('table' if get('kernels') else None),
            'directory': get('kernels'),
            'pitch': get('pitch'),
            'half_width': get('half_width'),
            'bins': get('bins'),
        },
        'geometry': {'name': get('geometry'), 'layout': get('layout')},
        'pec': {'target': get('target'), 'tol': get('tol'), 'max_iter': get('max_iter')},
        'sweep': {'start': get('start'), 'stop': get('stop'), 'step': get('step')},
    }


def serve(args: argparse.Namespace) -> int:
    uvicorn.run('main:app', host=args.host, port=args.port,
                log_level=(args.log_level or 'info').lower())
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """
    The main function parses the command line, runs the command and maps
    failures to exit codes. Partial outputs of a failed command are removed.

    :param argv: Arguments, defaults to sys.argv[1:]
    :return: Process exit code
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    if args.command == 'serve':
        return serve(args)
    try:
        config = load_run_config(args.config, overrides_from(args))
        result = run_command(args.command, config)
    except (EblError, ValidationError, OSError) as error:
        print(f'error: {error}', file=sys.stderr)
        return exit_code_for(error)
    if args.json:
        print(json.dumps(json_safe(result.as_dict()), indent=2, sort_keys=True, default=str))
    else:
        print(result.render())
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
