import os
import sys
import json
import logging
import argparse

from prettytable import PrettyTable

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.args import OUTPUT_ROOT_ENV, config_rows, load_scenario, scenario_help
from src.analysis.ledger import LedgerInput, build_report
from src.exceptions import ConfigError, FieldDomainError, InfeasibleInput, MagshieldError
from src.run_simulation import run_directory, run_pairs, run_scenario, sweep, sweep_directory, pair_directory
from src.run_visualization import PLOT_KINDS, emit_plot_data

logger = logging.getLogger()

EXIT_OK = 0
EXIT_RUN_ERROR = 1
EXIT_INFEASIBLE = 2


def build_parser():
    parser = argparse.ArgumentParser(description='Particle simulation of a plasma confined by a singular magnetic '
                                                 'wall field against an attractive wall potential')
    subparsers = parser.add_subparsers(dest='command', required=True)

    scenario_keys = dict(epilog=scenario_help(), formatter_class=argparse.RawDescriptionHelpFormatter)

    run = subparsers.add_parser('run', help='Run one scenario', **scenario_keys)
    run.add_argument('config', help='Scenario YAML file')
    run.add_argument('--disable_progress', action='store_true', help='Hide the progress bar')

    sweep_parser = subparsers.add_parser('sweep', help='Sweep the scenario over a (mu, tau) grid', **scenario_keys)
    sweep_parser.add_argument('config', help='Base scenario YAML file')
    sweep_parser.add_argument('--mu', type=float, nargs='+', required=True, help='Potential exponents')
    sweep_parser.add_argument('--tau', type=float, nargs='+', required=True, help='Magnetic exponents')
    sweep_parser.add_argument('--repeats', type=int, default=1, help='Seeds per grid cell')
    sweep_parser.add_argument('--workers', type=int, default=None, help='Worker pool size')

    ledger = subparsers.add_parser('ledger', help='Check the parameter inequalities and print the ladder')
    ledger.add_argument('--mu', required=True, help='Potential exponent (decimal or p/q)')
    ledger.add_argument('--tau', required=True, help='Magnetic exponent (decimal or p/q)')
    ledger.add_argument('--gamma', default='3/5', help='Field-average exponent, < 2/3')
    ledger.add_argument('--c6', default='1', help='Field constant C6')
    ledger.add_argument('--vmax', default='10', help='Velocity scale V of the ladder')
    ledger.add_argument('--interval', action='store_true', help='Outward-rounded interval arithmetic')
    ledger.add_argument('--json', action='store_true', help='Also print the report as JSON on stdout')

    plot = subparsers.add_parser('plot', help='Write plot-ready data for a run or a sweep')
    plot.add_argument('id', help='Run id, or sweep directory name for --kind frontier')
    plot.add_argument('--kind', choices=PLOT_KINDS, default='timeseries')
    plot.add_argument('--output_root', default=None, help='Directory holding the runs')

    pair = subparsers.add_parser('pair', help='Cutoff ladder: matched runs at cutoffs N and N + 1', **scenario_keys)
    pair.add_argument('config', help='Base scenario YAML file')
    pair.add_argument('--cutoffs', type=float, nargs='+', required=True, help='Cutoffs N')
    pair.add_argument('--thermal_units', action='store_true',
                      help='Read the cutoffs as multiples of the thermal speed sqrt(1/(2 lambda))')
    pair.add_argument('--repeats', type=int, default=1, help='Seeds per cutoff')
    pair.add_argument('--workers', type=int, default=None, help='Worker pool size')
    return parser


def add_file_handler(path):
    os.makedirs(path, exist_ok=True)
    file = logging.FileHandler(os.path.join(path, 'info.log'))
    file.setLevel(level=logging.INFO)
    formatter = logging.Formatter('[%(asctime)s | %(filename)s | line %(lineno)d] - %(levelname)s: %(message)s')
    file.setFormatter(formatter)
    logger.addHandler(file)


def log_configuration(rows):
    config_table = PrettyTable()
    config_table.field_names = ["Configuration", "Value"]
    config_table.align["Configuration"] = "l"
    config_table.align["Value"] = "l"
    for config, value in rows:
        config_table.add_row([config, str(value)])
    logger.info('Configuration:\n{}'.format(config_table))


def do_run(args):
    scenario = load_scenario(args.config)
    add_file_handler(run_directory(scenario))
    log_configuration(config_rows(scenario))
    manifest = run_scenario(scenario, disable_progress=args.disable_progress)
    return EXIT_OK if manifest['status'] == 'completed' else EXIT_RUN_ERROR


def do_sweep(args):
    scenario = load_scenario(args.config)
    add_file_handler(sweep_directory(scenario, args.mu, args.tau, args.repeats))
    log_configuration(config_rows(scenario) + [('sweep.mu', args.mu), ('sweep.tau', args.tau),
                                               ('sweep.repeats', args.repeats)])
    sweep(scenario, args.mu, args.tau, repeats=args.repeats, workers=args.workers)
    return EXIT_OK


def do_ledger(args):
    try:
        inp = LedgerInput.from_values(args.mu, args.tau, gamma=args.gamma, c6=args.c6, vmax=args.vmax,
                                      exact=not args.interval)
        report = build_report(inp)
    except (InfeasibleInput, FieldDomainError, ValueError, ZeroDivisionError) as e:
        logger.error(str(e))
        if args.json:
            print(json.dumps({'mu': args.mu, 'tau': args.tau, 'shield_ok': False, 'error': str(e)}, indent=2))
        return EXIT_INFEASIBLE
    logger.info('Ledger:\n{}'.format(report.to_table()))
    if args.json:
        print(report.to_json())
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def do_plot(args):
    root = args.output_root or os.environ.get(OUTPUT_ROOT_ENV) or './runs'
    emit_plot_data(args.id, args.kind, root)
    return EXIT_OK


def do_pair(args):
    scenario = load_scenario(args.config)
    cutoffs = args.cutoffs
    if args.thermal_units:
        cutoffs = [n * scenario.datum.thermal_speed for n in cutoffs]
    add_file_handler(pair_directory(scenario, cutoffs, args.repeats))
    log_configuration(config_rows(scenario) + [('pair.cutoffs', cutoffs), ('pair.repeats', args.repeats)])
    report, _ = run_pairs(scenario, cutoffs, repeats=args.repeats, workers=args.workers)
    return EXIT_OK if report.monotone else EXIT_RUN_ERROR


COMMANDS = {'run': do_run, 'sweep': do_sweep, 'ledger': do_ledger, 'plot': do_plot, 'pair': do_pair}


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = list(logger.handlers)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InfeasibleInput) as e:
        logger.error(f'{type(e).__name__}: {e}')
        return EXIT_INFEASIBLE
    except (MagshieldError, ValueError) as e:
        logger.error(f'{type(e).__name__}: {e}')
        return EXIT_RUN_ERROR
    finally:
        for handler in [h for h in logger.handlers if h not in handlers]:
            logger.removeHandler(handler)
            handler.close()


if __name__ == '__main__':
    logger.setLevel(level=logging.INFO)

    console = logging.StreamHandler()
    console.setLevel(level=logging.INFO)
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s: %(message)s')
    console.setFormatter(formatter)
    logger.addHandler(console)

    logger.info('COMMAND: {}'.format(' '.join(sys.argv)))
    logger.info('-' * 100)
    sys.exit(main())
