"""
JamSim command line

    python -m src.app simulate --config scenarios/pusch-targeted.yaml --seed 7 --out run.csv
    python -m src.app sweep --config scenarios/pusch-targeted.yaml --out sweep.csv
    python -m src.app compare --a pucch.csv --b pusch.csv --check pucch-vs-pusch
    python -m src.app verify-si --corpus scenarios/sib-auth-corpus.yaml
    python -m src.app sessions

Exit codes: 0 success, 1 configuration or input error, 2 failed check.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

try:
    from src.analysis import CHECKS, compare_figures
    from src.config import config
    from src.harness import SweepTable, run_scenario, run_sweep
    from src.output_manager import OutputManager, export_csv
    from src.performance_optimizer import performance_optimizer
    from src.result_cache import open_cache
    from src.scenario import ConfigError, load_scenario, sweep_from_scenario
    from src.sib_auth import SignatureError, verify_corpus
    from src.utils import setup_logging
except ImportError:
    from analysis import CHECKS, compare_figures
    from config import config
    from harness import SweepTable, run_scenario, run_sweep
    from output_manager import OutputManager, export_csv
    from performance_optimizer import performance_optimizer
    from result_cache import open_cache
    from scenario import ConfigError, load_scenario, sweep_from_scenario
    from sib_auth import SignatureError, verify_corpus
    from utils import setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CHECK_FAILED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='jamsim', description=config.APP_DESCRIPTION)
    parser.add_argument('--log-level', default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', help="run one scenario")
    simulate.add_argument('--config', default=None,
                          help="scenario file or name under scenarios/ (default from settings)")
    simulate.add_argument('--seed', type=int, default=None)
    simulate.add_argument('--out', default=None, help="one-row sweep-format CSV")
    simulate.add_argument('--series-out', default=None, help="throughput time series CSV")
    simulate.add_argument('--session', action='store_true', help="also archive results in a dated output session")

    sweep = sub.add_parser('sweep', help="run the jammer-gain sweep of a scenario")
    sweep.add_argument('--config', required=True)
    sweep.add_argument('--out', required=True)
    sweep.add_argument('--runs', type=int, default=None, help="runs per gain")
    sweep.add_argument('--gains', default=None, help="comma-separated gains in dB")
    sweep.add_argument('--workers', type=int, default=None)
    sweep.add_argument('--cache-dir', default=None)
    sweep.add_argument('--session', action='store_true', help="also archive the table in a dated output session")

    compare = sub.add_parser('compare', help="check a pair of sweep CSVs")
    compare.add_argument('--a', required=True)
    compare.add_argument('--b', required=True)
    compare.add_argument('--check', required=True, choices=CHECKS)
    compare.add_argument('--window-fraction', type=float, default=None,
                         help="share of the run the jammer was active (pucch-vs-pusch)")

    verify = sub.add_parser('verify-si', help="verify a signed system-information corpus")
    verify.add_argument('--corpus', required=True)

    sub.add_parser('sessions', help="list archived output sessions, newest first")
    return parser


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.config or config.SIMULATION['default_scenario'])
    metrics = run_scenario(scenario, args.seed)
    gain = scenario.jammer.gain_db if scenario.jammer else 0.0
    print(f"{scenario.name}: offered={metrics.packets_offered} received={metrics.packets_received} "
          f"dropped={metrics.packets_dropped} retransmissions={metrics.retransmissions} "
          f"rlf={metrics.rlf_count} rnti_changes={metrics.rnti_changes} crashed={metrics.crashed} "
          f"time_to_recovery_s={metrics.time_to_recovery_s}")
    row = SweepTable([metrics.summary_row(gain, 0)])
    if args.out:
        export_csv(row, args.out)
    if args.series_out:
        export_csv(metrics, args.series_out)
    if args.session:
        manager = OutputManager(config.DIRS['output'])
        session = manager.create_output_session(scenario.name, 'simulate', metrics.seed)
        manager.save_csv(session, 'run', row)
        manager.save_csv(session, 'series', metrics)
        manager.save_metrics(session, 'metrics', metrics)
        print(f"session: {session}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.config)
    gains = [float(g) for g in args.gains.split(',')] if args.gains else None
    sweep = sweep_from_scenario(scenario, gains, args.runs, args.workers)
    cache_dir = args.cache_dir
    if cache_dir is None and config.CACHE['enabled']:
        cache_dir = config.DIRS['cache']
    cache = open_cache(cache_dir, config.CACHE)
    try:
        table = run_sweep(sweep, cache, show_progress=config.SWEEP['show_progress'],
                          batch_size=config.SWEEP['batch_size'])
    finally:
        if cache is not None:
            cache.close()
    export_csv(table, args.out)
    print(f"{scenario.name}: {len(table.rows)} rows written to {args.out}")
    for failure in table.failures:
        print(f"  failed cell gain={failure['gain_db']} run={failure['run']}: {failure['error']}")
    if args.session:
        manager = OutputManager(config.DIRS['output'])
        session = manager.create_output_session(scenario.name, 'sweep', sweep.base_seed)
        manager.save_csv(session, 'sweep', table)
        manager.annotate(session, failures=table.failures,
                         performance=performance_optimizer.get_performance_stats())
        print(f"session: {session}")
    return EXIT_OK


def cmd_compare(args) -> int:
    report = compare_figures(args.a, args.b, args.check, args.window_fraction)
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_verify_si(args) -> int:
    results = verify_corpus(args.corpus)
    for result in results:
        mark = 'ok' if result['ok'] else 'MISMATCH'
        print(f"{result['name']}: {result['verdict']} (expected {result['expected']}) {mark}")
    return EXIT_OK if all(r['ok'] for r in results) else EXIT_CHECK_FAILED


def cmd_sessions(args) -> int:
    sessions = OutputManager(config.DIRS['output']).list_sessions()
    if not sessions:
        print(f"no sessions under {config.DIRS['output']}")
    for session in sessions:
        files = ', '.join(session.get('files', []))
        print(f"{session.get('session_id')}: {session.get('command')} {session.get('scenario')} [{files}]")
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'sweep': cmd_sweep,
    'compare': cmd_compare,
    'verify-si': cmd_verify_si,
    'sessions': cmd_sessions,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(config.LOGGING, args.log_level)
    environment = config.validate_environment()
    for issue in environment['errors'] + environment['warnings']:
        logger.warning(f"{issue['field']}: {issue['message']}")
    for issue in environment['info']:
        logger.debug(f"{issue['field']}: {issue['message']}")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"configuration error: {e}")
        return EXIT_CONFIG
    except (FileNotFoundError, SignatureError, ValueError) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
