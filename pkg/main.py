"""
batchbound — Main Entry Point
Multi-batch policy evaluation / best-policy identification games against a lazily
committing adversary, with verification suites and budget reports.
"""

import argparse
import asyncio
import json
import logging
import os
import sys

from dotenv import load_dotenv

from core.errors import AdversaryDefeated, ConfigError, IllConditionedError, InvariantBreach

# ─────────────────────── Environment ───────────────────────

load_dotenv()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVARIANT = 2
EXIT_CONFIG = 3

logger = logging.getLogger('batchbound')


# ─────────────────────── Logging Setup ───────────────────────

def setup_logging(level: str | None = None):
    level = (level or os.getenv('BATCHBOUND_LOG_LEVEL') or 'INFO').upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s | %(name)-25s | %(levelname)-8s | %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        force=True,
    )


# ─────────────────────── Argument Parsing ───────────────────────

class ArgumentParser(argparse.ArgumentParser):
    """Bad command lines are configuration errors (exit 3)."""

    def error(self, message):
        raise ConfigError('argv', message)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='batchbound', description='Multi-batch RL lower-bound games 🎲')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    simulate = sub.add_parser('simulate', help='play one game from a config file')
    _config_args(simulate)

    protocol = sub.add_parser('protocol', help='protocol commands')
    protocol_sub = protocol.add_subparsers(dest='action', required=True, parser_class=ArgumentParser)
    _config_args(protocol_sub.add_parser('run', help='run the multi-batch protocol'))

    adversary = sub.add_parser('adversary', help='adversary commands')
    adversary_sub = adversary.add_subparsers(dest='action', required=True, parser_class=ArgumentParser)
    play = adversary_sub.add_parser('play', help='play against the lazy adversary')
    _config_args(play)
    play.add_argument('--on-defeat', choices=('raise', 'commit'), default='raise')

    sweep = sub.add_parser('sweep', help='grid of games written to sweep.csv')
    sweep.add_argument('--d', type=int, nargs='+', required=True)
    sweep.add_argument('--K', type=int, nargs='+', required=True)
    sweep.add_argument('--n', type=int, nargs='+', required=True)
    sweep.add_argument('--config', help='base JSON config for every cell')
    sweep.add_argument('--gamma', type=float, default=None)
    sweep.add_argument('--problem', choices=('PE', 'BPI'), default=None)
    sweep.add_argument('--learner', default=None)
    sweep.add_argument('--adversary', default=None)
    sweep.add_argument('--seed', type=int, default=None)
    sweep.add_argument('--out', default=None)
    sweep.add_argument('--jobs', type=int, default=None)

    verify = sub.add_parser('verify', help='run a property suite')
    verify.add_argument('what', choices=('realizability', 'geometry', 'packing', 'all'))
    verify.add_argument('--d', type=int, default=4)
    verify.add_argument('--samples', type=int, default=1000)
    verify.add_argument('--instances', type=int, default=50)
    verify.add_argument('--cases', type=int, default=1000)
    verify.add_argument('--pairs', type=int, default=10_000)
    verify.add_argument('--grid-points', type=int, default=1_000_000)
    verify.add_argument('--configs', type=int, default=1000)
    verify.add_argument('--seed', type=int, default=0)

    learner = sub.add_parser('learner', help='learner commands')
    learner_sub = learner.add_subparsers(dest='action', required=True, parser_class=ArgumentParser)
    solve = learner_sub.add_parser('solve', help='run the exact solver on an instance file')
    solve.add_argument('--env', required=True)
    solve.add_argument('--gamma', type=float, default=None)

    packing = sub.add_parser('packing', help='packing commands')
    packing_sub = packing.add_subparsers(dest='action', required=True, parser_class=ArgumentParser)
    pverify = packing_sub.add_parser('verify', help='check a packing file against a d_min')
    pverify.add_argument('file')
    pverify.add_argument('--dmin', type=float, required=True)

    mdp = sub.add_parser('mdp', help='instance commands')
    mdp_sub = mdp.add_subparsers(dest='action', required=True, parser_class=ArgumentParser)
    realizability = mdp_sub.add_parser('verify-realizability', help='Bellman residual of an instance file')
    realizability.add_argument('file')
    realizability.add_argument('--samples', type=int, default=1000)
    realizability.add_argument('--seed', type=int, default=0)

    bounds = sub.add_parser('bounds', help='print the budget report')
    bounds.add_argument('--d', type=int, required=True)
    bounds.add_argument('--K', type=int, required=True)
    bounds.add_argument('--gamma', type=float, required=True)
    bounds.add_argument('--n', type=int, default=None)
    return parser


def _config_args(parser: argparse.ArgumentParser):
    parser.add_argument('--config', required=True, help='JSON experiment config')
    parser.add_argument('--seed', type=int, default=None)
    parser.add_argument('--out', default=None)


# ─────────────────────── Dispatch ───────────────────────

async def run_command(args) -> int:
    from commands import harness, verify
    from utils.config import apply_env_overrides, env_int, load_config, read_config_file
    from utils.report_builder import ReportBuilder

    if args.command in ('simulate', 'protocol', 'adversary'):
        overrides = {'seed': args.seed, 'output_dir': args.out}
        if args.command == 'adversary':
            overrides['on_defeat'] = args.on_defeat
        config = load_config(args.config, **overrides)
        report = await harness.cmd_simulate(config)
        print(ReportBuilder.game_report(report.to_dict()))
        if report.certificate:
            print(ReportBuilder.certificate(report.certificate))
        return EXIT_OK

    if args.command == 'sweep':
        base = apply_env_overrides(read_config_file(args.config) if args.config else {})
        base.setdefault('gamma', 0.9)
        for key, value in (('gamma', args.gamma), ('problem', args.problem),
                           ('learner_kind', args.learner), ('adversary_mode', args.adversary),
                           ('seed', args.seed), ('output_dir', args.out)):
            if value is not None:
                base[key] = value
        jobs = args.jobs if args.jobs is not None else env_int('BATCHBOUND_JOBS', 1)
        rows = await harness.cmd_sweep(args.d, args.K, args.n, base, jobs=jobs)
        for row in rows:
            print(f"cell {row['cell']:>3}: d={row['d']:<4} K={row['K']:<3} n_k={row['n_k']:<4} {row['outcome']}")
        return EXIT_OK

    if args.command == 'verify':
        summary = verify.cmd_verify(
            args.what, seed=args.seed, d=args.d, samples=args.samples, instances=args.instances,
            cases=args.cases, pairs=args.pairs, grid_points=args.grid_points, configs=args.configs,
        )
        print(ReportBuilder.verify(check.to_dict() for check in summary.checks))
        return EXIT_OK if summary.passed else EXIT_FAILED

    if args.command == 'learner':
        result = harness.cmd_learner_solve(args.env, args.gamma)
        print(json.dumps(result.to_dict(), indent=2))
        return EXIT_OK

    if args.command == 'packing':
        check = verify.cmd_packing_verify(args.file, args.dmin)
        print(json.dumps({'ok': check.ok, 'actual_dmin': check.actual_dmin,
                          'violating_pair': check.violating_pair}))
        return EXIT_OK if check.ok else EXIT_FAILED

    if args.command == 'mdp':
        report = verify.cmd_mdp_verify(args.file, args.samples, args.seed)
        print(json.dumps(report.to_dict()))
        return EXIT_OK if report.passed else EXIT_FAILED

    if args.command == 'bounds':
        report = harness.cmd_bounds(args.d, args.K, args.gamma, args.n)
        print(ReportBuilder.budget(report.to_dict()))
        return EXIT_OK

    raise ConfigError('command', f'unknown command {args.command!r}')


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        setup_logging()
        logger.error(f'❌ {e}')
        return EXIT_CONFIG
    setup_logging(args.log_level)

    try:
        return asyncio.run(run_command(args))
    except ConfigError as e:
        logger.error(f'❌ Config error: {e}')
        return EXIT_CONFIG
    except (InvariantBreach, IllConditionedError) as e:
        logger.error(f'❌ Invariant breach: {e}')
        return EXIT_INVARIANT
    except AdversaryDefeated as e:
        logger.warning(f'⚠️ {e}')
        return EXIT_OK
    except (FileNotFoundError, ValueError) as e:
        logger.error(f'❌ {e}')
        return EXIT_FAILED
    except KeyboardInterrupt:
        logger.info('👋 Interrupted')
        return EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
