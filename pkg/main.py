"""
FSCIL command-line front end.

Commands:
    run        execute the full protocol and write the run record and metrics
    metrics    summarize an accuracy-matrix CSV (PD, NLA, BMA)
    angles     psi | minangle | trace | export angular diagnostics
    gradcheck  finite-difference check of every loss

Exit codes: 0 success, 1 runtime failure, 2 usage or validation failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from fscil_analysis import (
    angle_report,
    base_to_new_ratio,
    expected_min_angle,
    export_embeddings,
    min_angle_study,
    psi_trace,
)
from fscil_base import (
    ConfigurationError,
    DatasetParseError,
    FscilError,
    PhaseResultEncoder,
    SchemaError,
)
from fscil_config import RunConfig, load_run_config, resolved_config_dict
from fscil_constants import EXIT_CODES, OUTPUT_FILES
from fscil_diagnostics import run_gradcheck_suite
from fscil_logging import get_cli_logger, setup_logging
from fscil_metrics import read_metrics_csv, summary, write_metrics_csv
from fscil_model import load_checkpoint
from fscil_protocol import build_plan, run_full
from fscil_utils import write_json
from run_status import RunStatusManager

logger = get_cli_logger()

# Errors caused by the invocation rather than by the computation
USAGE_ERRORS = (ConfigurationError, SchemaError, DatasetParseError, FileNotFoundError)


# =============================================================================
# RUN
# =============================================================================

def _log_failure_context(status: RunStatusManager) -> None:
    snapshot = status.get_status()
    last = snapshot['last_phase']
    if last and last['status'] == 'FAILED':
        logger.error(
            f"Run stopped in phase {last['phase']} (session {last['session']}) "
            f"after {last['epochs']} epochs, last loss {last['last_loss']}"
        )
    for line in snapshot['logs']:
        logger.debug(line)


def _run_once(config: RunConfig, output_dir: Path) -> Dict:
    plan = build_plan(config)
    status = RunStatusManager()
    try:
        record = run_full(config, plan, output_dir, status=status)
    except FscilError:
        _log_failure_context(status)
        raise
    resolved = resolved_config_dict(config)

    write_json(output_dir / OUTPUT_FILES['run_record'], record.to_dict())
    write_metrics_csv(output_dir / OUTPUT_FILES['metrics_csv'], record.matrix)
    report = summary(record.matrix)
    if plan.num_sessions > 1:
        report['base_to_new_ratio'] = base_to_new_ratio(record.network, plan, plan.num_sessions)
    write_json(output_dir / OUTPUT_FILES['metrics_summary'], {'config': resolved, 'summary': report})
    write_json(output_dir / OUTPUT_FILES['phase_timings'], record.timings)
    logger.debug(f"Phase results: {json.dumps(record.phase_results, cls=PhaseResultEncoder)}")

    if config.analysis.angle_report:
        angles = angle_report(record.network, plan.train_split(1), list(plan.base_classes))
        write_json(output_dir / OUTPUT_FILES['angle_report'], {'config': resolved, **angles.to_dict()})
    if config.evaluation.export_embeddings:
        export_embeddings(record.network, plan.test_samples, output_dir / OUTPUT_FILES['embeddings'])
    if config.analysis.psi_trace:
        paths = [output_dir / p for name, p in sorted(record.checkpoints.items()) if name.startswith('pretrain-epoch-')]
        trace = psi_trace(paths, plan.train_split(1), list(plan.base_classes))
        write_json(output_dir / OUTPUT_FILES['psi_trace'], {'config': resolved, 'trace': trace})

    for line in _summary_lines(report):
        print(line)
    return report


def _summary_lines(report: Dict) -> List[str]:
    return [f'{name.upper()}: {report[f"{name}_percent"] or "undefined"}' for name in ('pd', 'nla', 'bma')]


def cmd_run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, output_dir=args.output_dir)
    if args.seed is not None:
        config.seeds.model = args.seed
        config.seeds.train = args.seed
    root = Path(config.output_dir)

    if not args.sweep_seeds:
        _run_once(config, root)
        logger.info(f'Outputs written to {root}')
        return EXIT_CODES['success']

    first = config.seeds.train
    per_seed = []
    for k in range(args.sweep_seeds):
        config.seeds.model = first + k
        config.seeds.train = first + k
        logger.info(f'Sweep run {k + 1}/{args.sweep_seeds} (seed {first + k})')
        report = _run_once(config, root / f'seed-{first + k}')
        per_seed.append({'seed': first + k, **{m: report[m] for m in ('pd', 'nla', 'bma')}})

    means = {}
    for metric in ('pd', 'nla', 'bma'):
        values = [r[metric] for r in per_seed if r[metric] is not None]
        means[metric] = sum(values) / len(values) if values else None
    config.seeds.model = first
    config.seeds.train = first
    write_json(root / OUTPUT_FILES['sweep_summary'],
               {'config': resolved_config_dict(config), 'runs': per_seed, 'mean': means})
    logger.info(f'Sweep of {args.sweep_seeds} seeds written to {root}')
    return EXIT_CODES['success']


# =============================================================================
# METRICS
# =============================================================================

def cmd_metrics(args: argparse.Namespace) -> int:
    matrix = read_metrics_csv(args.csv, percent=args.percent)
    report = summary(matrix)
    output = Path(args.output) if args.output else Path(args.csv).with_name(OUTPUT_FILES['metrics_summary'])
    write_json(output, report)
    for line in _summary_lines(report):
        print(line)
    return EXIT_CODES['success']


# =============================================================================
# ANGLES
# =============================================================================

def _training_samples(config: RunConfig):
    plan = build_plan(config)
    samples = [s for t in range(1, plan.num_sessions + 1) for s in plan.train_split(t)]
    return plan, samples


def cmd_angles(args: argparse.Namespace) -> int:
    if args.angles_command == 'minangle':
        value = min_angle_study(args.n, args.d, args.seed, memory_cap_mb=args.memory_cap_mb)
        result = {'n': args.n, 'd': args.d, 'seed': args.seed, 'min_angle_degrees': value}
        if args.n >= 3:
            result['gaussian_estimate_degrees'] = expected_min_angle(args.n, args.d)
        print(f'phi({args.n}, {args.d}) = {value:.4f} degrees')
        write_json(Path(args.output or OUTPUT_FILES['min_angle']), result)
        return EXIT_CODES['success']

    config = load_run_config(args.config)
    plan, samples = _training_samples(config)

    if args.angles_command == 'psi':
        network, _ = load_checkpoint(args.checkpoint)
        classes = network.classifiers.class_ids or list(plan.base_classes)
        report = angle_report(network, samples, classes)
        print(f'psi = {report.psi_degrees:.4f} degrees over {report.n_classes} classes')
        write_json(Path(args.output or OUTPUT_FILES['angle_report']), report.to_dict())
        return EXIT_CODES['success']

    if args.angles_command == 'trace':
        trace = psi_trace(args.checkpoints, plan.train_split(1), list(plan.base_classes))
        for entry in trace:
            print(f"{entry['checkpoint']}: {entry['psi_degrees']:.4f}")
        write_json(Path(args.output or OUTPUT_FILES['psi_trace']), {'trace': trace})
        return EXIT_CODES['success']

    network, _ = load_checkpoint(args.checkpoint)
    split = plan.test_samples if args.split == 'test' else samples
    path = export_embeddings(network, split, Path(args.output or OUTPUT_FILES['embeddings']))
    print(f'Exported {len(split)} embeddings to {path}')
    return EXIT_CODES['success']


# =============================================================================
# GRADCHECK
# =============================================================================

def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = load_run_config(args.config).gradcheck
    if args.gradient_scale is not None:
        config.gradient_scale = args.gradient_scale
    results = run_gradcheck_suite(config)

    print(f'{"loss":<10} {"max rel. error":>15}  worst coordinate')
    failures = []
    for name, result in results.items():
        where = f'{result.worst_parameter}[{result.worst_index}]' if result.worst_parameter else '-'
        print(f'{name:<10} {result.max_relative_error:>15.3e}  {where}')
        if result.max_relative_error > config.tolerance:
            failures.append(f'{name} at {where}')

    if failures:
        logger.error(f'gradcheck failed (tolerance {config.tolerance:g}): {"; ".join(failures)}')
        return EXIT_CODES['runtime_failure']
    return EXIT_CODES['success']


# =============================================================================
# ENTRY POINT
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='fscil', description='Few-shot class-incremental learning engine')
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--log-file', default=None, help='Also write a DEBUG log to this file')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='Run the full protocol')
    run.add_argument('--config', required=True)
    run.add_argument('--output-dir', default=None, help='Overrides output_dir and BSC_OUTPUT_DIR')
    run.add_argument('--seed', type=int, default=None, help='Model and training seed')
    run.add_argument('--sweep-seeds', type=int, default=0, metavar='K', help='Repeat over K consecutive seeds')
    run.set_defaults(handler=cmd_run)

    metrics = sub.add_parser('metrics', help='Summarize an accuracy-matrix CSV')
    metrics.add_argument('csv')
    metrics.add_argument('--percent', action='store_true', help='Values are percentages')
    metrics.add_argument('--output', default=None)
    metrics.set_defaults(handler=cmd_metrics)

    angles = sub.add_parser('angles', help='Angular diagnostics')
    angles_sub = angles.add_subparsers(dest='angles_command', required=True)
    a_psi = angles_sub.add_parser('psi')
    a_psi.add_argument('--checkpoint', required=True)
    a_psi.add_argument('--config', required=True)
    a_psi.add_argument('--output', default=None)
    a_min = angles_sub.add_parser('minangle')
    a_min.add_argument('--n', type=int, required=True)
    a_min.add_argument('--d', type=int, required=True)
    a_min.add_argument('--seed', type=int, default=0)
    a_min.add_argument('--memory-cap-mb', type=float, default=256.0)
    a_min.add_argument('--output', default=None)
    a_trace = angles_sub.add_parser('trace')
    a_trace.add_argument('--checkpoints', nargs='+', required=True)
    a_trace.add_argument('--config', required=True)
    a_trace.add_argument('--output', default=None)
    a_export = angles_sub.add_parser('export')
    a_export.add_argument('--checkpoint', required=True)
    a_export.add_argument('--config', required=True)
    a_export.add_argument('--split', choices=['train', 'test'], default='test')
    a_export.add_argument('--output', default=None)
    angles.set_defaults(handler=cmd_angles)

    gradcheck = sub.add_parser('gradcheck', help='Finite-difference check of every loss')
    gradcheck.add_argument('--config', default=None)
    gradcheck.add_argument('--gradient-scale', type=float, default=None, help='Corrupt analytic gradients (testing)')
    gradcheck.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CODES['success'] if e.code == 0 else EXIT_CODES['usage_error']

    setup_logging(level=getattr(logging, args.log_level), log_to_file=bool(args.log_file), log_file=args.log_file)

    try:
        return args.handler(args)
    except USAGE_ERRORS as e:
        logger.error(f'Usage error: {e}')
        return EXIT_CODES['usage_error']
    except FscilError as e:
        logger.error(f'Runtime failure: {e}')
        return EXIT_CODES['runtime_failure']
    except Exception as e:
        logger.exception(f'Unexpected failure: {e}')
        return EXIT_CODES['runtime_failure']


if __name__ == "__main__":
    sys.exit(main())
