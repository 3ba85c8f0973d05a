#!/usr/bin/env python3

import argparse
import logging
import sys
from dataclasses import asdict
from typing import Any, Callable, Dict, Optional

from pydantic import ValidationError

from config.logging_config import setup_logging
from config.settings import Settings
from src.exceptions import (
    ConvergenceError,
    EnvelopeViolationError,
    InfeasibleConstraintError,
    InfeasibleRuleError,
    MartingaleToolkitError,
)
from src.experiments import convergence_report, generate_equicontinuous, lambda_field, net_convergence_study
from src.filtration import dump_tree, envelope, load_tree_file
from src.lattice import generate_lattice
from src.measures import (
    BoltzmannRule,
    ConditionalRule,
    ExplicitRule,
    TwoPointRule,
    UniformFeasibleRule,
    build_measure,
    check_martingale,
    count_extremes,
    dump_measure,
    enumerate_extremes,
    equivalence_bounds,
    load_measure,
    measure_entropy_profile,
)
from src.models import EquicontinuousSpec, FiltrationTree, LatticeSpec, ProbabilityVector
from src.serialization import read_json, to_json, write_output
from src.study import (
    convergence_csv,
    create_default_config,
    load_config_from_file,
    netstudy_csv,
    read_sample,
)

logger = logging.getLogger("src.cli")

EXIT_OK = 0
EXIT_CONDITION_FAILED = 1
EXIT_USAGE = 2

DOMAIN_ERRORS = (EnvelopeViolationError, InfeasibleRuleError, InfeasibleConstraintError, ConvergenceError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Measure-free martingales: verify trees, build martingale measures, run studies",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py lattice --levels 3 --s0 1 --up 2 --down 0.5 --out tree.json
  python main.py verify tree.json
  python main.py build tree.json --rule boltzmann --out measure.json
  python main.py extremes tree.json --cap 10
  python main.py converge --seed 7 --depth 12
  python main.py netstudy sample.json --alpha 0.5 --eps 0.2 0.1 0.05
        """
    )
    parser.add_argument('--log-level', default=None, help='Logging level (default: MFM_LOG_LEVEL)')
    parser.add_argument('--log-file', default=None, help='Also write logs to this file')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    verify_cmd = subparsers.add_parser('verify', help='Check the envelope condition of a tree')
    verify_cmd.add_argument('tree', help='Tree JSON file')

    build_cmd = subparsers.add_parser('build', help='Build a martingale measure on a tree')
    build_cmd.add_argument('tree', help='Tree JSON file')
    build_cmd.add_argument(
        '--rule', default='boltzmann',
        help='boltzmann | uniform-feasible | two-point[:<supports file>] | explicit:<conditionals file>'
    )
    build_cmd.add_argument('--root-value', type=float, default=None,
                           help='Apply the rule to the level-1 values with this mean')
    build_cmd.add_argument('--root-distribution', default=None,
                           help='JSON file with level-1 probabilities in ascending value order')
    build_cmd.add_argument('--out', default=None, help='Measure file (default: stdout)')

    extremes_cmd = subparsers.add_parser('extremes', help='Stream extreme martingale measures')
    extremes_cmd.add_argument('tree', help='Tree JSON file')
    extremes_cmd.add_argument('--cap', type=int, default=None, help='Maximum number emitted (default: MFM_EXTREME_CAP)')
    extremes_cmd.add_argument('--root-distribution', default=None,
                              help='JSON file with level-1 probabilities in ascending value order')
    extremes_cmd.add_argument('--out', default=None, help='Output file (default: stdout)')

    lattice_cmd = subparsers.add_parser('lattice', help='Generate a binomial or trinomial price tree')
    lattice_cmd.add_argument('--kind', choices=['binomial', 'trinomial'], default='binomial')
    lattice_cmd.add_argument('--levels', type=int, required=True, help='Number of steps')
    lattice_cmd.add_argument('--s0', type=float, required=True, help='Initial value')
    lattice_cmd.add_argument('--up', type=float, required=True, help='Up factor')
    lattice_cmd.add_argument('--down', type=float, required=True, help='Down factor')
    lattice_cmd.add_argument('--middle', type=float, default=None,
                             help='Middle factor (trinomial, default 1, or sqrt(up*down) when 1 is outside (down, up))')
    lattice_cmd.add_argument('--out', default=None, help='Tree file (default: stdout)')

    converge_cmd = subparsers.add_parser('converge', help='Tail oscillation report of an equicontinuous tree')
    converge_cmd.add_argument('--seed', type=int, default=None, help='Generator seed (required unless --tree)')
    converge_cmd.add_argument('--tree', default=None, help='Report on an existing tree instead of generating one')
    converge_cmd.add_argument('--depth', type=int, default=None)
    converge_cmd.add_argument('--increment-bound', type=float, default=None, help='c')
    converge_cmd.add_argument('--decay-ratio', type=float, default=None, help='r')
    converge_cmd.add_argument('--branching', type=int, default=None, help='b')
    converge_cmd.add_argument('--root-value', type=float, default=0.0)
    converge_cmd.add_argument('--per-atom', action='store_true', help='One row per (atom, level)')
    converge_cmd.add_argument('--config', default='study_config.json', help='Study configuration file')
    converge_cmd.add_argument('--out', default=None, help='CSV file (default: stdout)')

    netstudy_cmd = subparsers.add_parser('netstudy', help='Boltzmann distributions on shrinking epsilon-nets')
    netstudy_cmd.add_argument('sample', help='Sample of the compact set (JSON array or plain numbers)')
    netstudy_cmd.add_argument('--alpha', type=float, required=True, help='Target mean')
    netstudy_cmd.add_argument('--eps', type=float, nargs='+', default=None, help='Strictly decreasing epsilons')
    netstudy_cmd.add_argument('--jitter', type=int, default=None, help='Number of jittered nets per epsilon')
    netstudy_cmd.add_argument('--max-workers', type=int, default=None)
    netstudy_cmd.add_argument('--config', default='study_config.json', help='Study configuration file')
    netstudy_cmd.add_argument('--out', default=None, help='CSV file (default: stdout)')

    field_cmd = subparsers.add_parser('lambda-field', help='Tilt field of the Boltzmann measure and its envelope check')
    field_cmd.add_argument('tree', help='Tree JSON file')
    field_cmd.add_argument('--out', default=None, help='Output file (default: stdout)')

    equiv_cmd = subparsers.add_parser('equiv', help='Ratio bounds between two measures on the same tree')
    equiv_cmd.add_argument('tree', help='Tree JSON file')
    equiv_cmd.add_argument('measure_m', help='Measure file m')
    equiv_cmd.add_argument('measure_p', help='Reference measure file P')

    subparsers.add_parser('validate-config', help='Validate configuration settings')

    create_cmd = subparsers.add_parser('create-config', help='Write a default study configuration file')
    create_cmd.add_argument('--config', default='study_config.json', help='Configuration file path')

    return parser


def _root_distribution(path: Optional[str], tree: FiltrationTree) -> Optional[ProbabilityVector]:
    if path is None:
        return None
    data = read_json(path)
    probs = data.get("probs") if isinstance(data, dict) else data
    if not isinstance(probs, list):
        raise ValueError(f"{path}: expected a list of probabilities or {{\"probs\": [...]}}")
    return ProbabilityVector(values=[tree.cells[r].value for r in tree.roots], probs=probs)


def _read_object(path: str) -> Dict[str, Any]:
    data = read_json(path)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return data


def _make_rule(rule: str, tree: FiltrationTree) -> ConditionalRule:
    name, _, path = rule.partition(':')
    if name == 'boltzmann' and not path:
        return BoltzmannRule()
    if name == 'uniform-feasible' and not path:
        return UniformFeasibleRule()
    if name == 'two-point':
        if not path:
            return TwoPointRule()
        supports = _read_object(path).get("supports")
        if not isinstance(supports, dict):
            raise ValueError(f"{path}: expected {{\"supports\": {{cell id: [i, j]}}}}")
        return TwoPointRule(supports)
    if name == 'explicit' and path:
        conditionals = _read_object(path).get("conditionals")
        if not isinstance(conditionals, dict):
            raise ValueError(f"{path}: expected {{\"conditionals\": {{cell id: {{child id: p}}}}}}")
        return ExplicitRule(conditionals, tree)
    raise ValueError(f"Unknown rule '{rule}'")


def cmd_verify(args) -> int:
    tree = load_tree_file(args.tree)
    report = envelope(tree)
    write_output(to_json(report))
    if not report.ok:
        print(f"Envelope violated at cell '{report.violations[0]}'", file=sys.stderr)
        return EXIT_CONDITION_FAILED
    return EXIT_OK


def cmd_build(args) -> int:
    tree = load_tree_file(args.tree)
    rule = _make_rule(args.rule, tree)
    measure = build_measure(
        tree,
        rule,
        root_distribution=_root_distribution(args.root_distribution, tree),
        root_value=args.root_value,
    )
    martingale = check_martingale(tree, measure)
    profile = measure_entropy_profile(tree, measure)
    summary = {
        "rule": rule.name,
        "tree_hash": measure.tree_hash,
        "max_martingale_error": martingale.max_error,
        "consistency_error": martingale.consistency_error,
        "entropy": {
            "total": profile.total_entropy,
            "min": profile.min_entropy,
            "max": profile.max_entropy,
            "mean": profile.mean_entropy,
        },
    }
    write_output(to_json(dump_measure(tree, measure)), args.out)
    if args.out:
        write_output(to_json(summary))
    else:
        print(to_json(summary), file=sys.stderr)
    return EXIT_OK


def cmd_extremes(args) -> int:
    tree = load_tree_file(args.tree)
    cap = Settings.EXTREME_CAP if args.cap is None else args.cap
    total = count_extremes(tree)
    lines = []
    for spec, measure in enumerate_extremes(tree, cap, _root_distribution(args.root_distribution, tree)):
        lines.append(to_json({
            "index": spec.index,
            "supports": {cell_id: support.child_ids for cell_id, support in spec.supports.items()},
            "measure": dump_measure(tree, measure),
        }, indent=None))
    capped = total > len(lines)
    if capped:
        logger.warning(f"Emitted {len(lines)} of {total} extreme measures (cap {cap})")
    lines.append(to_json({"count": total, "emitted": len(lines), "capped": capped}, indent=None))
    write_output("\n".join(lines), args.out)
    return EXIT_OK


def cmd_lattice(args) -> int:
    spec = LatticeSpec(
        kind=args.kind, levels=args.levels, s0=args.s0, up=args.up, down=args.down, middle=args.middle
    )
    tree = generate_lattice(spec)
    write_output(to_json(dump_tree(tree)), args.out)
    return EXIT_OK


def cmd_converge(args) -> int:
    config = load_config_from_file(args.config)
    if args.tree:
        report = convergence_report(load_tree_file(args.tree))
    else:
        if args.seed is None:
            raise ValueError("converge needs --seed when generating a tree")
        spec = EquicontinuousSpec(
            depth=args.depth if args.depth is not None else config.depth,
            increment_bound=args.increment_bound if args.increment_bound is not None else config.increment_bound,
            decay_ratio=args.decay_ratio if args.decay_ratio is not None else config.decay_ratio,
            branching=args.branching if args.branching is not None else config.branching,
            seed=args.seed,
            root_value=args.root_value,
        )
        report = convergence_report(generate_equicontinuous(spec), spec)
    write_output(convergence_csv(report, per_atom=args.per_atom), args.out)
    return EXIT_OK


def cmd_netstudy(args) -> int:
    config = load_config_from_file(args.config)
    study = net_convergence_study(
        read_sample(args.sample),
        args.alpha,
        args.eps if args.eps else config.eps_sequence,
        jitter_nets=args.jitter if args.jitter is not None else config.jitter_nets,
        max_workers=args.max_workers or config.max_workers,
    )
    write_output(netstudy_csv(study), args.out)
    return EXIT_OK


def cmd_lambda_field(args) -> int:
    tree = load_tree_file(args.tree)
    field, report = lambda_field(tree)
    write_output(to_json({"field": field, "report": report}), args.out)
    return EXIT_OK


def cmd_equiv(args) -> int:
    tree = load_tree_file(args.tree)
    m = load_measure(read_json(args.measure_m), tree)
    p = load_measure(read_json(args.measure_p), tree)
    report = equivalence_bounds(tree, m, p)
    output = report.model_dump()
    output["certified"] = report.certified
    write_output(to_json(output))
    return EXIT_OK if report.equivalent else EXIT_CONDITION_FAILED


def cmd_validate_config(args) -> int:
    try:
        Settings.validate()
    except ValueError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    write_output(to_json({
        "valid": True,
        "solver_tolerance": Settings.SOLVER_TOLERANCE,
        "solver_max_iterations": Settings.SOLVER_MAX_ITERATIONS,
        "feasibility_tolerance": Settings.FEASIBILITY_TOLERANCE,
        "extreme_cap": Settings.EXTREME_CAP,
        "max_workers": Settings.MAX_WORKERS,
        "log_level": Settings.LOG_LEVEL,
        "log_file": Settings.LOG_FILE,
    }))
    return EXIT_OK


def cmd_create_config(args) -> int:
    config = create_default_config(args.config)
    print(f"Created default configuration: {args.config}", file=sys.stderr)
    write_output(to_json(asdict(config)))
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    'verify': cmd_verify,
    'build': cmd_build,
    'extremes': cmd_extremes,
    'lattice': cmd_lattice,
    'converge': cmd_converge,
    'netstudy': cmd_netstudy,
    'lambda-field': cmd_lambda_field,
    'equiv': cmd_equiv,
    'validate-config': cmd_validate_config,
    'create-config': cmd_create_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    setup_logging(args.log_level or Settings.LOG_LEVEL, args.log_file or Settings.LOG_FILE)
    logger.debug(f"Starting command: {args.command}")
    try:
        return COMMANDS[args.command](args)
    except DOMAIN_ERRORS as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONDITION_FAILED
    except (MartingaleToolkitError, ValidationError, ValueError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
