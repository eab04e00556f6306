"""Command-line entry point.

Exit codes: 0 success, 2 usage or domain error, 3 I/O failure,
4 invalid instance, 5 experiment assertion failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import DomainError, FormatError
from .fileio import load_instance, save_instance
from .generators import FAMILIES, GenSpec, generate, parse_spec
from .harness import (
    DEFAULT_AUDIT_CAP,
    TrialBatchSpec,
    run_flip_rate,
    run_key_lemma,
    run_ratio_sweep,
    run_success_rate,
)
from .median import (
    FALLBACKS,
    THEORETICAL_CONSTANT,
    ApproxParams,
    approx_median,
    approx_median_theorem,
    brute_force_median,
)
from .metric import DendrogramSpace, DistanceOracle, FiniteSpace, env_cap, isosceles_check, validate

log = logging.getLogger("ultramedian")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID, EXIT_ASSERT = 0, 2, 3, 4, 5

_DEFAULT_N = {"success-rate": 2000, "flip-rate": 64, "key-lemma": 128, "ratio-sweep": 500}


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _add_instance_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("instance", nargs="?", help="instance file (matrix or dendrogram format)")
    src.add_argument("--gen", metavar="SPEC", help="generate the instance from a spec string instead")


def _add_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=0.25)
    p.add_argument("--c-h", "--c_h", dest="c_h", type=float, default=8.0)
    p.add_argument("--c-k", "--c_k", dest="c_k", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fallback", choices=FALLBACKS, default="auto")
    p.add_argument("--theoretical-constants", action="store_true", help=f"use c_h = c_k = {THEORETICAL_CONSTANT:g}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ultramedian", description="Approximate 1-median selection in ultrametric spaces.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance file")
    p.add_argument("spec", help="family:n=..,seed=..,k=..,delta=..")
    p.add_argument("out")
    p.add_argument("--format", choices=("matrix", "dendrogram"), default="matrix")

    p = sub.add_parser("validate", help="check metric / ultrametric axioms")
    _add_instance_source(p)
    p.add_argument("--allow-pseudo", action="store_true")
    p.add_argument("--require-ultrametric", action="store_true")
    p.add_argument("--isosceles", action="store_true", help="also run the isosceles triple check")

    p = sub.add_parser("solve", help="sampled approximate 1-median")
    _add_instance_source(p)
    _add_params(p)
    audit = p.add_mutually_exclusive_group()
    audit.add_argument("--audit", dest="audit", action="store_true", default=None)
    audit.add_argument("--no-audit", dest="audit", action="store_false")
    p.add_argument("--theorem", action="store_true", help="run at epsilon/4 for the (1+epsilon) contract")
    p.add_argument("--require-ultrametric", action="store_true")
    p.add_argument("--csv", action="store_true", help="print a CSV row instead of key=value lines")

    p = sub.add_parser("solve-exact", help="brute-force 1-median")
    _add_instance_source(p)

    p = sub.add_parser("experiment", help="run a seeded trial batch")
    p.add_argument("kind", choices=("success-rate", "flip-rate", "key-lemma", "ratio-sweep"))
    p.add_argument("--gen", metavar="SPEC", help="instance spec (overrides --family/--n/...)")
    p.add_argument("--family", choices=FAMILIES, default="random-dendrogram")
    p.add_argument("--n", type=int)
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--k-levels", "--levels", dest="levels", type=int)
    p.add_argument("--delta", type=float, default=0.0)
    _add_params(p)
    p.add_argument("--trials", "--instances", dest="trials", type=int, default=100)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--no-audit", dest="audit", action="store_false", default=True)
    p.add_argument("--min-success", type=float)
    p.add_argument("--a", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--k", type=int, help="evaluator count for flip-rate (default from parameters)")
    p.add_argument("--epsilons", default="0.1,0.25,0.5")
    p.add_argument("--families", help="';'-separated instance specs for ratio-sweep")
    p.add_argument("--csv", dest="csv_path")
    p.add_argument("--json", dest="json_path")
    return parser


def _load(args) -> FiniteSpace:
    if args.gen:
        return generate(parse_spec(args.gen))
    try:
        return load_instance(args.instance)
    except OSError as exc:
        raise CliExit(EXIT_IO, f"cannot read {args.instance}: {exc}") from None
    except FormatError as exc:
        raise CliExit(EXIT_INVALID, f"invalid instance {args.instance}: {exc}") from None


def _params(args) -> ApproxParams:
    c_h, c_k = (THEORETICAL_CONSTANT, THEORETICAL_CONSTANT) if args.theoretical_constants else (args.c_h, args.c_k)
    return ApproxParams(args.epsilon, c_h, c_k, args.seed, args.fallback)


def _check_valid(space: FiniteSpace, require_ultrametric: bool):
    verdict = validate(space)
    if not verdict.valid or (require_ultrametric and not verdict.ultrametric):
        raise CliExit(EXIT_INVALID, f"instance rejected: {verdict}")
    return verdict


def cmd_gen(args) -> int:
    spec = parse_spec(args.spec)
    space = generate(spec)
    try:
        save_instance(space, args.out, args.format)
    except OSError as exc:
        raise CliExit(EXIT_IO, f"cannot write {args.out}: {exc}") from None
    print(f"{spec.to_string()} -> {args.out}: {validate(space)}")
    return EXIT_OK


def cmd_validate(args) -> int:
    space = _load(args)
    verdict = validate(space, allow_pseudo=args.allow_pseudo)
    print(verdict)
    if args.isosceles and verdict.ultrametric:
        iso = isosceles_check(space, sample_budget=None if space.n <= 64 else 1_000_000)
        print(f"isosceles: {'pass' if iso.passed else 'fail at ' + str(iso.triple)}")
        if not iso.passed:
            return EXIT_INVALID
    if not verdict.valid or (args.require_ultrametric and not verdict.ultrametric):
        return EXIT_INVALID
    return EXIT_OK


def cmd_solve(args) -> int:
    params = _params(args)
    space = _load(args)
    verdict = _check_valid(space, args.require_ultrametric)
    audit = args.audit if args.audit is not None else space.n <= env_cap(DEFAULT_AUDIT_CAP)
    run = approx_median_theorem if args.theorem else approx_median
    report = run(DistanceOracle(space), params, audit)
    if args.csv:
        print(report.csv_header())
        print(report.to_csv_row())
    else:
        print(f"instance={'dendrogram' if isinstance(space, DendrogramSpace) else 'matrix'} n={space.n} {verdict}")
        sys.stdout.write(report.to_kv())
    return EXIT_OK


def cmd_solve_exact(args) -> int:
    space = _load(args)
    _check_valid(space, False)
    oracle = DistanceOracle(space)
    selected, opt = brute_force_median(oracle)
    print(f"selected={selected}\nopt_cost={opt!r}\nqueries_used={oracle.query_count}")
    return EXIT_OK


def _experiment_spec(args) -> GenSpec:
    if args.gen:
        return parse_spec(args.gen)
    n = args.n if args.n is not None else _DEFAULT_N[args.kind]
    return GenSpec(args.family, n, args.instance_seed, k=args.levels, delta=args.delta)


def cmd_experiment(args) -> int:
    instance = _experiment_spec(args)
    batch = TrialBatchSpec(
        instance, _params(args), args.trials, args.parallelism, args.kind, args.audit, args.min_success
    )
    if args.kind == "success-rate":
        report = run_success_rate(batch)
    elif args.kind == "flip-rate":
        report = run_flip_rate(batch, args.a, args.b, args.k)
    elif args.kind == "key-lemma":
        report = run_key_lemma(batch)
    else:
        try:
            epsilons = [float(e) for e in args.epsilons.split(",") if e.strip()]
        except ValueError:
            raise DomainError(f"bad --epsilons {args.epsilons!r}") from None
        if args.families:
            families = [parse_spec(s) for s in args.families.split(";") if s.strip()]
        else:
            families = [
                GenSpec("random-dendrogram", instance.n, instance.seed),
                GenSpec("perturbed-metric", instance.n, instance.seed, delta=1.0),
            ]
        report = run_ratio_sweep(batch, epsilons, families)
    try:
        if args.csv_path or args.json_path:
            report.write(args.csv_path, args.json_path)
        if not args.csv_path:
            sys.stdout.write(report.to_csv())
    except OSError as exc:
        raise CliExit(EXIT_IO, f"cannot write report: {exc}") from None
    log.info("%s: %d rows, passed=%s, %.2fs", args.kind, len(report.rows), report.passed, report.wall_time_s)
    for msg in report.failures:
        print(f"FAIL: {msg}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_ASSERT


_COMMANDS = {
    "gen": cmd_gen,
    "validate": cmd_validate,
    "solve": cmd_solve,
    "solve-exact": cmd_solve_exact,
    "experiment": cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "instance", None) is not None and not Path(args.instance).exists() and args.command != "gen":
        print(f"error: no such file {args.instance}", file=sys.stderr)
        return EXIT_IO
    try:
        return _COMMANDS[args.command](args)
    except CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
