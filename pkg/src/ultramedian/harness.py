"""Seeded batch experiments with CSV and JSON reports.

Trial ``i`` of a batch always draws from the stream derived from
``(master seed, i)``, so rows do not depend on execution order or on the
degree of parallelism. Wall-clock time is kept in a dedicated
``wall_time_s`` column (and a ``total_wall_time_s`` footer line) which
:func:`strip_wall_time` removes for byte comparisons.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .errors import DomainError
from .generators import GenSpec, generate
from .median import (
    ApproxParams,
    approx_median,
    brute_force_median,
    exact_costs,
    lemma_ratio_bound,
    order_by_distance_from,
)
from .metric import RTOL, DistanceOracle, FiniteSpace, env_cap
from .rng import derive_seed, make_rng

log = logging.getLogger(__name__)

EXPERIMENTS = ("success-rate", "flip-rate", "key-lemma", "ratio-sweep")
DEFAULT_AUDIT_CAP = 10_000
KEY_LEMMA_CAP = 4096
WALL_COLUMN = "wall_time_s"
WALL_FOOTER = "total_wall_time_s"


@dataclass(frozen=True)
class TrialBatchSpec:
    instance: GenSpec
    params: ApproxParams = field(default_factory=ApproxParams)
    trials: int = 1
    parallelism: int = 1
    experiment: str = "success-rate"
    audit: bool = True
    min_success: float | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError(f"trials must be >= 1, got {self.trials}")
        if self.parallelism < 1:
            raise DomainError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.experiment not in EXPERIMENTS:
            raise DomainError(f"unknown experiment {self.experiment!r}")

    def echo(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment,
            "instance": self.instance.to_string(),
            **{f"params.{k}": v for k, v in asdict(self.params).items()},
            "trials": self.trials,
            "parallelism": self.parallelism,
            "audit": self.audit,
        }


@dataclass
class TrialBatchReport:
    experiment: str
    columns: list[str]
    rows: list[dict[str, Any]]
    aggregates: dict[str, Any]
    metadata: dict[str, Any]
    failures: list[str] = field(default_factory=list)
    row_wall_times: list[float] = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_csv(self, include_wall_time: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for key, value in self.metadata.items():
            w.writerow(["#meta", key, _cell(value)])
        w.writerow(self.columns + ([WALL_COLUMN] if include_wall_time else []))
        for i, row in enumerate(self.rows):
            cells = [_cell(row.get(c)) for c in self.columns]
            if include_wall_time:
                cells.append(f"{self.row_wall_times[i]:.6f}" if self.row_wall_times else "")
            w.writerow(cells)
        for key, value in self.aggregates.items():
            w.writerow(["#agg", key, _cell(value)])
        w.writerow(["#agg", "passed", _cell(self.passed)])
        for msg in self.failures:
            w.writerow(["#agg", "failure", msg])
        if include_wall_time:
            w.writerow(["#agg", WALL_FOOTER, f"{self.wall_time_s:.6f}"])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = []
        for i, row in enumerate(self.rows):
            r = {c: row.get(c) for c in self.columns}
            if self.row_wall_times:
                r[WALL_COLUMN] = self.row_wall_times[i]
            rows.append(r)
        doc = {
            "experiment": self.experiment,
            "metadata": self.metadata,
            "columns": self.columns,
            "rows": rows,
            "aggregates": self.aggregates,
            "passed": self.passed,
            "failures": self.failures,
            WALL_FOOTER: self.wall_time_s,
        }
        return json.dumps(_jsonable(doc), indent=2) + "\n"

    def write(self, csv_path: str | Path | None = None, json_path: str | Path | None = None) -> None:
        if csv_path:
            Path(csv_path).write_text(self.to_csv())
        if json_path:
            Path(json_path).write_text(self.to_json())


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def strip_wall_time(csv_text: str) -> str:
    """Drop the wall-time column and footer so reports can be compared byte for byte."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    drop = None
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    for row in rows:
        if row and row[0] == "#agg" and len(row) > 1 and row[1] == WALL_FOOTER:
            continue
        if row and row[0] in ("#agg", "#meta"):
            w.writerow(row)
            continue
        if drop is None and WALL_COLUMN in row:
            drop = row.index(WALL_COLUMN)
        if drop is not None and len(row) > drop:
            row = row[:drop] + row[drop + 1 :]
        w.writerow(row)
    return out.getvalue()


def _run_trials(count: int, fn: Callable[[int], dict[str, Any]], parallelism: int):
    """Run ``fn(i)`` for every trial; returns rows and per-row wall times in index order."""

    def timed(i: int):
        t0 = time.perf_counter()
        row = fn(i)
        return i, row, time.perf_counter() - t0

    if parallelism > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(timed, range(count)))
    else:
        results = [timed(i) for i in range(count)]
    results.sort(key=lambda r: r[0])
    return [r[1] for r in results], [r[2] for r in results]


def _audit_cap_check(n: int, audit: bool) -> None:
    cap = env_cap(DEFAULT_AUDIT_CAP)
    if audit and n > cap:
        raise DomainError(
            f"n={n} exceeds the brute-force audit cap {cap}; rerun with --no-audit "
            f"or raise ULTRAMEDIAN_MAX_N"
        )


def _percentile(values: Sequence[float], q: float) -> float:
    return float(np.percentile(np.asarray(values, dtype=float), q))


def _ratio_stats(ratios: Sequence[float], prefix: str = "") -> dict[str, float]:
    return {
        f"{prefix}mean_ratio": math.fsum(ratios) / len(ratios),
        f"{prefix}p50_ratio": _percentile(ratios, 50),
        f"{prefix}p90_ratio": _percentile(ratios, 90),
        f"{prefix}p95_ratio": _percentile(ratios, 95),
        f"{prefix}p99_ratio": _percentile(ratios, 99),
        f"{prefix}max_ratio": max(ratios),
    }


def _trial_params(params: ApproxParams, i: int) -> ApproxParams:
    return replace(params, seed=derive_seed(params.seed, i))


def run_success_rate(spec: TrialBatchSpec, space: FiniteSpace | None = None) -> TrialBatchReport:
    """Repeated audited runs; success means ratio <= (1+eps)(1+2eps)."""
    if spec.experiment != "success-rate":
        raise DomainError(f"run_success_rate got a {spec.experiment} spec")
    t0 = time.perf_counter()
    space = space if space is not None else generate(spec.instance)
    _audit_cap_check(space.n, spec.audit)
    if spec.audit:
        exact_costs(space)  # warm the shared cache before trials fan out

    def trial(i: int) -> dict[str, Any]:
        p = _trial_params(spec.params, i)
        rep = approx_median(DistanceOracle(space), p, spec.audit)
        return {
            "trial": i,
            "seed": p.seed,
            "selected": rep.selected,
            "ratio": rep.ratio,
            "queries_used": rep.queries_used,
            "mode": rep.mode,
            "sample_cost": rep.sample_cost,
            "exact_cost": rep.exact_cost,
            "opt_cost": rep.opt_cost,
        }

    rows, walls = _run_trials(spec.trials, trial, spec.parallelism)
    eps = spec.params.epsilon
    h, k = spec.params.hk()
    lemma_threshold = (1 + eps) * (1 + 2 * eps)
    aggregates: dict[str, Any] = {
        "trials": spec.trials,
        "n": space.n,
        "h": h,
        "k": k,
        "total_queries": sum(r["queries_used"] for r in rows),
        "lemma_threshold": lemma_threshold,
        "lemma_probability_bound": 1 - 2 * eps,
        "eps_threshold": 1 + eps,
    }
    failures: list[str] = []
    if spec.audit:
        ratios = [r["ratio"] for r in rows]
        aggregates["success_fraction"] = sum(r <= lemma_threshold for r in ratios) / len(ratios)
        aggregates["success_fraction_eps"] = sum(r <= 1 + eps for r in ratios) / len(ratios)
        aggregates.update(_ratio_stats(ratios))
        below = [r["trial"] for r in rows if r["ratio"] < 1]
        if below:
            failures.append(f"ratio below 1 in trials {below[:10]}")
        if spec.min_success is not None and aggregates["success_fraction"] < spec.min_success:
            failures.append(
                f"success_fraction {aggregates['success_fraction']} < required {spec.min_success}"
            )
    log.info("success-rate: %d trials on n=%d done", spec.trials, space.n)
    return TrialBatchReport(
        "success-rate",
        ["trial", "seed", "selected", "ratio", "queries_used", "mode", "sample_cost", "exact_cost", "opt_cost"],
        rows, aggregates, spec.echo(), failures, walls, time.perf_counter() - t0,
    )


def flip_bound(epsilon: float, k: int) -> float:
    """Upper bound ``exp(-eps^2 k / 64)`` on the flip probability."""
    return math.exp(-(epsilon**2) * k / 64)


def pick_flip_pair(space: FiniteSpace, epsilon: float) -> tuple[int, int]:
    """The 1-median and the cheapest point costing more than (1+eps) times it."""
    costs = exact_costs(space)
    a, opt = brute_force_median(space)
    eligible = np.flatnonzero(costs > (1 + epsilon) * opt)
    if eligible.size == 0:
        raise DomainError(f"no point costs more than (1+{epsilon}) x the optimum; no flip pair exists")
    b = int(eligible[np.argmin(costs[eligible])]) + 1
    return a, b


def run_flip_rate(
    spec: TrialBatchSpec,
    a: int | None = None,
    b: int | None = None,
    k: int | None = None,
    space: FiniteSpace | None = None,
) -> TrialBatchReport:
    """Estimate Pr[sampled sum of b <= sampled sum of a] for a pair with a cost gap.

    ``k`` defaults to the evaluator count of ``spec.params``. When ``a`` or
    ``b`` is omitted the pair comes from :func:`pick_flip_pair`.
    """
    if spec.experiment != "flip-rate":
        raise DomainError(f"run_flip_rate got a {spec.experiment} spec")
    t0 = time.perf_counter()
    space = space if space is not None else generate(spec.instance)
    _audit_cap_check(space.n, True)
    eps = spec.params.epsilon
    if a is None or b is None:
        a, b = pick_flip_pair(space, eps)
    for pid in (a, b):
        space.index(pid)
    costs = exact_costs(space)
    ca, cb = float(costs[a - 1]), float(costs[b - 1])
    if not cb > (1 + eps) * ca:
        ratio = cb / ca if ca > 0 else math.inf
        raise DomainError(
            f"flip-rate precondition failed: cost({b})/cost({a}) = {ratio!r} is not > 1+eps = {1 + eps!r}"
        )
    if k is None:
        k = spec.params.hk()[1]
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    n = space.n

    def trial(i: int) -> dict[str, Any]:
        rng = make_rng(spec.params.seed, "flip-rate", i)
        v = rng.integers(1, n + 1, size=k, dtype=np.int64)
        oracle = DistanceOracle(space)
        block = oracle.query_block([a, b], v)
        sa, sb = math.fsum(block[0]), math.fsum(block[1])
        return {"trial": i, "sum_a": sa, "sum_b": sb, "flip": int(sb <= sa), "queries_used": oracle.query_count}

    rows, walls = _run_trials(spec.trials, trial, spec.parallelism)
    flips = sum(r["flip"] for r in rows)
    estimate = flips / spec.trials
    bound = flip_bound(eps, k)
    se = math.sqrt(bound * (1 - bound) / spec.trials)
    aggregates = {
        "a": a,
        "b": b,
        "cost_a": ca,
        "cost_b": cb,
        "cost_ratio": cb / ca if ca > 0 else math.inf,
        "k": k,
        "trials": spec.trials,
        "flips": flips,
        "flip_fraction": estimate,
        "bound": bound,
        "bound_plus_3se": bound + 3 * se,
    }
    failures = []
    if estimate > bound + 3 * se:
        failures.append(f"flip_fraction {estimate} exceeds bound {bound} by more than 3 standard errors")
    return TrialBatchReport(
        "flip-rate", ["trial", "sum_a", "sum_b", "flip", "queries_used"],
        rows, aggregates, spec.echo(), failures, walls, time.perf_counter() - t0,
    )


@dataclass(frozen=True)
class KeyLemmaResult:
    opt: int
    opt_cost: float
    violations: tuple[int, ...]
    min_slack: float
    max_slack: float


def check_key_lemma(space: FiniteSpace) -> KeyLemmaResult:
    """Check cost(p_ell) <= (1 + (ell-1)/(n-ell+1)) cost(OPT) for every ell.

    ``p_1..p_n`` is the ordering of all points by distance from the exact
    1-median. Slack is ``(bound - actual) / bound`` with bound scaled by
    cost(OPT); a comparison passes within relative tolerance 1e-9.
    """
    n = space.n
    costs = exact_costs(space)
    opt, opt_cost = brute_force_median(space)
    order = np.asarray(order_by_distance_from(space, opt))
    actual = costs[order - 1]
    limit = np.array([lemma_ratio_bound(ell, n) for ell in range(1, n + 1)]) * opt_cost
    bad = actual > limit + RTOL * limit
    slack = np.where(limit > 0, (limit - actual) / np.where(limit > 0, limit, 1.0), 0.0)
    return KeyLemmaResult(
        opt, opt_cost, tuple(int(ell) + 1 for ell in np.flatnonzero(bad)),
        float(slack.min()), float(slack.max()),
    )


def run_key_lemma(spec: TrialBatchSpec, instances: Sequence[GenSpec] | None = None) -> TrialBatchReport:
    """Exhaustive key-lemma check over ``spec.trials`` seeds (or explicit instances)."""
    if spec.experiment != "key-lemma":
        raise DomainError(f"run_key_lemma got a {spec.experiment} spec")
    t0 = time.perf_counter()
    if instances is None:
        base = spec.instance
        instances = [base.with_seed(base.seed + i) for i in range(spec.trials)]
    cap = env_cap(KEY_LEMMA_CAP)
    for g in instances:
        if g.n > cap:
            raise DomainError(f"key-lemma needs n <= {cap}, got {g.n}")

    def trial(i: int) -> dict[str, Any]:
        g = instances[i]
        res = check_key_lemma(generate(g))
        return {
            "instance": i,
            "spec": g.to_string(),
            "n": g.n,
            "opt": res.opt,
            "opt_cost": res.opt_cost,
            "violations": len(res.violations),
            "first_violation": res.violations[0] if res.violations else None,
            "min_slack": res.min_slack,
            "max_slack": res.max_slack,
        }

    rows, walls = _run_trials(len(instances), trial, spec.parallelism)
    total = sum(r["violations"] for r in rows)
    aggregates = {
        "instances": len(rows),
        "total_violations": total,
        "min_slack": min(r["min_slack"] for r in rows),
        "max_slack": max(r["max_slack"] for r in rows),
    }
    failures = [f"key-lemma violated on {r['spec']} at ell={r['first_violation']}" for r in rows if r["violations"]]
    meta = spec.echo()
    meta["trials"] = len(rows)
    return TrialBatchReport(
        "key-lemma",
        ["instance", "spec", "n", "opt", "opt_cost", "violations", "first_violation", "min_slack", "max_slack"],
        rows, aggregates, meta, failures, walls, time.perf_counter() - t0,
    )


def run_ratio_sweep(
    spec: TrialBatchSpec, epsilons: Sequence[float], families: Sequence[GenSpec]
) -> TrialBatchReport:
    """Audited ratio distributions over an (epsilon, instance) grid; observational only."""
    if spec.experiment != "ratio-sweep":
        raise DomainError(f"run_ratio_sweep got a {spec.experiment} spec")
    if not epsilons or not families:
        raise DomainError("ratio-sweep needs at least one epsilon and one family")
    t0 = time.perf_counter()
    cells = []
    spaces = {}
    for g in families:
        space = generate(g)
        _audit_cap_check(space.n, True)
        exact_costs(space)
        spaces[g] = space
    for eps in epsilons:
        cell_params = replace(spec.params, epsilon=float(eps))
        cells.extend((cell_params, g) for g in families)

    jobs = [(c, i) for c in range(len(cells)) for i in range(spec.trials)]

    def trial(j: int) -> dict[str, Any]:
        c, i = jobs[j]
        params, g = cells[c]
        p = _trial_params(params, i)
        rep = approx_median(DistanceOracle(spaces[g]), p, True)
        return {
            "epsilon": params.epsilon,
            "family": g.to_string(),
            "trial": i,
            "seed": p.seed,
            "selected": rep.selected,
            "ratio": rep.ratio,
            "queries_used": rep.queries_used,
            "mode": rep.mode,
        }

    rows, walls = _run_trials(len(jobs), trial, spec.parallelism)
    aggregates: dict[str, Any] = {}
    for params, g in cells:
        name = f"{g.to_string()}|eps={params.epsilon!r}|"
        ratios = [r["ratio"] for r in rows if r["epsilon"] == params.epsilon and r["family"] == g.to_string()]
        aggregates.update(_ratio_stats(ratios, name))
    meta = spec.echo()
    meta["epsilons"] = "/".join(repr(float(e)) for e in epsilons)
    meta["families"] = ";".join(g.to_string() for g in families)
    return TrialBatchReport(
        "ratio-sweep",
        ["epsilon", "family", "trial", "seed", "selected", "ratio", "queries_used", "mode"],
        rows, aggregates, meta, [], walls, time.perf_counter() - t0,
    )

