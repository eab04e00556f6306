"""Exact and sampled 1-median selection.

The sampled algorithm draws ``h`` candidates and ``k`` evaluators uniformly
with replacement and returns the candidate whose summed distance to the
evaluators is smallest. It issues exactly ``h * k`` distance queries,
independent of ``n``.
"""

from __future__ import annotations

import math
import threading
import weakref
from dataclasses import asdict, dataclass, fields
from typing import Sequence, Union

import numpy as np

from .errors import DomainError
from .metric import DistanceOracle, FiniteSpace
from .rng import make_rng

#: Scale constant used in the original analysis for both h and k.
THEORETICAL_CONSTANT = 1e9
#: Desk-scale default for both constants.
DEFAULT_CONSTANT = 8.0

FALLBACKS = ("auto", "force-sample", "force-exact")

# cap on the size of one candidate x evaluator block held in memory
_BLOCK_ENTRIES = 1 << 22

SpaceLike = Union[FiniteSpace, DistanceOracle]


@dataclass(frozen=True)
class ApproxParams:
    epsilon: float = 0.25
    c_h: float = DEFAULT_CONSTANT
    c_k: float = DEFAULT_CONSTANT
    seed: int = 0
    fallback: str = "auto"

    def __post_init__(self):
        # normalize so that 8 and 8.0 echo identically in reports
        for name in ("epsilon", "c_h", "c_k"):
            try:
                object.__setattr__(self, name, float(getattr(self, name)))
            except (TypeError, ValueError):
                raise DomainError(f"{name} must be a number, got {getattr(self, name)!r}") from None
        if not 0 < self.epsilon < 1:
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not (0 < self.c_h < math.inf and 0 < self.c_k < math.inf):
            raise DomainError(f"c_h and c_k must be positive, got {self.c_h}, {self.c_k}")
        if self.fallback not in FALLBACKS:
            raise DomainError(f"fallback must be one of {FALLBACKS}, got {self.fallback!r}")

    @classmethod
    def theoretical(cls, epsilon: float, seed: int = 0, fallback: str = "auto") -> "ApproxParams":
        return cls(epsilon, THEORETICAL_CONSTANT, THEORETICAL_CONSTANT, seed, fallback)

    def hk(self) -> tuple[int, int]:
        return params_hk(self.epsilon, self.c_h, self.c_k)


@dataclass(frozen=True)
class MedianReport:
    """Result of one median selection.

    ``exact_cost``, ``opt_cost`` and ``ratio`` are filled by an exact audit
    (always available on the brute-force path). Audit distance evaluations
    go to the space directly and are not part of ``queries_used``.
    """

    selected: int
    sample_cost: float
    exact_cost: float | None
    opt_cost: float | None
    ratio: float | None
    queries_used: int
    mode: str

    def to_kv(self) -> str:
        return "".join(f"{k}={_cell(v)}\n" for k, v in asdict(self).items())

    @staticmethod
    def csv_header() -> str:
        return ",".join(f.name for f in fields(MedianReport))

    def to_csv_row(self) -> str:
        return ",".join(_cell(v) for v in asdict(self).values())


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _space(x: SpaceLike) -> FiniteSpace:
    return x.space if isinstance(x, DistanceOracle) else x


def _row(x: SpaceLike, a: int) -> np.ndarray:
    return x.query_row(a) if isinstance(x, DistanceOracle) else x.row(a)


def cost(space: SpaceLike, x: int) -> float:
    """Sum of distances from point ``x`` to every point (exactly rounded)."""
    return math.fsum(_row(space, x))


_cost_cache: "weakref.WeakKeyDictionary[FiniteSpace, np.ndarray]" = weakref.WeakKeyDictionary()
_cache_lock = threading.Lock()


def exact_costs(space: FiniteSpace) -> np.ndarray:
    """Cost of every point, by n row summations; cached per (immutable) space."""
    with _cache_lock:
        cached = _cost_cache.get(space)
    if cached is not None:
        return cached
    costs = np.array([cost(space, a) for a in range(1, space.n + 1)])
    costs.flags.writeable = False
    with _cache_lock:
        _cost_cache[space] = costs
    return costs


def brute_force_median(space: SpaceLike) -> tuple[int, float]:
    """Exact 1-median, lowest id on ties.

    Through an oracle this issues exactly ``n * n`` queries (a full row per
    point, no symmetry shortcut).
    """
    if isinstance(space, DistanceOracle):
        costs = np.array([cost(space, a) for a in range(1, space.n + 1)])
    else:
        costs = exact_costs(space)
    best = int(np.argmin(costs))  # first occurrence of the minimum
    return best + 1, float(costs[best])


def order_by_distance_from(space: SpaceLike, origin: int) -> list[int]:
    """Points sorted by distance from ``origin``; origin first, ties by id."""
    row = _row(space, origin)
    key = row.copy()
    key[_space(space).index(origin)] = -np.inf
    return (np.argsort(key, kind="stable") + 1).tolist()


def params_hk(epsilon: float, c_h: float, c_k: float) -> tuple[int, int]:
    """Candidate count ``h = ceil(c_h ln(1/eps)/eps)``, evaluator count ``k = ceil(c_k ln(1/eps)/eps^2)``."""
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not (c_h > 0 and c_k > 0):
        raise DomainError(f"c_h and c_k must be positive, got {c_h}, {c_k}")
    log_term = math.log(1.0 / epsilon)
    return math.ceil(c_h * log_term / epsilon), math.ceil(c_k * log_term / epsilon**2)


def sample_points(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` uniform draws from ``1..n`` with replacement."""
    if n < 1:
        raise DomainError(f"cannot sample from {n} points")
    if m < 0:
        raise DomainError(f"sample size must be >= 0, got {m}")
    return rng.integers(1, n + 1, size=m, dtype=np.int64)


def empirical_argmin(
    oracle: DistanceOracle, candidates: Sequence[int], evaluators: Sequence[int]
) -> tuple[int, list[float]]:
    """Index (1-based) of the candidate with the smallest evaluator distance sum.

    Ties go to the lowest index. Issues exactly
    ``len(candidates) * len(evaluators)`` queries.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    evaluators = np.asarray(evaluators, dtype=np.int64)
    if candidates.size == 0:
        raise DomainError("empirical_argmin needs at least one candidate")
    if evaluators.size == 0:
        raise DomainError("empirical_argmin needs at least one evaluator")
    step = max(1, _BLOCK_ENTRIES // evaluators.size)
    sums: list[float] = []
    for lo in range(0, candidates.size, step):
        block = oracle.query_block(candidates[lo : lo + step], evaluators)
        # fsum is order-independent, so equal multisets give bit-equal sums
        sums.extend(math.fsum(r) for r in block)
    best = min(range(len(sums)), key=sums.__getitem__)
    return best + 1, sums


def lemma_ratio_bound(ell: int, n: int) -> float:
    """Bound ``1 + (ell-1)/(n-ell+1)`` on cost(p_ell)/cost(OPT)."""
    if n < 1 or not 1 <= ell <= n:
        raise DomainError(f"need 1 <= ell <= n, got ell={ell}, n={n}")
    return 1.0 + (ell - 1) / (n - ell + 1)


def uses_exact_fallback(n: int, params: ApproxParams) -> bool:
    if params.fallback == "force-exact":
        return True
    if params.fallback == "force-sample":
        return False
    return params.epsilon < n ** (-2.0 / 3.0)


def _audit(space: FiniteSpace, selected: int) -> tuple[float, float, float]:
    costs = exact_costs(space)
    exact = float(costs[selected - 1])
    opt = float(costs.min())
    ratio = 1.0 if exact == opt else exact / opt
    return exact, opt, ratio


def approx_median(
    oracle: DistanceOracle, params: ApproxParams, with_exact_audit: bool = False
) -> MedianReport:
    """Sampled 1-median selection, or brute force when eps < n^(-2/3) under ``auto``."""
    n = oracle.n
    if uses_exact_fallback(n, params):
        selected, opt = brute_force_median(oracle)
        return MedianReport(selected, opt, opt, opt, 1.0, n * n, "exact-fallback")

    h, k = params.hk()
    rng = make_rng(params.seed, "approx-median")
    u = sample_points(n, h, rng)
    v = sample_points(n, k, rng)
    t, sums = empirical_argmin(oracle, u, v)
    selected = int(u[t - 1])
    exact = opt = ratio = None
    if with_exact_audit:
        exact, opt, ratio = _audit(oracle.space, selected)
    return MedianReport(selected, sums[t - 1], exact, opt, ratio, h * k, "sampled")


def approx_median_theorem(
    oracle: DistanceOracle, params: ApproxParams, with_exact_audit: bool = False
) -> MedianReport:
    """(1+eps)-approximation contract: runs :func:`approx_median` at eps/4."""
    inner = ApproxParams(params.epsilon / 4, params.c_h, params.c_k, params.seed, params.fallback)
    return approx_median(oracle, inner, with_exact_audit)
