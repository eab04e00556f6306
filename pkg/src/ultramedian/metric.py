"""Finite (ultra)metric spaces, the query-counted oracle and axiom validators.

Points are identified externally by 1-based ids ``1..n``; conversion to
0-based array indices happens at the public boundary of this module.
"""

from __future__ import annotations

import os
import threading
import warnings
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import DomainError, FormatError
from .rng import make_rng

RTOL = 1e-9
ATOL = 1e-12

#: Full O(n^3) triple enumeration is used up to this many points.
DEFAULT_FULL_VALIDATION_CAP = 2048
#: Environment variable overriding the validation and audit caps.
ENV_MAX_N = "ULTRAMEDIAN_MAX_N"


def env_cap(default: int) -> int:
    """Return ``ULTRAMEDIAN_MAX_N`` if set, else ``default``."""
    raw = os.environ.get(ENV_MAX_N)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise DomainError(f"{ENV_MAX_N} must be an integer, got {raw!r}") from None
    if value < 1:
        raise DomainError(f"{ENV_MAX_N} must be >= 1, got {value}")
    return value


def _tol(x: np.ndarray | float) -> np.ndarray | float:
    return np.maximum(RTOL * np.abs(x), ATOL)


class FiniteSpace:
    """Common surface of the two space representations.

    Subclasses implement ``_lookup(i, j)`` on broadcastable 0-based index
    arrays; everything else is derived from it.
    """

    n: int

    def _lookup(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def index(self, a: Any) -> int:
        """Convert a 1-based point id to a 0-based index, checking range."""
        if isinstance(a, (bool, np.bool_)) or not isinstance(a, (int, np.integer)):
            raise DomainError(f"point id must be an integer, got {a!r}")
        a = int(a)
        if not 1 <= a <= self.n:
            raise DomainError(f"point id {a} outside [1, {self.n}]")
        return a - 1

    def indices(self, ids: Sequence[int] | np.ndarray) -> np.ndarray:
        arr = np.asarray(ids)
        if arr.size == 0:
            return np.zeros(0, dtype=np.int64)
        if arr.dtype.kind not in "iu":
            raise DomainError(f"point ids must be integers, got dtype {arr.dtype}")
        arr = arr.astype(np.int64).ravel()
        if arr.min() < 1 or arr.max() > self.n:
            bad = arr[(arr < 1) | (arr > self.n)][0]
            raise DomainError(f"point id {bad} outside [1, {self.n}]")
        return arr - 1

    def distance(self, a: int, b: int) -> float:
        i, j = self.index(a), self.index(b)
        return float(self._lookup(np.asarray(i), np.asarray(j)))

    def block(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        """Distances between every id in ``rows`` and every id in ``cols``."""
        ri, ci = self.indices(rows), self.indices(cols)
        return self._block(ri, ci)

    def _block(self, ri: np.ndarray, ci: np.ndarray) -> np.ndarray:
        return np.asarray(self._lookup(ri[:, None], ci[None, :]), dtype=np.float64)

    def row(self, a: int) -> np.ndarray:
        i = self.index(a)
        return self._block(np.array([i]), np.arange(self.n))[0]

    def matrix(self) -> np.ndarray:
        idx = np.arange(self.n)
        return self._block(idx, idx)


class DistanceMatrixSpace(FiniteSpace):
    """A space given by an explicit n x n distance matrix.

    Construction checks only the format (square, finite, non-negative);
    metric axioms are the job of :func:`validate`.
    """

    def __init__(self, d: Any, metadata: dict[str, Any] | None = None):
        try:
            arr = np.array(d, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"distance matrix is not numeric: {exc}") from None
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise FormatError(f"distance matrix must be square, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise FormatError("distance matrix must have at least one point")
        if np.isnan(arr).any():
            i, j = np.argwhere(np.isnan(arr))[0]
            raise FormatError(f"NaN distance at ({i + 1}, {j + 1})")
        if np.isinf(arr).any():
            i, j = np.argwhere(np.isinf(arr))[0]
            raise FormatError(f"infinite distance at ({i + 1}, {j + 1})")
        if (arr < 0).any():
            i, j = np.argwhere(arr < 0)[0]
            raise FormatError(f"negative distance {arr[i, j]!r} at ({i + 1}, {j + 1})")
        arr.flags.writeable = False
        self.d = arr
        self.n = arr.shape[0]
        self.metadata: dict[str, Any] = dict(metadata or {})

    def _lookup(self, i, j):
        return self.d[i, j]

    def _block(self, ri, ci):
        return self.d[np.ix_(ri, ci)]

    def matrix(self) -> np.ndarray:
        return self.d

    def scaled(self, factor: float) -> "DistanceMatrixSpace":
        if not factor > 0:
            raise DomainError(f"scale factor must be positive, got {factor}")
        return DistanceMatrixSpace(self.d * factor, self.metadata)

    def __repr__(self) -> str:
        return f"DistanceMatrixSpace(n={self.n})"


class DendrogramSpace(FiniteSpace):
    """An ultrametric realised as a rooted tree with increasing node heights.

    Nodes ``0..n-1`` are the leaves (point ``i+1`` is node ``i``); nodes
    ``n..m-1`` are internal. ``parent[root] == -1``. The distance between
    two leaves is the height of their lowest common ancestor, answered in
    O(1) with a range-maximum table over an Euler tour (heights increase
    toward the root, so the LCA is the highest node between the two first
    visits).
    """

    def __init__(self, n: int, parent: Sequence[int], height: Sequence[float]):
        parent_arr = np.asarray(parent, dtype=np.int64)
        height_arr = np.asarray(height, dtype=np.float64)
        self.n = int(n)
        self._check(parent_arr, height_arr)
        parent_arr.flags.writeable = False
        height_arr.flags.writeable = False
        self.parent = parent_arr
        self.height = height_arr
        self.root = int(np.flatnonzero(parent_arr == -1)[0])
        self.children: list[list[int]] = [[] for _ in range(len(parent_arr))]
        for v, p in enumerate(parent_arr.tolist()):
            if p >= 0:
                self.children[p].append(v)
        self._build_rmq()

    def _check(self, parent: np.ndarray, height: np.ndarray) -> None:
        n = self.n
        if n < 1:
            raise FormatError("dendrogram must have at least one leaf")
        m = len(parent)
        if parent.ndim != 1 or height.shape != parent.shape or m < n:
            raise FormatError("parent and height arrays must be 1-D, equal length, >= n")
        if not np.isfinite(height).all():
            raise FormatError("dendrogram heights must be finite")
        if (height[:n] != 0).any():
            raise FormatError("leaf heights must be 0")
        if (height[n:] <= 0).any():
            raise FormatError("internal node heights must be positive")
        roots = np.flatnonzero(parent == -1)
        if len(roots) != 1:
            raise FormatError(f"dendrogram must have exactly one root, found {len(roots)}")
        nonroot = parent != -1
        p = parent[nonroot]
        if ((p < n) | (p >= m)).any():
            raise FormatError("parent pointers must reference internal nodes")
        # strictly increasing heights along parent links also rules out cycles
        if (height[p] <= height[nonroot]).any():
            v = int(np.flatnonzero(nonroot)[np.argmax(height[p] <= height[nonroot])])
            raise FormatError(f"node {v} is not strictly below its parent")
        counts = np.bincount(p, minlength=m)[n:]
        if (counts < 2).any():
            v = n + int(np.argmax(counts < 2))
            raise FormatError(f"internal node {v} has fewer than 2 children")

    def _build_rmq(self) -> None:
        m = len(self.parent)
        euler: list[int] = [self.root]
        pos = [0] * m
        stack = [self.root]
        while stack:
            v = stack[-1]
            if pos[v] < len(self.children[v]):
                c = self.children[v][pos[v]]
                pos[v] += 1
                euler.append(c)
                stack.append(c)
            else:
                stack.pop()
                if stack:
                    euler.append(stack[-1])
        tour = np.asarray(euler, dtype=np.int64)
        first = np.full(m, -1, dtype=np.int64)
        # reversed assignment leaves the earliest position in place
        first[tour[::-1]] = np.arange(len(tour) - 1, -1, -1)
        self._first = first[: self.n]
        base = self.height[tour]
        levels = [base]
        span = 1
        while 2 * span <= len(base):
            prev = levels[-1]
            levels.append(np.maximum(prev[:-span], prev[span:]))
            span *= 2
        table = np.full((len(levels), len(base)), -np.inf)
        for lvl, row in enumerate(levels):
            table[lvl, : len(row)] = row
        self._table = table
        lengths = np.arange(len(base) + 1)
        lengths[0] = 1
        self._log2 = np.floor(np.log2(lengths)).astype(np.int64)

    def _lookup(self, i, j):
        fi, fj = self._first[i], self._first[j]
        lo = np.minimum(fi, fj)
        hi = np.maximum(fi, fj)
        lvl = self._log2[hi - lo + 1]
        return np.maximum(self._table[lvl, lo], self._table[lvl, hi - (1 << lvl) + 1])

    def scaled(self, factor: float) -> "DendrogramSpace":
        if not factor > 0:
            raise DomainError(f"scale factor must be positive, got {factor}")
        return DendrogramSpace(self.n, self.parent, self.height * factor)

    def __repr__(self) -> str:
        return f"DendrogramSpace(n={self.n}, nodes={len(self.parent)})"


def dendrogram_to_matrix(space: DendrogramSpace) -> DistanceMatrixSpace:
    """Materialise the LCA-height ultrametric of a dendrogram."""
    if not isinstance(space, DendrogramSpace):
        raise FormatError(f"expected a DendrogramSpace, got {type(space).__name__}")
    return DistanceMatrixSpace(space.matrix())


class DistanceOracle:
    """Counts every distance evaluation made through it.

    ``query_count`` grows by exactly one per pair, including ``a == b``
    and including pairs answered in bulk by :meth:`query_block`. The
    counter is lock-protected, so one oracle may be shared across threads
    (counts are then attributed jointly).
    """

    def __init__(self, space: FiniteSpace):
        self.space = space
        self._count = 0
        self._lock = threading.Lock()

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def query_count(self) -> int:
        return self._count

    def _charge(self, m: int) -> None:
        with self._lock:
            self._count += m

    def query(self, a: int, b: int) -> float:
        value = self.space.distance(a, b)
        self._charge(1)
        return value

    def query_block(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        out = self.space.block(rows, cols)
        self._charge(out.size)
        return out

    def query_row(self, a: int) -> np.ndarray:
        out = self.space.row(a)
        self._charge(out.size)
        return out

    def reset(self) -> None:
        with self._lock:
            self._count = 0


def query(oracle: DistanceOracle, a: int, b: int) -> float:
    """Distance between points ``a`` and ``b``; costs one query."""
    return oracle.query(a, b)


@dataclass(frozen=True)
class Verdict:
    """Outcome of :func:`validate`.

    ``kind`` is ``"ultrametric"``, ``"metric-only"`` or ``"invalid"``.
    For ``metric-only`` the witness ``(x, y, z)`` satisfies
    ``d(x,z) > max(d(x,y), d(y,z))``; for ``invalid`` it is the offending
    pair or the triple breaking the ordinary triangle inequality.
    """

    kind: str
    witness: tuple[int, ...] | None = None
    reason: str = ""
    sampled: bool = False

    @property
    def valid(self) -> bool:
        return self.kind != "invalid"

    @property
    def ultrametric(self) -> bool:
        return self.kind == "ultrametric"

    def __str__(self) -> str:
        label = {
            "ultrametric": "Valid(Ultrametric)",
            "metric-only": "Valid(MetricOnly)",
            "invalid": "Invalid",
        }[self.kind]
        parts = [label]
        if self.witness is not None:
            parts.append(f"witness={self.witness}")
        if self.reason:
            parts.append(self.reason)
        if self.sampled:
            parts.append("(sampled)")
        return " ".join(parts)


def _as_space(space: Any) -> FiniteSpace:
    if isinstance(space, FiniteSpace):
        return space
    return DistanceMatrixSpace(space)


def _fmt(x: float) -> str:
    return repr(float(x))


def validate(
    space: Any,
    *,
    allow_pseudo: bool = False,
    max_full: int | None = None,
    sample_budget: int = 1_000_000,
    seed: int = 0,
) -> Verdict:
    """Classify a space as ultrametric, metric-only or invalid.

    Raw arrays are accepted and go through :class:`DistanceMatrixSpace`
    first, so format problems raise :class:`FormatError` rather than
    yielding an ``invalid`` verdict. Dendrograms are ultrametric by
    construction (their invariants are checked when built).

    Above ``max_full`` points (default 2048, or ``ULTRAMEDIAN_MAX_N``)
    the triple check samples ``sample_budget`` random triples.
    """
    space = _as_space(space)
    if isinstance(space, DendrogramSpace):
        return Verdict("ultrametric", reason="dendrogram (structural check)")
    d = space.matrix()
    n = space.n

    diag = np.abs(np.diagonal(d)) > ATOL
    if diag.any():
        i = int(np.argmax(diag))
        return Verdict("invalid", (i + 1, i + 1), f"d({i + 1},{i + 1})={_fmt(d[i, i])} != 0")

    asym = np.abs(d - d.T) > _tol(np.maximum(d, d.T))
    if asym.any():
        i, j = (int(v) for v in np.argwhere(np.triu(asym))[0])
        return Verdict(
            "invalid", (i + 1, j + 1),
            f"asymmetric: d({i + 1},{j + 1})={_fmt(d[i, j])}, d({j + 1},{i + 1})={_fmt(d[j, i])}",
        )

    zero = (d <= ATOL) & ~np.eye(n, dtype=bool)
    if zero.any():
        i, j = (int(v) for v in np.argwhere(np.triu(zero))[0])
        if not allow_pseudo:
            return Verdict("invalid", (i + 1, j + 1), f"d({i + 1},{j + 1})=0 for distinct points")
        warnings.warn(
            f"pseudo-metric: d({i + 1},{j + 1})=0 for distinct points", stacklevel=2
        )

    cap = max_full if max_full is not None else env_cap(DEFAULT_FULL_VALIDATION_CAP)
    if n <= cap:
        strong, weak = _full_triples(d)
        sampled = False
    else:
        strong, weak = _sampled_triples(d, sample_budget, seed)
        sampled = True

    if weak is not None:
        x, y, z = weak
        return Verdict(
            "invalid", (x + 1, y + 1, z + 1),
            f"triangle: d({x + 1},{z + 1})={_fmt(d[x, z])} > "
            f"d({x + 1},{y + 1})+d({y + 1},{z + 1})={_fmt(d[x, y] + d[y, z])}",
            sampled,
        )
    if strong is not None:
        x, y, z = strong
        return Verdict(
            "metric-only", (x + 1, y + 1, z + 1),
            f"d({x + 1},{z + 1})={_fmt(d[x, z])} > "
            f"max(d({x + 1},{y + 1}), d({y + 1},{z + 1}))={_fmt(max(d[x, y], d[y, z]))}",
            sampled,
        )
    return Verdict("ultrametric", sampled=sampled)


def _full_triples(d: np.ndarray):
    """First strong and first ordinary triangle violations, ordered by middle point."""
    strong = weak = None
    for y in range(d.shape[0]):
        left = d[:, y][:, None]
        right = d[y, :][None, :]
        if strong is None:
            m = np.maximum(left, right)
            bad = d > m + _tol(m)
            if bad.any():
                x, z = np.argwhere(bad)[0]
                strong = (int(x), y, int(z))
        if strong is not None:
            # the strong inequality implies the ordinary one, so only look once it fails
            s = left + right
            bad = d > s + _tol(s)
            if bad.any():
                x, z = np.argwhere(bad)[0]
                weak = (int(x), y, int(z))
                break
    return strong, weak


def _sampled_triples(d: np.ndarray, budget: int, seed: int):
    rng = make_rng(seed, "validate", d.shape[0])
    strong = weak = None
    n = d.shape[0]
    chunk = 1 << 18
    done = 0
    while done < budget and weak is None:
        m = min(chunk, budget - done)
        x, y, z = (rng.integers(0, n, size=m) for _ in range(3))
        dxz, dxy, dyz = d[x, z], d[x, y], d[y, z]
        if strong is None:
            mx = np.maximum(dxy, dyz)
            bad = np.flatnonzero(dxz > mx + _tol(mx))
            if bad.size:
                k = bad[0]
                strong = (int(x[k]), int(y[k]), int(z[k]))
        s = dxy + dyz
        bad = np.flatnonzero(dxz > s + _tol(s))
        if bad.size:
            k = bad[0]
            weak = (int(x[k]), int(y[k]), int(z[k]))
        done += m
    return strong, weak


@dataclass(frozen=True)
class IsoscelesVerdict:
    passed: bool
    triple: tuple[int, int, int] | None = None
    exhaustive: bool = True
    checked: int = 0

    def __bool__(self) -> bool:
        return self.passed


def isosceles_check(space: Any, sample_budget: int | None = None, seed: int = 0) -> IsoscelesVerdict:
    """Check that the two largest distances of every triple are equal.

    All ``n**3`` ordered triples are enumerated when that fits in
    ``sample_budget`` (or when no budget is given); otherwise
    ``sample_budget`` random triples are drawn. The first violating triple
    (1-based, lexicographic in the exhaustive case) is returned.
    """
    space = _as_space(space)
    n = space.n
    if sample_budget is None or n**3 <= sample_budget:
        d = space.matrix()
        for x in range(n):
            dxy = np.broadcast_to(d[x, :, None], (n, n))
            dxz = np.broadcast_to(d[x, None, :], (n, n))
            tri = np.sort(np.stack([dxy, dxz, d]), axis=0)
            bad = tri[2] - tri[1] > _tol(tri[2])
            if bad.any():
                y, z = np.argwhere(bad)[0]
                return IsoscelesVerdict(False, (x + 1, int(y) + 1, int(z) + 1), True, (x + 1) * n * n)
        return IsoscelesVerdict(True, None, True, n**3)

    rng = make_rng(seed, "isosceles", n)
    x, y, z = (rng.integers(0, n, size=sample_budget) for _ in range(3))
    tri = np.sort(np.stack([space._lookup(x, y), space._lookup(x, z), space._lookup(y, z)]), axis=0)
    bad = np.flatnonzero(tri[2] - tri[1] > _tol(tri[2]))
    if bad.size:
        k = bad[0]
        return IsoscelesVerdict(False, (int(x[k]) + 1, int(y[k]) + 1, int(z[k]) + 1), False, int(k) + 1)
    return IsoscelesVerdict(True, None, False, sample_budget)
