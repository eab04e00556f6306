"""Seeded instance generators.

Every family draws from its own PCG64 stream keyed by
``(seed, family, n)``, so a :class:`GenSpec` pins its instance bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Any

import numpy as np

from .errors import DomainError
from .metric import DendrogramSpace, DistanceMatrixSpace, FiniteSpace, validate
from .rng import make_rng

FAMILIES = ("random-dendrogram", "k-level", "equal-distance", "perturbed-metric")

#: Minimum gap enforced between consecutive merge heights.
HEIGHT_SPACING = 1e-12


@dataclass(frozen=True)
class GenSpec:
    """Recipe for one generated instance.

    ``hmax`` scales random merge heights (drawn in ``(0, hmax]``),
    ``k``/``heights``/``branching`` shape k-level trees, ``c`` is the
    common distance of the equal-distance family and ``delta`` the
    multiplicative noise of perturbed metrics.
    """

    family: str
    n: int
    seed: int = 0
    k: int | None = None
    heights: tuple[float, ...] | None = None
    branching: int | None = None
    c: float = 1.0
    hmax: float = 1.0
    delta: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}; expected one of {', '.join(FAMILIES)}")
        if not isinstance(self.n, int) or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if self.k is not None and self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")
        if self.branching is not None and self.branching < 2:
            raise DomainError(f"branching must be >= 2, got {self.branching}")
        if not (self.c > 0 and self.hmax > 0):
            raise DomainError("distribution bounds c and hmax must be positive")
        if not self.delta >= 0:
            raise DomainError(f"delta must be >= 0, got {self.delta}")
        if self.heights is not None:
            object.__setattr__(self, "heights", tuple(float(h) for h in self.heights))

    def with_seed(self, seed: int) -> "GenSpec":
        return replace(self, seed=seed)

    def to_string(self) -> str:
        parts = [f"n={self.n}", f"seed={self.seed}"]
        for f in fields(self):
            if f.name in ("family", "n", "seed"):
                continue
            value = getattr(self, f.name)
            if value is None or value == f.default:
                continue
            if f.name == "heights":
                value = "/".join(repr(h) for h in value)
            parts.append(f"{f.name}={value}")
        return f"{self.family}:" + ",".join(parts)

    def __str__(self) -> str:
        return self.to_string()


_INT_KEYS = {"n", "seed", "k", "branching"}
_FLOAT_KEYS = {"c", "hmax", "delta"}


def parse_spec(text: str) -> GenSpec:
    """Parse ``family:n=..,seed=..,k=..,delta=..`` (``heights=1/3`` for lists)."""
    family, _, rest = text.strip().partition(":")
    kwargs: dict[str, Any] = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if not eq:
            raise DomainError(f"malformed spec item {item!r}; expected key=value")
        try:
            if key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key == "heights":
                kwargs[key] = tuple(float(v) for v in value.split("/"))
            else:
                raise DomainError(f"unknown spec key {key!r}")
        except ValueError:
            raise DomainError(f"bad value for {key}: {value!r}") from None
    if "n" not in kwargs:
        raise DomainError(f"spec {text!r} is missing n")
    return GenSpec(family=family.strip(), **kwargs)


def _require(spec: GenSpec, family: str) -> None:
    if spec.family != family:
        raise DomainError(f"expected a {family} spec, got {spec.family}")


def _merge_heights(rng: np.random.Generator, count: int, hmax: float) -> np.ndarray:
    # 1 - U maps [0, 1) onto (0, 1]
    h = np.sort(hmax * (1.0 - rng.random(count)))
    for i in range(1, count):
        if h[i] <= h[i - 1]:
            h[i] = h[i - 1] + HEIGHT_SPACING
    return h


def gen_random_dendrogram(spec: GenSpec) -> DendrogramSpace:
    """Random binary merge tree: repeatedly join two uniformly chosen clusters."""
    _require(spec, "random-dendrogram")
    n = spec.n
    rng = make_rng(spec.seed, spec.family, n)
    heights = _merge_heights(rng, n - 1, spec.hmax)
    parent = np.full(2 * n - 1, -1, dtype=np.int64)
    height = np.zeros(2 * n - 1)
    active = list(range(n))
    for step in range(n - 1):
        node = n + step
        for _ in range(2):
            pos = int(rng.integers(len(active)))
            active[pos], active[-1] = active[-1], active[pos]
            parent[active.pop()] = node
        height[node] = heights[step]
        active.append(node)
    return DendrogramSpace(n, parent, height)


def gen_k_level(spec: GenSpec) -> DendrogramSpace:
    """Balanced tree of depth k with one fixed height per level.

    Leaf labels are shuffled by the seed; the shape and the distance
    multiset do not depend on it. Groups that would hold a single child
    are collapsed so every internal node keeps at least two children.
    """
    _require(spec, "k-level")
    k = spec.k if spec.k is not None else 1
    heights = spec.heights if spec.heights is not None else tuple(float(i) for i in range(1, k + 1))
    if len(heights) != k:
        raise DomainError(f"need {k} level heights, got {len(heights)}")
    if heights[0] <= 0 or any(b <= a for a, b in zip(heights, heights[1:])):
        raise DomainError(f"level heights must be positive and strictly increasing, got {heights}")
    n = spec.n
    branching = spec.branching
    if branching is None:
        branching = 2
        while branching**k < n:
            branching += 1
    elif branching**k < n:
        raise DomainError(f"branching {branching} with {k} levels holds fewer than {n} leaves")

    rng = make_rng(spec.seed, spec.family, n)
    labels = rng.permutation(n)
    parent: list[int] = [-1] * n
    height: list[float] = [0.0] * n

    def build(members: np.ndarray, level: int) -> int:
        if len(members) == 1:
            return int(members[0])
        kids = [build(chunk, level - 1) for chunk in np.array_split(members, branching) if len(chunk)]
        if len(kids) == 1:
            return kids[0]
        node = len(parent)
        parent.append(-1)
        height.append(heights[level - 1])
        for c in kids:
            parent[c] = node
        return node

    build(labels, k)
    return DendrogramSpace(n, parent, height)


def gen_equal_distance(spec: GenSpec) -> DendrogramSpace:
    """Star tree: every pair of distinct points is at distance ``c``."""
    _require(spec, "equal-distance")
    n = spec.n
    if n == 1:
        return DendrogramSpace(1, [-1], [0.0])
    return DendrogramSpace(n, [n] * n + [-1], [0.0] * n + [spec.c])


def gen_perturbed_metric(spec: GenSpec) -> DistanceMatrixSpace:
    """Random-dendrogram ultrametric with multiplicative noise, repaired to a metric.

    Each pair is scaled by an independent factor in ``[1, 1 + delta)``,
    the matrix is kept symmetric, and a Floyd-Warshall closure restores
    the ordinary triangle inequality. The validator's verdict is stored
    in ``metadata["verdict"]``.
    """
    _require(spec, "perturbed-metric")
    n = spec.n
    base = gen_random_dendrogram(replace(spec, family="random-dendrogram", delta=0.0))
    d = base.matrix().copy()
    if spec.delta > 0:
        rng = make_rng(spec.seed, spec.family, n)
        iu = np.triu_indices(n, 1)
        d[iu] *= 1.0 + spec.delta * rng.random(len(iu[0]))
        d.T[iu] = d[iu]
        for m in range(n):
            np.minimum(d, d[:, m, None] + d[None, m, :], out=d)
        if not np.array_equal(d, d.T):
            raise RuntimeError("shortest-path closure broke symmetry")
    space = DistanceMatrixSpace(d)
    verdict = validate(space)
    if not verdict.valid:
        raise RuntimeError(f"perturbed metric failed repair: {verdict}")
    space.metadata.update(spec=spec.to_string(), verdict=verdict.kind)
    return space


_DISPATCH = {
    "random-dendrogram": gen_random_dendrogram,
    "k-level": gen_k_level,
    "equal-distance": gen_equal_distance,
    "perturbed-metric": gen_perturbed_metric,
}


def generate(spec: GenSpec | str) -> FiniteSpace:
    if isinstance(spec, str):
        spec = parse_spec(spec)
    return _DISPATCH[spec.family](spec)


def is_ultrametric_family(spec: GenSpec) -> bool:
    return spec.family != "perturbed-metric" or spec.delta == 0

