import itertools

import numpy as np
import pytest

from ultramedian.metric import DendrogramSpace, DistanceMatrixSpace

D4_ROWS = [
    [0, 1, 4, 4],
    [1, 0, 4, 4],
    [4, 4, 0, 2],
    [4, 4, 2, 0],
]
METRIC_ONLY_ROWS = [
    [0, 1, 2],
    [1, 0, 1],
    [2, 1, 0],
]


@pytest.fixture
def d4():
    return DistanceMatrixSpace(D4_ROWS)


@pytest.fixture
def metric_only():
    return DistanceMatrixSpace(METRIC_ONLY_ROWS)


# --- independent oracles: slow, loop-based, share no code with the package ---


def naive_lca_height(space: DendrogramSpace, x: int, y: int) -> float:
    """Distance by walking parent pointers (0-based leaves)."""
    ancestors = []
    v = x
    while v != -1:
        ancestors.append(v)
        v = int(space.parent[v])
    seen = set(ancestors)
    v = y
    while v not in seen:
        v = int(space.parent[v])
    return float(space.height[v])


def tree_dp_costs(space: DendrogramSpace) -> list[float]:
    """cost(x) = sum over proper ancestors a of x: height(a) * (|a| - |child of a toward x|)."""
    m = len(space.parent)
    size = [1 if v < space.n else 0 for v in range(m)]
    # children always have smaller height than parents, so height order is a topological order
    for v in sorted(range(m), key=lambda v: space.height[v]):
        p = int(space.parent[v])
        if p >= 0:
            size[p] += size[v]
    costs = []
    for x in range(space.n):
        total, v = 0.0, x
        while space.parent[v] != -1:
            p = int(space.parent[v])
            total += space.height[p] * (size[p] - size[v])
            v = p
        costs.append(total)
    return costs


def brute_triples(d):
    """(strong_ok, weak_ok) by explicit loops over all ordered triples."""
    n = len(d)
    strong = weak = True
    for x, y, z in itertools.product(range(n), repeat=3):
        if d[x][z] > max(d[x][y], d[y][z]) * (1 + 1e-9) + 1e-12:
            strong = False
        if d[x][z] > (d[x][y] + d[y][z]) * (1 + 1e-9) + 1e-12:
            weak = False
    return strong, weak


def brute_isosceles(d) -> bool:
    n = len(d)
    for x, y, z in itertools.product(range(n), repeat=3):
        a, b, c = sorted((d[x][y], d[x][z], d[y][z]))
        if c - b > 1e-9 * c + 1e-12:
            return False
    return True


def as_lists(space) -> list[list[float]]:
    return np.asarray(space.matrix()).tolist()


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_line():
    """Record one summary line per acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE_LINES.append(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
