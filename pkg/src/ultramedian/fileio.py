"""Plain-text instance formats.

Matrix files::

    # comment
    3
    0 1 2
    1 0 1
    2 1 0

Dendrogram files hold one nested expression, leaves named ``pN``::

    ((p1,p2):1,(p3,p4):2):4

Both parsers report 1-based line/column positions on failure.
"""

from __future__ import annotations

import math
import os
import re
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError, ParseError
from .metric import DendrogramSpace, DistanceMatrixSpace, FiniteSpace


def format_number(x: float) -> str:
    """Shortest round-trip text for a float; integral values drop ``.0``."""
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def _strip_comment(line: str) -> str:
    cut = line.find("#")
    return line if cut < 0 else line[:cut]


def _tokens(text: str) -> Iterator[tuple[int, list[tuple[str, int]]]]:
    """Yield ``(line_no, [(token, column), ...])`` for non-blank lines."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", _strip_comment(raw))]
        if toks:
            yield lineno, toks


def parse_matrix(text: str) -> DistanceMatrixSpace:
    lines = list(_tokens(text))
    if not lines:
        raise ParseError("empty matrix file; expected point count", 1, 1)
    lineno, toks = lines[0]
    tok, col = toks[0]
    try:
        n = int(tok)
    except ValueError:
        raise ParseError(f"expected point count, got {tok!r}", lineno, col) from None
    if n < 1:
        raise ParseError(f"point count must be >= 1, got {n}", lineno, col)
    if len(toks) > 1:
        raise ParseError("unexpected data after point count", lineno, toks[1][1])
    rows = lines[1:]
    if len(rows) < n:
        last = rows[-1][0] if rows else lineno
        raise ParseError(f"expected {n} rows, found {len(rows)}", last + 1, 1)
    if len(rows) > n:
        extra_line, extra_toks = rows[n]
        raise ParseError(f"unexpected row beyond the {n} declared", extra_line, extra_toks[0][1])
    d = np.empty((n, n))
    for i, (lineno, toks) in enumerate(rows):
        if len(toks) != n:
            col = toks[n][1] if len(toks) > n else toks[-1][1] + len(toks[-1][0])
            raise ParseError(f"row {i + 1} has {len(toks)} entries, expected {n}", lineno, col)
        for j, (tok, col) in enumerate(toks):
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"not a number: {tok!r}", lineno, col) from None
            if math.isnan(v) or math.isinf(v):
                raise ParseError(f"non-finite distance {tok!r}", lineno, col)
            if v < 0:
                raise ParseError(f"negative distance {tok!r}", lineno, col)
            d[i, j] = v
    return DistanceMatrixSpace(d)


def format_matrix(space: FiniteSpace) -> str:
    d = space.matrix()
    out = [str(space.n)]
    out.extend(" ".join(format_number(v) for v in row) for row in d)
    return "\n".join(out) + "\n"


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self._line_starts = [0] + [m.end() for m in re.finditer("\n", text)]

    def where(self, pos: int | None = None) -> tuple[int, int]:
        pos = self.pos if pos is None else pos
        lo, hi = 0, len(self._line_starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self._line_starts[mid] <= pos:
                lo = mid
            else:
                hi = mid - 1
        return lo + 1, pos - self._line_starts[lo] + 1

    def fail(self, message: str, pos: int | None = None) -> ParseError:
        return ParseError(message, *self.where(pos))

    def skip_ws(self) -> None:
        text = self.text
        while self.pos < len(text):
            c = text[self.pos]
            if c.isspace():
                self.pos += 1
            elif c == "#":
                nl = text.find("\n", self.pos)
                self.pos = len(text) if nl < 0 else nl
            else:
                break

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            got = self.peek() or "end of input"
            raise self.fail(f"expected {ch!r}, got {got!r}")
        self.pos += 1

    def match(self, pattern: re.Pattern) -> tuple[str, int]:
        self.skip_ws()
        m = pattern.match(self.text, self.pos)
        if not m:
            return "", self.pos
        self.pos = m.end()
        return m.group(), m.start()


_LEAF = re.compile(r"p(\d+)")
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


def parse_dendrogram(text: str) -> DendrogramSpace:
    """Parse the nested ``(child,...):height`` form into a DendrogramSpace."""
    cur = _Cursor(text)
    leaves: dict[int, int] = {}  # point id -> source position
    # each internal node: (children, height); children entries are ("leaf", id) / ("node", k)
    nodes: list[tuple[list[tuple[str, int]], float]] = []
    node_heights: list[float] = []
    # explicit stack of open groups: (children, heights of children, open position)
    stack: list[tuple[list[tuple[str, int]], list[float], int]] = []
    result: tuple[str, int] | None = None

    def read_item() -> tuple[tuple[str, int], float]:
        tok, at = cur.match(_LEAF)
        if not tok:
            got = cur.peek() or "end of input"
            raise cur.fail(f"expected leaf 'pN' or '(', got {got!r}")
        pid = int(tok[1:])
        if pid < 1:
            raise cur.fail(f"leaf ids start at p1, got {tok}", at)
        if pid in leaves:
            raise cur.fail(f"duplicate leaf {tok}", at)
        leaves[pid] = at
        return ("leaf", pid), 0.0

    def close_group() -> tuple[tuple[str, int], float]:
        children, heights, opened = stack.pop()
        cur.expect(")")
        if len(children) < 2:
            raise cur.fail("internal node needs at least 2 children", opened)
        cur.expect(":")
        tok, at = cur.match(_NUMBER)
        if not tok:
            raise cur.fail("expected node height after ':'")
        h = float(tok)
        if not (h > 0 and math.isfinite(h)):
            raise cur.fail(f"node height must be positive and finite, got {tok}", at)
        if max(heights) >= h:
            raise cur.fail(f"height {tok} is not above every child height", at)
        nodes.append((children, h))
        node_heights.append(h)
        return ("node", len(nodes) - 1), h

    item: tuple[tuple[str, int], float] | None = None
    while True:
        if item is None:
            if cur.peek() == "(":
                stack.append(([], [], cur.pos))
                cur.pos += 1
                continue
            item = read_item()
        if not stack:
            result = item[0]
            break
        stack[-1][0].append(item[0])
        stack[-1][1].append(item[1])
        item = None
        nxt = cur.peek()
        if nxt == ",":
            cur.pos += 1
        elif nxt == ")":
            item = close_group()
        else:
            raise cur.fail(f"expected ',' or ')', got {nxt or 'end of input'!r}")

    if cur.peek() == ";":
        cur.pos += 1
    if cur.peek():
        raise cur.fail(f"unexpected trailing input {cur.peek()!r}")

    n = len(leaves)
    missing = sorted(set(range(1, n + 1)) - set(leaves))
    if missing:
        big = max(leaves)
        raise cur.fail(f"leaves must be p1..p{n}; p{big} present but p{missing[0]} missing", leaves[big])

    m = n + len(nodes)
    parent = np.full(m, -1, dtype=np.int64)
    height = np.zeros(m)
    for k, (children, h) in enumerate(nodes):
        height[n + k] = h
        for kind, ref in children:
            parent[ref - 1 if kind == "leaf" else n + ref] = n + k
    return DendrogramSpace(n, parent, height)


def format_dendrogram(space: DendrogramSpace) -> str:
    n = space.n
    out: list[str] = []
    # iterative pre/post-order walk; deep trees would overflow recursion
    stack: list[tuple[int, int]] = [(space.root, 0)]
    while stack:
        v, state = stack.pop()
        if v < n:
            out.append(f"p{v + 1}")
            continue
        kids = space.children[v]
        if state == 0:
            out.append("(")
        elif state < len(kids):
            out.append(",")
        if state < len(kids):
            stack.append((v, state + 1))
            stack.append((kids[state], 0))
        else:
            out.append(f"):{format_number(space.height[v])}")
    return "".join(out) + "\n"


def parse_instance(text: str) -> FiniteSpace:
    """Parse either format, choosing by the first significant character."""
    for _, toks in _tokens(text):
        first = toks[0][0]
        if first.startswith(("(", "p")):
            return parse_dendrogram(text)
        return parse_matrix(text)
    raise ParseError("empty instance file", 1, 1)


def load_instance(path: str | os.PathLike) -> FiniteSpace:
    return parse_instance(Path(path).read_text())


def save_instance(space: FiniteSpace, path: str | os.PathLike, fmt: str = "matrix") -> None:
    if fmt == "matrix":
        text = format_matrix(space)
    elif fmt == "dendrogram":
        if not isinstance(space, DendrogramSpace):
            raise FormatError("only dendrogram instances can be written in dendrogram format")
        text = format_dendrogram(space)
    else:
        raise FormatError(f"unknown instance format {fmt!r}")
    Path(path).write_text(text)
