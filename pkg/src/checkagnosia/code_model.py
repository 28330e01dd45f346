"""Parity-check matrices, Tanner graphs and layer covers for CSS codes.

Matrices are stored by row support (0-indexed, sorted qubit indices), which
is what alist files carry and what the message-passing kernels consume.
"""

from __future__ import annotations

import io
import os
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np


class AlistParseError(ValueError):
    """Raised for malformed alist input; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LayerFileError(ValueError):
    pass


@dataclass(frozen=True)
class ParityCheckMatrix:
    """Sparse binary matrix given by the qubit support of each check."""

    n_checks: int
    n_qubits: int
    rows: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(int(q) for q in r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        if len(rows) != self.n_checks:
            raise ValueError(f"expected {self.n_checks} rows, got {len(rows)}")
        for c, r in enumerate(rows):
            if not r:
                raise ValueError(f"check {c} has empty support")
            if any(b <= a for a, b in zip(r, r[1:])):
                raise ValueError(f"check {c} support is not strictly increasing")
            if r[0] < 0 or r[-1] >= self.n_qubits:
                raise ValueError(f"check {c} references a qubit outside [0, {self.n_qubits})")

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[int]], n_qubits: int | None = None) -> "ParityCheckMatrix":
        rows = [tuple(sorted(set(int(q) for q in r))) for r in rows]
        if n_qubits is None:
            n_qubits = 1 + max((r[-1] for r in rows if r), default=-1)
        return cls(len(rows), n_qubits, tuple(rows))

    @classmethod
    def from_dense(cls, m) -> "ParityCheckMatrix":
        m = np.asarray(m) % 2
        rows = [tuple(np.flatnonzero(r).tolist()) for r in m]
        return cls(m.shape[0], m.shape[1], tuple(rows))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_checks, self.n_qubits), dtype=np.uint8)
        out[np.repeat(np.arange(self.n_checks), np.diff(self.indptr)), self.indices] = 1
        return out

    @cached_property
    def indptr(self) -> np.ndarray:
        """CSR row pointer; edge ``e`` of check ``c`` lies in ``indptr[c]:indptr[c+1]``."""
        return np.concatenate(([0], np.cumsum([len(r) for r in self.rows]))).astype(np.int64)

    @cached_property
    def indices(self) -> np.ndarray:
        return np.fromiter((q for r in self.rows for q in r), dtype=np.int64, count=int(self.indptr[-1]))

    @property
    def n_edges(self) -> int:
        return int(self.indptr[-1])

    @cached_property
    def columns(self) -> tuple[tuple[int, ...], ...]:
        cols: list[list[int]] = [[] for _ in range(self.n_qubits)]
        for c, r in enumerate(self.rows):
            for q in r:
                cols[q].append(c)
        return tuple(tuple(col) for col in cols)

    def row_weights(self) -> list[int]:
        return [len(r) for r in self.rows]

    def column_weights(self) -> list[int]:
        return [len(col) for col in self.columns]


@dataclass(frozen=True)
class CssCode:
    h_x: ParityCheckMatrix
    h_z: ParityCheckMatrix

    def __post_init__(self):
        if self.h_x.n_qubits != self.h_z.n_qubits:
            raise ValueError(
                f"h_x has {self.h_x.n_qubits} qubits but h_z has {self.h_z.n_qubits}"
            )

    @property
    def n_qubits(self) -> int:
        return self.h_x.n_qubits

    def decoding_matrix(self, error_type: str) -> ParityCheckMatrix:
        """Matrix whose syndrome reveals errors of ``error_type`` (h_z for X errors)."""
        return self.h_z if _error_type(error_type) == "X" else self.h_x

    def stabilizer_matrix(self, error_type: str) -> ParityCheckMatrix:
        """Same-type stabilizers: residuals in their row space are harmless."""
        return self.h_x if _error_type(error_type) == "X" else self.h_z


def _error_type(error_type: str) -> str:
    t = str(error_type).upper()
    if t not in ("X", "Z"):
        raise ValueError(f"error_type must be 'X' or 'Z', got {error_type!r}")
    return t


@dataclass(frozen=True)
class TannerGraph:
    h: ParityCheckMatrix
    check_neighbors: tuple[tuple[int, ...], ...]
    qubit_neighbors: tuple[tuple[int, ...], ...]
    isolated_qubits: tuple[int, ...] = ()

    @property
    def n_checks(self) -> int:
        return self.h.n_checks

    @property
    def n_qubits(self) -> int:
        return self.h.n_qubits

    @cached_property
    def peeling_report(self) -> tuple[tuple[bool, int], ...]:
        """``no_stopping_subset_check`` for every check, computed once."""
        return tuple(no_stopping_subset_check(self, c) for c in range(self.n_checks))


@dataclass(frozen=True)
class LayerCover:
    layers: tuple[tuple[int, ...], ...]
    t: int = 1
    eta: float = field(init=False)

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if not self.layers or any(len(layer) == 0 for layer in self.layers):
            raise ValueError("layer cover needs at least one layer and no empty layers")
        layers = tuple(tuple(sorted(int(c) for c in layer)) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "eta", len(layers) / self.t)

    def validate(self, h: ParityCheckMatrix) -> None:
        """Raise ``ValueError`` unless each check appears ``t`` times and layers are qubit-disjoint."""
        counts = np.zeros(h.n_checks, dtype=np.int64)
        for k, layer in enumerate(self.layers):
            if len(set(layer)) != len(layer):
                raise ValueError(f"layer {k} repeats a check")
            seen: set[int] = set()
            for c in layer:
                if not 0 <= c < h.n_checks:
                    raise ValueError(f"layer {k} references check {c} outside [0, {h.n_checks})")
                counts[c] += 1
                support = set(h.rows[c])
                if seen & support:
                    raise ValueError(f"layer {k}: check {c} shares a qubit with another layer member")
                seen |= support
        bad = np.flatnonzero(counts != self.t)
        if bad.size:
            raise ValueError(
                f"check {int(bad[0])} covered {int(counts[bad[0]])} times, expected {self.t}"
            )


# --- alist ---------------------------------------------------------------


def parse_alist(text: str | TextIO) -> ParityCheckMatrix:
    """Parse an alist description (1-indexed) into a :class:`ParityCheckMatrix`.

    The file lists ``n_qubits n_checks``, the maximum degrees, the column and
    row degree lists, then one adjacency line per column followed by one per
    row. Zero entries inside adjacency lines are treated as padding. Row
    supports are taken from the row lists and cross-checked against the
    column lists.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, toks) for i, toks in lines if toks]
    pos = 0

    def take(what: str) -> tuple[int, list[int]]:
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise AlistParseError(last + 1, f"unexpected end of file, expected {what}")
        lineno, toks = lines[pos]
        pos += 1
        try:
            return lineno, [int(t) for t in toks]
        except ValueError:
            raise AlistParseError(lineno, f"non-integer token in {what}") from None

    ln, header = take("header")
    if len(header) != 2 or min(header) < 1:
        raise AlistParseError(ln, "header must be 'n_qubits n_checks' with positive values")
    n_qubits, n_checks = header
    ln, maxdeg = take("maximum degrees")
    if len(maxdeg) != 2:
        raise AlistParseError(ln, "expected 'max_column_degree max_row_degree'")
    ln, col_deg = take("column degrees")
    if len(col_deg) != n_qubits:
        raise AlistParseError(ln, f"expected {n_qubits} column degrees, got {len(col_deg)}")
    ln, row_deg = take("row degrees")
    if len(row_deg) != n_checks:
        raise AlistParseError(ln, f"expected {n_checks} row degrees, got {len(row_deg)}")

    def adjacency(count: int, limit: int, degrees: list[int], kind: str) -> list[tuple[int, list[int]]]:
        out = []
        for j in range(count):
            ln, entries = take(f"{kind} {j + 1} adjacency")
            nz = [x for x in entries if x != 0]
            for x in nz:
                if not 1 <= x <= limit:
                    raise AlistParseError(ln, f"index {x} out of range [1, {limit}]")
            if len(nz) != degrees[j]:
                raise AlistParseError(
                    ln, f"{kind} {j + 1} lists {len(nz)} entries but degree is {degrees[j]}"
                )
            if len(set(nz)) != len(nz):
                raise AlistParseError(ln, f"{kind} {j + 1} repeats an index")
            out.append((ln, [x - 1 for x in nz]))
        return out

    col_adj = adjacency(n_qubits, n_checks, col_deg, "column")
    row_adj = adjacency(n_checks, n_qubits, row_deg, "row")

    edges_from_rows = {(c, q) for c, (_, qs) in enumerate(row_adj) for q in qs}
    edges_from_cols = {(c, q) for q, (_, cs) in enumerate(col_adj) for c in cs}
    if edges_from_rows != edges_from_cols:
        c, q = min(edges_from_rows ^ edges_from_cols)
        where = row_adj[c][0] if (c, q) in edges_from_rows else col_adj[q][0]
        raise AlistParseError(where, f"edge (check {c + 1}, qubit {q + 1}) missing from the other adjacency view")
    for c, (ln, qs) in enumerate(row_adj):
        if not qs:
            raise AlistParseError(ln, f"row {c + 1} is empty")
    return ParityCheckMatrix(n_checks, n_qubits, tuple(tuple(sorted(qs)) for _, qs in row_adj))


def load_alist(path: str | os.PathLike) -> ParityCheckMatrix:
    with open(path, encoding="utf-8") as fh:
        return parse_alist(fh.read())


def format_alist(h: ParityCheckMatrix) -> str:
    cols = h.columns
    out = io.StringIO()
    out.write(f"{h.n_qubits} {h.n_checks}\n")
    out.write(f"{max((len(c) for c in cols), default=0)} {max(len(r) for r in h.rows)}\n")
    out.write(" ".join(str(len(c)) for c in cols) + "\n")
    out.write(" ".join(str(len(r)) for r in h.rows) + "\n")
    for col in cols:
        # an isolated qubit still needs its line; 0 is padding
        out.write((" ".join(str(c + 1) for c in col) or "0") + "\n")
    for row in h.rows:
        out.write(" ".join(str(q + 1) for q in row) + "\n")
    return out.getvalue()


# --- graph structure -----------------------------------------------------


def build_tanner(h: ParityCheckMatrix) -> TannerGraph:
    cols = h.columns
    isolated = tuple(q for q, col in enumerate(cols) if not col)
    if isolated:
        warnings.warn(f"{len(isolated)} isolated qubit(s), first is {isolated[0]}", stacklevel=2)
    return TannerGraph(h, h.rows, cols, isolated)


def has_four_cycles(h: ParityCheckMatrix) -> bool:
    """True iff two distinct checks share at least two qubits."""
    seen_pairs: set[tuple[int, int]] = set()
    for r in h.rows:
        for i, a in enumerate(r):
            for b in r[i + 1:]:
                if (a, b) in seen_pairs:
                    return True
                seen_pairs.add((a, b))
    return False


def no_stopping_subset_check(graph: TannerGraph, c: int) -> tuple[bool, int]:
    """Peel the erasure of ``N(c)`` and report ``(fully_resolved, rounds)``.

    Each round resolves, simultaneously, every erased qubit adjacent to a
    check with exactly one erased neighbour. ``N(c)`` contains no stopping
    subset iff this terminates with nothing left erased.
    """
    erased = set(graph.check_neighbors[c])
    rounds = 0
    while erased:
        candidates = {ch for q in erased for ch in graph.qubit_neighbors[q]}
        resolved = set()
        for ch in candidates:
            left = [q for q in graph.check_neighbors[ch] if q in erased]
            if len(left) == 1:
                resolved.add(left[0])
        if not resolved:
            return False, rounds
        erased -= resolved
        rounds += 1
    return True, rounds


def validate_css(code: CssCode) -> bool:
    """True iff every X-check and Z-check overlap on an even number of qubits."""
    if code.h_x.n_qubits != code.h_z.n_qubits:
        return False
    z_cols = code.h_z.columns
    for row in code.h_x.rows:
        counts: dict[int, int] = {}
        for q in row:
            for zc in z_cols[q]:
                counts[zc] = counts.get(zc, 0) ^ 1
        if any(counts.values()):
            return False
    return True


# --- layers --------------------------------------------------------------


def build_layer_cover(h: ParityCheckMatrix, t: int = 1) -> LayerCover:
    """Greedy ``t``-covering: each check lands in ``t`` qubit-disjoint layers.

    A new layer is filled by scanning checks in order of remaining coverage
    need (largest first, lowest index on ties) and admitting every check whose
    support is disjoint from the layer so far.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    need = [t] * h.n_checks
    layers: list[tuple[int, ...]] = []
    remaining = t * h.n_checks
    while remaining:
        order = sorted((c for c in range(h.n_checks) if need[c]), key=lambda c: (-need[c], c))
        used: set[int] = set()
        layer = []
        for c in order:
            support = h.rows[c]
            if used.isdisjoint(support):
                layer.append(c)
                used.update(support)
                need[c] -= 1
                remaining -= 1
        layers.append(tuple(layer))
    return LayerCover(tuple(layers), t)


def parse_layer_cover(text: str) -> LayerCover:
    """Parse a cover file: ``t k`` on the first line, then ``k`` lines of check indices."""
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 2:
        raise LayerFileError("first line must be 't k'")
    try:
        t, k = (int(x) for x in lines[0])
        layers = tuple(tuple(int(x) for x in ln) for ln in lines[1:])
    except ValueError as exc:
        raise LayerFileError(f"non-integer entry: {exc}") from None
    if len(layers) != k:
        raise LayerFileError(f"header announces {k} layers, file has {len(layers)}")
    return LayerCover(layers, t)


def load_layer_cover(path: str | os.PathLike, h: ParityCheckMatrix | None = None) -> LayerCover:
    with open(path, encoding="utf-8") as fh:
        cover = parse_layer_cover(fh.read())
    if h is not None:
        cover.validate(h)
    return cover


def format_layer_cover(cover: LayerCover) -> str:
    lines = [f"{cover.t} {len(cover.layers)}"]
    lines += [" ".join(str(c) for c in layer) for layer in cover.layers]
    return "\n".join(lines) + "\n"


def layer_cover_for(h: ParityCheckMatrix, t: int = 1, path: str | os.PathLike | None = None) -> LayerCover:
    """Layer cover from ``path`` when given, otherwise the greedy construction."""
    if path is not None:
        return load_layer_cover(path, h)
    return build_layer_cover(h, t)
