"""CSV ingestion and the real-data preprocessing pipeline.

The pipeline mirrors the survey-data protocol: filter identifier
outliers beyond k standard deviations, min-max scale the identifier to
[0, 1], bin into equal-width intervals whose midpoints become the domain
identifiers, and split the target bin into pilot / fine-tune / test
parts by a seeded shuffle.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .design import DomainSample
from .errors import DegenerateScaleError, ParseError, SchemaError

__all__ = [
    "RawTable",
    "BinnedPanel",
    "load_csv",
    "evaluate_column_expr",
    "sigma_filter",
    "minmax_scale",
    "bin_domains",
    "split_target",
]


@dataclass(frozen=True)
class RawTable:
    """Rectangular numeric table with columns ordered (u, x..., y)."""

    headers: tuple[str, ...]
    rows: np.ndarray

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def u(self) -> np.ndarray:
        return self.rows[:, 0]

    @property
    def x(self) -> np.ndarray:
        return self.rows[:, 1:-1]

    @property
    def y(self) -> np.ndarray:
        return self.rows[:, -1]

    def replace_u(self, values: np.ndarray) -> "RawTable":
        rows = self.rows.copy()
        rows[:, 0] = values
        return RawTable(headers=self.headers, rows=rows)

    def keep(self, mask: np.ndarray) -> "RawTable":
        return RawTable(headers=self.headers, rows=self.rows[mask])


@dataclass(frozen=True)
class BinnedPanel:
    """Domains produced by binning scaled identifiers to bin midpoints."""

    domains: tuple[DomainSample, ...]
    bin_edges: np.ndarray
    u_raw: np.ndarray


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            headers = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        records = [row for row in reader if row]
    return headers, records


def load_csv(
    path,
    u_column: str | None,
    x_columns: Sequence[str],
    y_column: str,
    add_intercept: bool = True,
    *,
    u_expr: str | None = None,
) -> RawTable:
    """Load a comma-separated numeric table, reordered to (u, x..., y).

    Exactly one of ``u_column`` / ``u_expr`` selects the domain
    identifier; ``u_expr`` is an arithmetic expression over column names
    (e.g. ``"age - education - 6"``).  ``add_intercept`` prepends a
    column of ones to the covariate block.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    headers, records = _read_csv(path)
    index = {h: i for i, h in enumerate(headers)}

    if (u_column is None) == (u_expr is None):
        raise ValueError("exactly one of u_column / u_expr must be given")
    wanted = list(x_columns) + [y_column] + ([u_column] if u_column else [])
    for name in wanted:
        if name not in index:
            raise SchemaError(f"missing column {name!r} in {path.name}")

    width = len(headers)
    data = np.empty((len(records), width))
    for i, row in enumerate(records):
        if len(row) != width:
            raise ParseError(
                f"{path.name}: expected {width} cells, found {len(row)}", row=i + 2
            )
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path.name}: non-numeric cell {cell!r}",
                    row=i + 2,
                    column=headers[j],
                ) from None
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path.name}: non-finite value in table")

    if u_expr is not None:
        u = evaluate_column_expr(u_expr, headers, data)
    else:
        u = data[:, index[u_column]]
    x = data[:, [index[c] for c in x_columns]]
    if add_intercept:
        x = np.column_stack([np.ones(len(records)), x])
    y = data[:, index[y_column]]

    out_headers = (
        ("u",)
        + (("intercept",) if add_intercept else ())
        + tuple(x_columns)
        + (y_column,)
    )
    return RawTable(headers=out_headers, rows=np.column_stack([u, x, y]))


_TOKEN = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*|\d+\.?\d*(?:[eE][+-]?\d+)?|[-+*/()])")


def evaluate_column_expr(expr: str, headers: Sequence[str], data: np.ndarray) -> np.ndarray:
    """Evaluate an arithmetic expression over column names, row-wise.

    Supports + - * /, parentheses, numeric literals; column names resolve
    to table columns.  A tiny recursive-descent parser keeps this free of
    eval().
    """
    index = {h: i for i, h in enumerate(headers)}
    tokens = []
    pos = 0
    while pos < len(expr):
        m = _TOKEN.match(expr, pos)
        if m is None:
            raise ValueError(f"cannot parse column expression at: {expr[pos:]!r}")
        tokens.append(m.group(1))
        pos = m.end()
    tokens.append(None)  # sentinel
    it = iter(range(len(tokens)))
    state = {"i": 0}

    def peek():
        return tokens[state["i"]]

    def advance():
        tok = tokens[state["i"]]
        state["i"] += 1
        return tok

    def parse_atom():
        tok = advance()
        if tok == "(":
            val = parse_sum()
            if advance() != ")":
                raise ValueError(f"unbalanced parentheses in {expr!r}")
            return val
        if tok == "-":
            return -parse_atom()
        if tok == "+":
            return parse_atom()
        if tok is None:
            raise ValueError(f"unexpected end of expression in {expr!r}")
        if tok[0].isdigit() or tok[0] == ".":
            return float(tok)
        if tok in index:
            return data[:, index[tok]]
        raise SchemaError(f"unknown column {tok!r} in expression {expr!r}")

    def parse_term():
        val = parse_atom()
        while peek() in ("*", "/"):
            op = advance()
            rhs = parse_atom()
            val = val * rhs if op == "*" else val / rhs
        return val

    def parse_sum():
        val = parse_term()
        while peek() in ("+", "-"):
            op = advance()
            rhs = parse_term()
            val = val + rhs if op == "+" else val - rhs
        return val

    result = parse_sum()
    if peek() is not None:
        raise ValueError(f"trailing tokens in expression {expr!r}")
    return np.broadcast_to(np.asarray(result, dtype=float), (data.shape[0],)).copy()


def sigma_filter(values: Sequence[float], k: float = 3.0) -> np.ndarray:
    """Mask of entries within k sample standard deviations of the mean.

    Zero-variance input keeps everything.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("sigma filter needs at least 2 values")
    sd = np.std(v, ddof=1)
    if sd == 0:
        return np.ones(v.size, dtype=bool)
    return np.abs(v - np.mean(v)) <= k * sd


def minmax_scale(values: Sequence[float]) -> np.ndarray:
    """Rescale to [0, 1] by (v - min) / (max - min)."""
    v = np.asarray(values, dtype=float)
    lo, hi = np.min(v), np.max(v)
    if hi == lo:
        raise DegenerateScaleError("constant vector cannot be min-max scaled")
    return (v - lo) / (hi - lo)


def bin_domains(table: RawTable, n_bins: int = 10) -> BinnedPanel:
    """Group observations into equal-width identifier bins.

    The first bin is closed ``[0, 1/n_bins]``; the rest are left-open
    ``(a, b]``, matching midpoints ``(j - 0.5) / n_bins``.  Occupied bins
    become DomainSample objects at their midpoints.
    """
    if n_bins < 2:
        raise ValueError(f"need at least 2 bins, got {n_bins}")
    if table.n == 0:
        raise ValueError("cannot bin an empty table")
    u = table.u
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("identifiers must lie in [0, 1]; scale them first")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # (a, b] bins with the first closed at 0: ceil(u * n_bins) - 1, u=0 -> bin 0
    idx = np.ceil(u * n_bins).astype(int) - 1
    idx = np.clip(idx, 0, n_bins - 1)
    domains = []
    for b in range(n_bins):
        mask = idx == b
        if not np.any(mask):
            continue
        mid = (b + 0.5) / n_bins
        domains.append(DomainSample(u=mid, x=table.x[mask], y=table.y[mask]))
    return BinnedPanel(domains=tuple(domains), bin_edges=edges, u_raw=u.copy())


def split_target(
    target: DomainSample, fractions: Sequence[float], rng: np.random.Generator
) -> list[DomainSample]:
    """Partition a domain by a seeded shuffle into the given proportions.

    Sizes follow the fractions with any remainder distributed one row at
    a time to the earliest parts; identical seeds give identical splits.
    """
    f = np.asarray(fractions, dtype=float)
    if np.any(f <= 0):
        raise ValueError("fractions must be positive")
    if abs(f.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {f.sum()}")
    n = target.n
    if n < f.size:
        raise ValueError(f"cannot split {n} rows into {f.size} nonempty parts")
    base = np.floor(f * n).astype(int)
    base = np.maximum(base, 1)
    while base.sum() > n:
        base[np.argmax(base)] -= 1
    rem = n - base.sum()
    for i in range(rem):
        base[i % f.size] += 1
    perm = rng.permutation(n)
    parts = []
    start = 0
    for size in base:
        take = np.sort(perm[start : start + size])
        parts.append(DomainSample(u=target.u, x=target.x[take], y=target.y[take]))
        start += size
    return parts
