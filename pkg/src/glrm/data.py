"""Heterogeneous, partially observed data tables and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ORDINAL_MAX_LEVELS = 20
CATEGORICAL_MAX_TOKENS = 50


class DataError(ValueError):
    pass


# -- feature kinds ---------------------------------------------------------


@dataclass(frozen=True)
class FeatureKind:
    """Base class for the type of values a column may hold."""

    name = "kind"

    @property
    def levels(self) -> int | None:
        return None

    def check(self, values, present) -> bool:
        return True


@dataclass(frozen=True)
class Real(FeatureKind):
    name = "real"

    def check(self, values, present):
        return bool(np.all(np.isfinite(values[present])))


@dataclass(frozen=True)
class Boolean(FeatureKind):
    name = "boolean"

    @property
    def levels(self):
        return 2

    def check(self, values, present):
        return bool(np.all(np.isin(values[present], (-1.0, 1.0))))


@dataclass(frozen=True)
class _Leveled(FeatureKind):
    d: int = 2

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise DataError(f"{type(self).__name__} needs at least 2 levels, got {self.d}")

    @property
    def levels(self):
        return self.d

    def check(self, values, present):
        v = values[present]
        return bool(np.all((v == np.round(v)) & (v >= 1) & (v <= self.d)))


@dataclass(frozen=True)
class Ordinal(_Leveled):
    name = "ordinal"


@dataclass(frozen=True)
class Categorical(_Leveled):
    name = "categorical"


@dataclass(frozen=True)
class Interval(FeatureKind):
    name = "interval"

    def check(self, values, present):
        v = values[present]
        return bool(np.all(np.isfinite(v)) and np.all(v[:, 0] <= v[:, 1]))


@dataclass(frozen=True)
class Permutation(FeatureKind):
    """Each cell is an ordering of the choices 1..d (best first)."""

    name = "permutation"
    d: int = 2

    @property
    def levels(self):
        return self.d

    def check(self, values, present):
        v = values[present]
        target = np.arange(1, self.d + 1)
        return bool(np.all(np.sort(v, axis=1) == target))


@dataclass(frozen=True)
class Comparisons(FeatureKind):
    """Each cell is a list of pairs (p, q): choice p was ranked above q."""

    name = "comparisons"
    d: int = 2

    @property
    def levels(self):
        return self.d

    def check(self, values, present):
        for cell in values[present]:
            for p, q in cell:
                if not (1 <= p <= self.d and 1 <= q <= self.d) or p == q:
                    return False
        return True


def kind_from_name(name: str, levels: int | None = None) -> FeatureKind:
    name = name.lower()
    if name == "real":
        return Real()
    if name == "boolean":
        return Boolean()
    if name == "interval":
        return Interval()
    table = {"ordinal": Ordinal, "categorical": Categorical,
             "permutation": Permutation, "comparisons": Comparisons}
    if name in table:
        if levels is None:
            raise DataError(f"kind {name!r} needs a level count")
        return table[name](int(levels))
    raise DataError(f"unknown feature kind {name!r}")


def parse_kind(spec: str) -> FeatureKind:
    """Parse 'real', 'boolean', 'ordinal:5', 'categorical:3', 'interval'."""
    name, _, lv = spec.partition(":")
    return kind_from_name(name, int(lv) if lv else None)


def kind_label(kind: FeatureKind) -> str:
    return kind.name if kind.levels is None or isinstance(kind, Boolean) else f"{kind.name}:{kind.levels}"


# -- table -----------------------------------------------------------------


def _empty_column(kind: FeatureKind, m: int):
    if isinstance(kind, Interval):
        return np.full((m, 2), np.nan)
    if isinstance(kind, Permutation):
        return np.full((m, kind.d), np.nan)
    if isinstance(kind, Comparisons):
        return np.full(m, None, dtype=object)
    return np.full(m, np.nan)


def _present(kind: FeatureKind, col) -> np.ndarray:
    if isinstance(kind, Comparisons):
        return np.array([c is not None for c in col], dtype=bool)
    if col.ndim == 2:
        return ~np.any(np.isnan(col), axis=1)
    return ~np.isnan(col)


class DataTable:
    """An m x n table whose column j holds values of kind ``kinds[j]``.

    Cells are stored column-wise: scalar kinds as float arrays with NaN for
    missing cells, intervals as (m, 2) arrays, permutations as (m, d) arrays
    and comparison lists as object arrays with ``None`` for missing. The
    observation set is derived from which cells are present. Tables are not
    meant to be mutated after construction; column arrays are made read-only.
    """

    def __init__(self, columns: Sequence, kinds: Sequence[FeatureKind],
                 names: Sequence[str] | None = None,
                 dictionaries: dict | None = None,
                 inference: dict | None = None):
        if len(columns) != len(kinds):
            raise DataError("need one kind per column")
        if len(columns) == 0:
            raise DataError("a table needs at least one column")
        cols = []
        for j, (col, kind) in enumerate(zip(columns, kinds)):
            if isinstance(kind, Comparisons):
                arr = np.empty(len(col), dtype=object)
                arr[:] = [None if c is None else tuple(tuple(int(t) for t in p) for p in c) for c in col]
            else:
                arr = np.array(col, dtype=float)
                want = 2 if isinstance(kind, (Interval, Permutation)) else 1
                if arr.ndim != want:
                    raise DataError(f"column {j}: expected {want}-d array for kind {kind.name}")
            cols.append(arr)
        m = len(cols[0])
        if m < 1 or any(len(c) != m for c in cols):
            raise DataError("all columns must have the same, positive length")
        masks = []
        for j, (col, kind) in enumerate(zip(cols, kinds)):
            present = _present(kind, col)
            if not kind.check(col, present):
                raise DataError(f"column {j}: present values are not valid {kind.name} values")
            col.setflags(write=False)
            masks.append(present)
        self.columns = cols
        self.kinds = list(kinds)
        self.mask = np.column_stack(masks)
        self.mask.setflags(write=False)
        self.names = list(names) if names is not None else [f"c{j}" for j in range(len(cols))]
        self.dictionaries = dict(dictionaries or {})
        self.inference = dict(inference or {})

    @property
    def shape(self):
        return self.mask.shape

    @property
    def m(self):
        return self.mask.shape[0]

    @property
    def n(self):
        return self.mask.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def observed(self) -> np.ndarray:
        """Observed (i, j) pairs, row-major order, as an (N, 2) int array."""
        return np.argwhere(self.mask)

    def cell(self, i: int, j: int):
        if not self.mask[i, j]:
            return None
        v = self.columns[j][i]
        if isinstance(self.kinds[j], (Interval, Permutation)):
            return tuple(float(t) for t in v) if isinstance(self.kinds[j], Interval) else tuple(int(t) for t in v)
        if isinstance(self.kinds[j], Comparisons):
            return v
        return float(v)

    def is_numeric(self) -> bool:
        return all(k.levels is None or isinstance(k, (Boolean, Ordinal, Categorical))
                   for k in self.kinds) and not any(isinstance(k, (Interval, Permutation, Comparisons))
                                                    for k in self.kinds)

    def to_array(self) -> np.ndarray:
        """m x n float matrix of a scalar-kinded table, NaN where missing."""
        if not self.is_numeric():
            raise DataError("to_array needs every column to hold scalar values")
        return np.column_stack(self.columns)

    @classmethod
    def from_array(cls, A, kinds: Sequence[FeatureKind] | FeatureKind | None = None, names=None):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise DataError("expected a 2-d array")
        if kinds is None:
            kinds = Real()
        if isinstance(kinds, FeatureKind):
            kinds = [kinds] * A.shape[1]
        return cls([A[:, j] for j in range(A.shape[1])], kinds, names=names)

    def with_mask(self, mask: np.ndarray) -> "DataTable":
        """Copy keeping only cells where ``mask`` (and the current mask) hold."""
        mask = np.asarray(mask, dtype=bool) & self.mask
        cols = []
        for j, (col, kind) in enumerate(zip(self.columns, self.kinds)):
            new = col.copy()
            drop = ~mask[:, j]
            if isinstance(kind, Comparisons):
                new[drop] = None
            else:
                new[drop] = np.nan
            cols.append(new)
        return DataTable(cols, self.kinds, self.names, self.dictionaries, self.inference)

    def take_rows(self, rows) -> "DataTable":
        rows = np.atleast_1d(np.asarray(rows, dtype=int))
        return DataTable([c[rows] for c in self.columns], self.kinds, self.names,
                         self.dictionaries, self.inference)

    def equals(self, other: "DataTable") -> bool:
        if self.shape != other.shape or self.kinds != other.kinds:
            return False
        if not np.array_equal(self.mask, other.mask):
            return False
        for j in range(self.n):
            a, b = self.columns[j], other.columns[j]
            pres = self.mask[:, j]
            if isinstance(self.kinds[j], Comparisons):
                if list(a[pres]) != list(b[pres]):
                    return False
            elif not np.array_equal(a[pres], b[pres]):
                return False
        return True

    def __repr__(self):
        kinds = ", ".join(kind_label(k) for k in self.kinds[:6])
        more = ", ..." if self.n > 6 else ""
        return f"DataTable(m={self.m}, n={self.n}, observed={self.n_observed}, kinds=[{kinds}{more}])"


# -- CSV -------------------------------------------------------------------


def _is_int(tok: str) -> bool:
    try:
        int(tok)
        return True
    except ValueError:
        return False


def _is_float(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _parse_cell(tok: str, kind: FeatureKind, tokmap: dict | None):
    if tokmap is not None:
        if tok not in tokmap:
            raise ValueError(f"unknown token {tok!r}")
        return tokmap[tok]
    if isinstance(kind, Interval):
        lo, sep, hi = tok.partition(":")
        if not sep:
            raise ValueError(f"interval cell {tok!r} is not 'lo:hi'")
        lo, hi = float(lo), float(hi)
        if lo > hi:
            raise ValueError(f"interval {tok!r} has lo > hi")
        return (lo, hi)
    if isinstance(kind, Permutation):
        return tuple(int(t) for t in tok.split(";"))
    if isinstance(kind, Comparisons):
        if tok == "":
            return ()
        return tuple(tuple(int(t) for t in p.split(">")) for p in tok.split(";"))
    if isinstance(kind, Boolean):
        v = float(tok)
        if v not in (-1.0, 1.0):
            raise ValueError(f"boolean cell {tok!r} is not -1 or 1")
        return v
    if isinstance(kind, (Ordinal, Categorical)):
        v = int(tok)
        if not 1 <= v <= kind.levels:
            raise ValueError(f"level {v} outside 1..{kind.levels}")
        return float(v)
    return float(tok)


def _infer_kind(tokens: list[str]):
    """Return (kind, token->value dict or None, reason)."""
    distinct = sorted(set(tokens))
    if not distinct:
        return Real(), None, "no observed cells"
    numeric = all(_is_float(t) for t in distinct)
    if numeric:
        if not all(_is_int(t) for t in distinct):
            return Real(), None, "numeric with fractional values"
        vals = sorted({int(t) for t in distinct})
        if set(vals) <= {-1, 1}:
            return Boolean(), None, "values within {-1, 1}"
        if len(distinct) == 2:
            lo, hi = distinct
            return Boolean(), {lo: -1.0, hi: 1.0}, "two distinct tokens"
        if vals[0] >= 1 and vals[-1] <= ORDINAL_MAX_LEVELS and vals[-1] >= 2:
            return Ordinal(vals[-1]), None, f"integers in 1..{vals[-1]}"
        return Real(), None, "integers outside the ordinal range"
    if len(distinct) == 2:
        lo, hi = distinct
        return Boolean(), {lo: -1.0, hi: 1.0}, "two distinct tokens"
    if len(distinct) <= CATEGORICAL_MAX_TOKENS:
        return (Categorical(len(distinct)), {t: float(i + 1) for i, t in enumerate(distinct)},
                f"{len(distinct)} distinct tokens")
    raise DataError(f"cannot infer a kind for a column with {len(distinct)} distinct non-numeric tokens")


def read_csv(path, na_token: str = "NA", kind_hints: dict | Sequence | None = None) -> DataTable:
    """Read a CSV with a header row into a :class:`DataTable`.

    Cells equal to ``na_token`` (after trimming) are missing. ``kind_hints``
    maps column index or name to a :class:`FeatureKind` (or a list with one
    entry per column, ``None`` meaning infer). Without a hint the kind is
    inferred; the inferred kinds and token dictionaries are recorded on
    ``table.inference`` and ``table.dictionaries``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file, a header row is required")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    n = len(header)
    for r, row in enumerate(body):
        if len(row) != n:
            raise DataError(f"{path}: row {r + 1} has {len(row)} fields, expected {n}")
    if not body:
        raise DataError(f"{path}: no data rows")
    m = len(body)

    hints: dict[int, FeatureKind] = {}
    if kind_hints is not None:
        items = kind_hints.items() if isinstance(kind_hints, dict) else enumerate(kind_hints)
        for key, kind in items:
            if kind is None:
                continue
            j = header.index(key) if isinstance(key, str) else int(key)
            hints[j] = parse_kind(kind) if isinstance(kind, str) else kind

    columns, kinds, dictionaries, inference = [], [], {}, {}
    for j in range(n):
        toks = [row[j].strip() for row in body]
        present = [t != na_token for t in toks]
        if j in hints:
            kind, tokmap, reason = hints[j], None, "hint"
            if isinstance(kind, (Boolean, Categorical)) and not all(
                    _is_float(t) for t, p in zip(toks, present) if p):
                obs = sorted({t for t, p in zip(toks, present) if p})
                if len(obs) > kind.levels:
                    raise DataError(f"{path}: column {header[j]!r} has {len(obs)} tokens, "
                                    f"more than {kind.levels} levels")
                if isinstance(kind, Boolean):
                    tokmap = {obs[0]: -1.0, obs[-1]: 1.0}
                else:
                    tokmap = {t: float(i + 1) for i, t in enumerate(obs)}
        else:
            kind, tokmap, reason = _infer_kind([t for t, p in zip(toks, present) if p])
        col = _empty_column(kind, m)
        for i, (tok, p) in enumerate(zip(toks, present)):
            if not p:
                continue
            try:
                col[i] = _parse_cell(tok, kind, tokmap)
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}: row {i + 1}, column {header[j]!r}: cannot parse "
                                f"{tok!r} as {kind.name} ({exc})") from None
        columns.append(col)
        kinds.append(kind)
        if tokmap is not None:
            dictionaries[j] = {v: t for t, v in tokmap.items()}
        inference[j] = (kind_label(kind), reason)
    try:
        return DataTable(columns, kinds, header, dictionaries, inference)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def format_cell(table: DataTable, i: int, j: int, na_token: str = "NA") -> str:
    if not table.mask[i, j]:
        return na_token
    kind = table.kinds[j]
    v = table.columns[j][i]
    if j in table.dictionaries:
        return table.dictionaries[j][float(v)]
    if isinstance(kind, Interval):
        return f"{float(v[0])!r}:{float(v[1])!r}"
    if isinstance(kind, Permutation):
        return ";".join(str(int(t)) for t in v)
    if isinstance(kind, Comparisons):
        return ";".join(f"{p}>{q}" for p, q in v)
    if isinstance(kind, (Boolean, Ordinal, Categorical)):
        return str(int(v))
    return repr(float(v))


def write_csv(table: DataTable, path, na_token: str = "NA") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(table.names)
        for i in range(table.m):
            w.writerow([format_cell(table, i, j, na_token) for j in range(table.n)])


# -- resampling ------------------------------------------------------------


def split_holdout(table: DataTable, fraction: float, seed: int):
    """Hold out ``round(fraction * |Omega|)`` observed cells at random.

    Returns ``(train, heldout)`` where ``train`` is the table with the held
    out cells removed and ``heldout`` is a sorted (h, 2) array of (i, j).
    """
    if not 0 < fraction < 1:
        raise DataError("fraction must lie in (0, 1)")
    obs = table.observed()
    total = len(obs)
    if total < 2:
        raise DataError("need at least two observed cells to split")
    size = int(round(fraction * total))
    if size == 0 or size == total:
        raise DataError(f"holdout fraction {fraction} gives a degenerate split of {total} cells")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(total, size=size, replace=False))
    heldout = obs[pick]
    mask = np.ones(table.shape, dtype=bool)
    mask[heldout[:, 0], heldout[:, 1]] = False
    return table.with_mask(mask), heldout
