"""Problem statement, factors, objective, imputation and model files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (Boolean, Categorical, Comparisons, DataTable, FeatureKind, Interval, Ordinal,
                   Permutation, Real, kind_label, parse_kind)
from .losses import Loss, column_stats, default_loss, loss_from_dict
from .regularizers import FixedEntry, Reg, Zero, reg_from_dict

FORMAT_VERSION = 1
MAGIC = "glrm-model"


class ModelFormatError(ValueError):
    pass


@dataclass
class ObsGroup:
    """Observed entries of every column that shares one loss."""

    loss: Loss
    rows: np.ndarray        # (N,)
    cols: np.ndarray        # (N,) feature index j
    a: np.ndarray           # N data values in the loss's format
    ecols: np.ndarray       # (N, d) embedding columns of Y
    w: np.ndarray           # (N,) 1 / sigma2_j

    def __len__(self):
        return len(self.rows)


def _gather(col, rows):
    if col.dtype == object:
        out = np.empty(len(rows), dtype=object)
        out[:] = list(col[rows])
        return out
    return col[rows]


def _concat(parts):
    if parts and parts[0].dtype == object:
        out = np.empty(sum(len(p) for p in parts), dtype=object)
        out[:] = [c for p in parts for c in p]
        return out
    return np.concatenate(parts)


class GlrmProblem:
    """A low rank model of ``table``.

    ``losses`` defaults to the automatic choice per column kind. ``row_reg``
    is one regularizer shared by every row or a list of m; ``col_reg``
    likewise for columns. With ``offset`` the last column of X is pinned to 1
    and the last row of Y is left unregularized. With ``scaling`` each
    column's loss is divided by its generalized variance (computed here from
    the observed entries unless ``sigma2`` is given).
    """

    def __init__(self, table: DataTable, k: int, losses: Sequence[Loss] | None = None,
                 row_reg: Reg | Sequence[Reg] = Zero(), col_reg: Reg | Sequence[Reg] = Zero(),
                 offset: bool = False, scaling: bool = False, sigma2=None):
        if int(k) < 1:
            raise ValueError("rank k must be at least 1")
        self.table = table
        self.k = int(k)
        m, n = table.shape
        self.losses = list(losses) if losses is not None else [default_loss(t) for t in table.kinds]
        if len(self.losses) != n:
            raise ValueError(f"need {n} losses, got {len(self.losses)}")
        for j, (loss, kind) in enumerate(zip(self.losses, table.kinds)):
            if not loss.accepts(kind):
                raise ValueError(f"column {j} ({table.names[j]}): loss {loss.name} does not accept "
                                 f"{kind_label(kind)} data")
        self.with_offset = bool(offset)
        self.with_scaling = bool(scaling)
        base_rows = [row_reg] * m if isinstance(row_reg, Reg) else list(row_reg)
        if len(base_rows) != m:
            raise ValueError(f"need {m} row regularizers")
        self.base_row_regs = base_rows
        wrap = {}
        self.row_regs = []
        for r in base_rows:
            if self.with_offset:
                r = wrap.setdefault(id(r), FixedEntry(r, 1.0, -1))
            self.row_regs.append(r)
        self.col_regs = [col_reg] * n if isinstance(col_reg, Reg) else list(col_reg)
        if len(self.col_regs) != n:
            raise ValueError(f"need {n} column regularizers")

        self.dims = np.array([l.embed_dim for l in self.losses], dtype=int)
        self.starts = np.concatenate([[0], np.cumsum(self.dims)[:-1]]).astype(int)
        self.D = int(self.dims.sum())
        self.k_eff = self.k + 1 if self.with_offset else self.k

        counts = table.mask.sum(axis=0)
        if sigma2 is not None:
            self.sigma2 = np.asarray(sigma2, dtype=float).copy()
            if self.sigma2.shape != (n,):
                raise ValueError("sigma2 must hold one value per column")
        elif self.with_scaling:
            self.sigma2 = np.empty(n)
            for j in range(n):
                if counts[j] < 2:
                    raise ValueError(f"column {j} has fewer than 2 observations; cannot scale")
                rows = np.flatnonzero(table.mask[:, j])
                _, self.sigma2[j] = column_stats(self.losses[j], _gather(table.columns[j], rows), counts[j])
        else:
            self.sigma2 = np.ones(n)
        self.groups = self._build_groups()
        self.row_counts = table.mask.sum(axis=1)
        self.col_counts = counts

    # -- bookkeeping

    def block(self, j: int) -> slice:
        return slice(self.starts[j], self.starts[j] + self.dims[j])

    def _build_groups(self) -> list[ObsGroup]:
        by_loss: dict[Loss, list[int]] = {}
        for j, loss in enumerate(self.losses):
            by_loss.setdefault(loss, []).append(j)
        groups = []
        for loss, cols in by_loss.items():
            rows, cs, vals, ecols, ws = [], [], [], [], []
            for j in cols:
                r = np.flatnonzero(self.table.mask[:, j])
                rows.append(r)
                cs.append(np.full(len(r), j))
                vals.append(_gather(self.table.columns[j], r))
                ecols.append(np.tile(np.arange(self.starts[j], self.starts[j] + self.dims[j]), (len(r), 1)))
                ws.append(np.full(len(r), 1.0 / self.sigma2[j]))
            g = ObsGroup(loss, np.concatenate(rows), np.concatenate(cs), _concat(vals),
                         np.concatenate(ecols), np.concatenate(ws))
            if len(g):
                groups.append(g)
        return groups

    def row_reg_groups(self):
        """(reg, row indices) for each distinct row regularizer."""
        return _group_by_identity(self.row_regs)

    def col_reg_groups(self):
        """(reg, d_j, column indices) for each distinct (regularizer, block width)."""
        out = {}
        for j, r in enumerate(self.col_regs):
            out.setdefault((id(r), int(self.dims[j])), (r, int(self.dims[j]), []))[2].append(j)
        return [(r, d, np.array(cols)) for r, d, cols in out.values()]

    def col_block_matrix(self, Y, cols, d):
        """Regularized parts Y_j[:k] of the given columns, flattened to (len(cols), k*d)."""
        idx = self.starts[cols][:, None] + np.arange(d)
        return Y[: self.k][:, idx].transpose(1, 0, 2).reshape(len(cols), self.k * d)

    def set_col_blocks(self, Y, cols, d, B):
        idx = self.starts[cols][:, None] + np.arange(d)
        Y[: self.k][:, idx] = B.reshape(len(cols), self.k, d).transpose(1, 0, 2)

    def with_regs(self, row_reg=None, col_reg=None) -> "GlrmProblem":
        """Same data, losses and scaling with new regularizers."""
        return GlrmProblem(self.table, self.k, self.losses,
                           self.base_row_regs if row_reg is None else row_reg,
                           self.col_regs if col_reg is None else col_reg,
                           self.with_offset, False, sigma2=self.sigma2)._keep_scaling(self.with_scaling)

    def with_table(self, table: DataTable, k: int | None = None) -> "GlrmProblem":
        """Same model on another table with the same columns, keeping sigma2.

        A shared row regularizer carries over to any number of rows; per-row
        regularizers need the same number of rows.
        """
        rows = self.base_row_regs
        if len({id(r) for r in rows}) == 1:
            rows = rows[0]
        elif table.m != self.table.m:
            raise ValueError("per-row regularizers need a table with the same number of rows")
        return GlrmProblem(table, self.k if k is None else k, self.losses, rows,
                           self.col_regs, self.with_offset, False,
                           sigma2=self.sigma2)._keep_scaling(self.with_scaling)

    def _keep_scaling(self, flag):
        self.with_scaling = flag
        return self

    def __repr__(self):
        return (f"GlrmProblem(m={self.table.m}, n={self.table.n}, k={self.k}, offset={self.with_offset}, "
                f"scaling={self.with_scaling})")


def _group_by_identity(regs):
    out = {}
    for i, r in enumerate(regs):
        out.setdefault(id(r), (r, []))[1].append(i)
    return [(r, np.array(idx)) for r, idx in out.values()]


@dataclass
class Factors:
    X: np.ndarray
    Y: np.ndarray
    sigma2: np.ndarray = field(default=None)

    def copy(self) -> "Factors":
        return Factors(self.X.copy(), self.Y.copy(), None if self.sigma2 is None else self.sigma2.copy())

    def check(self, problem: GlrmProblem):
        m = problem.table.m
        if self.X.shape != (m, problem.k_eff) or self.Y.shape != (problem.k_eff, problem.D):
            raise ValueError(f"factor shapes {self.X.shape}, {self.Y.shape} do not match the problem "
                             f"({m}x{problem.k_eff}, {problem.k_eff}x{problem.D})")


def entry_inputs(X, Y, g: ObsGroup) -> np.ndarray:
    """u = x_i Y_j for each entry of the group, shape (N,) or (N, d)."""
    Yg = Y[:, g.ecols]                          # (k, N, d)
    u = np.einsum("nk,knd->nd", X[g.rows], Yg)
    return u[:, 0] if g.loss.embed_dim == 1 else u


def loss_terms(problem: GlrmProblem, X, Y) -> list[np.ndarray]:
    """Scaled loss of every observed entry, one array per observation group."""
    return [g.w * g.loss.value(entry_inputs(X, Y, g), g.a, strict=False) for g in problem.groups]


def row_reg_values(problem, X) -> np.ndarray:
    out = np.zeros(len(X))
    for reg, rows in problem.row_reg_groups():
        out[rows] = reg.value(X[rows])
    return out


def col_reg_values(problem, Y) -> np.ndarray:
    out = np.zeros(problem.table.n)
    for reg, d, cols in problem.col_reg_groups():
        out[cols] = reg.value(problem.col_block_matrix(Y, cols, d))
    return out


def objective(problem: GlrmProblem, factors: Factors) -> float:
    """Scaled losses over observed entries plus all regularizers (inf if infeasible)."""
    factors.check(problem)
    X, Y = factors.X, factors.Y
    total = sum(float(t.sum()) for t in loss_terms(problem, X, Y))
    return total + float(row_reg_values(problem, X).sum()) + float(col_reg_values(problem, Y).sum())


# -- imputation -----------------------------------------------------------------


def to_domain(kind: FeatureKind, values):
    """Map imputed values into the column's domain (e.g. a real u on a Boolean column)."""
    if isinstance(kind, Boolean):
        return np.where(np.asarray(values, dtype=float) >= 0, 1.0, -1.0)
    if isinstance(kind, (Ordinal, Categorical)):
        return np.clip(np.round(np.asarray(values, dtype=float)), 1, kind.levels)
    if isinstance(kind, Comparisons):
        out = np.empty(len(values), dtype=object)
        out[:] = [tuple((int(order[i]), int(order[j])) for i in range(len(order))
                        for j in range(i + 1, len(order))) for order in values]
        return out
    return values


def embedded(problem: GlrmProblem, factors: Factors, j: int) -> np.ndarray:
    """x_i Y_j for every row, shape (m,) or (m, d_j)."""
    u = factors.X @ factors.Y[:, problem.block(j)]
    return u[:, 0] if problem.dims[j] == 1 else u


def impute_table(problem: GlrmProblem, factors: Factors) -> DataTable:
    """Fully observed table with every cell set to argmin_a L_j(x_i Y_j, a)."""
    cols = []
    for j, (loss, kind) in enumerate(zip(problem.losses, problem.table.kinds)):
        vals = loss.impute(embedded(problem, factors, j))
        cols.append(to_domain(kind, vals))
    t = problem.table
    return DataTable(cols, t.kinds, t.names, t.dictionaries, t.inference)


# -- degrees of freedom -----------------------------------------------------------


def degrees_of_freedom(problem: GlrmProblem, factors: Factors) -> int:
    """Nonzeros in the model minus the dimension of its symmetry group.

    The k x k orthogonal symmetry is subtracted only when both the row and
    column regularizers are invariant under it. The pinned offset column is
    not a free parameter and is not counted.
    """
    X = factors.X[:, : problem.k] if problem.with_offset else factors.X
    nnz = int(np.count_nonzero(X)) + int(np.count_nonzero(factors.Y))
    invariant = (all(r.orthogonally_invariant for r in problem.base_row_regs)
                 and all(r.orthogonally_invariant for r in problem.col_regs))
    if invariant:
        nnz -= problem.k ** 2
    return max(nnz, 0)


# -- model files ----------------------------------------------------------------------


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_model(path, problem: GlrmProblem, factors: Factors, meta: dict | None = None) -> None:
    """Write a versioned text model file (see the README for the field order)."""
    factors.check(problem)
    m, n = problem.table.shape
    shared = len({id(r) for r in problem.base_row_regs}) == 1
    row_regs = problem.base_row_regs[:1] if shared else problem.base_row_regs
    lines = [
        f"{MAGIC} v{FORMAT_VERSION}",
        f"dims {m} {n} {problem.k} {problem.k_eff} {problem.D}",
        f"flags offset={int(problem.with_offset)} scaling={int(problem.with_scaling)}",
        "names " + json.dumps(problem.table.names),
        "kinds " + json.dumps([kind_label(k) for k in problem.table.kinds]),
    ]
    lines += ["loss " + json.dumps(l.to_dict()) for l in problem.losses]
    lines.append(f"rowregs {len(row_regs)}")
    lines += ["rowreg " + json.dumps(r.to_dict()) for r in row_regs]
    lines += ["colreg " + json.dumps(r.to_dict()) for r in problem.col_regs]
    lines.append("sigma2 " + _floats(problem.sigma2))
    lines.append("X")
    lines += [_floats(row) for row in factors.X]
    lines.append("Y")
    lines += [_floats(row) for row in factors.Y]
    info = {"k": problem.k, "losses": [l.name for l in problem.losses],
            "row_reg": row_regs[0].label() if shared else "per-row",
            "col_regs": [r.label() for r in problem.col_regs]}
    info.update(meta or {})
    lines.append("meta " + json.dumps(info, sort_keys=True))
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class SavedModel:
    factors: Factors
    k: int
    offset: bool
    scaling: bool
    names: list
    kinds: list
    losses: list
    row_regs: list
    col_regs: list
    meta: dict

    def problem(self, table: DataTable) -> GlrmProblem:
        """Rebuild the problem on a table with the saved column layout and sigma2."""
        if table.n != len(self.losses):
            raise ModelFormatError(f"table has {table.n} columns, model has {len(self.losses)}")
        rr = self.row_regs[0] if len(self.row_regs) == 1 else self.row_regs
        p = GlrmProblem(table, self.k, self.losses, rr, self.col_regs, self.offset, False,
                        sigma2=self.factors.sigma2)
        p.with_scaling = self.scaling
        return p


def load_model(path) -> SavedModel:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ModelFormatError(f"cannot read model file: {e}") from e
    lines = text.split("\n")
    pos = 0

    def take(prefix=None):
        nonlocal pos
        if pos >= len(lines) or (lines[pos] == "" and pos == len(lines) - 1):
            raise ModelFormatError("model file is truncated")
        line = lines[pos]
        pos += 1
        if prefix is not None:
            if not (line == prefix or line.startswith(prefix + " ")):
                raise ModelFormatError(f"line {pos}: expected '{prefix}'")
            return line[len(prefix) + 1:]
        return line

    try:
        head = take()
        if not head.startswith(MAGIC + " "):
            raise ModelFormatError("not a glrm model file")
        if head != f"{MAGIC} v{FORMAT_VERSION}":
            raise ModelFormatError(f"unsupported model version {head.split()[-1]!r}")
        m, n, k, k_eff, D = (int(t) for t in take("dims").split())
        flags = dict(t.split("=") for t in take("flags").split())
        offset, scaling = flags["offset"] == "1", flags["scaling"] == "1"
        names = json.loads(take("names"))
        kinds = [parse_kind(s) for s in json.loads(take("kinds"))]
        losses = [loss_from_dict(json.loads(take("loss"))) for _ in range(n)]
        n_rr = int(take("rowregs"))
        row_regs = [reg_from_dict(json.loads(take("rowreg"))) for _ in range(n_rr)]
        col_regs = [reg_from_dict(json.loads(take("colreg"))) for _ in range(n)]
        sigma2 = np.array([float(t) for t in take("sigma2").split()])
        take("X")
        X = np.array([[float(t) for t in take().split()] for _ in range(m)]).reshape(m, -1)
        take("Y")
        Y = np.array([[float(t) for t in take().split()] for _ in range(k_eff)]).reshape(k_eff, -1)
        meta = json.loads(take("meta"))
        if take() != "end":
            raise ModelFormatError("missing end marker")
    except ModelFormatError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise ModelFormatError(f"malformed model file near line {pos}: {e}") from e
    if X.shape != (m, k_eff) or Y.shape != (k_eff, D) or len(sigma2) != n:
        raise ModelFormatError("factor shapes do not match the declared dimensions")
    if k_eff != k + int(offset) or sum(l.embed_dim for l in losses) != D or len(kinds) != n:
        raise ModelFormatError("inconsistent dimensions in model file")
    if n_rr not in (1, m):
        raise ModelFormatError("row regularizer count must be 1 or m")
    return SavedModel(Factors(X, Y, sigma2), k, offset, scaling, names, kinds, losses, row_regs,
                      col_regs, meta)
