"""Model selection: error metrics, regularization paths and cross-validation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Boolean, Categorical, DataTable, Ordinal, Real, split_holdout
from .fit import FitConfig, fit
from .initialization import initialize
from .model import Factors, GlrmProblem, embedded, loss_terms, to_domain


def _cells_by_column(cells, n):
    cells = np.asarray(cells, dtype=int).reshape(-1, 2)
    return {j: cells[cells[:, 1] == j, 0] for j in range(n) if np.any(cells[:, 1] == j)}


def _values(table: DataTable, rows, j):
    col = table.columns[j]
    if col.dtype == object:
        out = np.empty(len(rows), dtype=object)
        out[:] = list(col[rows])
        return out
    return col[rows]


def heldout_loss(problem: GlrmProblem, factors: Factors, truth: DataTable, cells) -> float:
    """Mean scaled loss over ``cells`` against the values in ``truth``."""
    total, count = 0.0, 0
    for j, rows in _cells_by_column(cells, problem.table.n).items():
        u = embedded(problem, factors, j)[rows]
        a = _values(truth, rows, j)
        total += float(problem.losses[j].value(u, a, strict=False).sum()) / problem.sigma2[j]
        count += len(rows)
    return float(total / count) if count else float("nan")


def train_loss(problem: GlrmProblem, factors: Factors) -> float:
    """Mean scaled loss over the observed entries."""
    terms = loss_terms(problem, factors.X, factors.Y)
    n = sum(len(t) for t in terms)
    return sum(float(t.sum()) for t in terms) / n if n else float("nan")


def precision_at(problem: GlrmProblem, factors: Factors, truth: DataTable, cells=None, T: int = 10) -> float:
    """Fraction of the T highest-scored cells whose true value is +1.

    Candidates are the given Boolean cells, by default every Boolean cell
    missing from the problem's table. Ties in score go to the earlier cell
    in row-major order.
    """
    bool_cols = [j for j, k in enumerate(problem.table.kinds) if isinstance(k, Boolean)]
    if not bool_cols:
        raise ValueError("precision at T needs at least one Boolean column")
    if cells is None:
        cells = np.argwhere(~problem.table.mask)
    cells = np.asarray(cells, dtype=int).reshape(-1, 2)
    cells = cells[np.isin(cells[:, 1], bool_cols)]
    if len(cells) == 0:
        raise ValueError("no Boolean cells to rank")
    U = factors.X @ factors.Y
    score = U[cells[:, 0], problem.starts[cells[:, 1]]]
    order = np.argsort(-score, kind="stable")[:T]
    top = cells[order]
    truth_vals = np.array([truth.columns[j][i] for i, j in top])
    return float(np.mean(truth_vals == 1))


def metrics(problem: GlrmProblem, factors: Factors, truth: DataTable, cells=None, T: int = 10) -> dict:
    """Error metrics of the model against ``truth`` on ``cells`` (default: all).

    normalized_loss is the mean scaled loss; rms compares the raw inner
    products x_i y_j with the numeric values of scalar cells; mse uses only
    real columns; misclassification is the fraction of Boolean, ordinal and
    categorical cells whose imputed value differs from the truth, also
    reported per kind; precision_at is included when there are Boolean cells.
    """
    if cells is None:
        cells = truth.observed()
    cells = np.asarray(cells, dtype=int).reshape(-1, 2)
    out = {"normalized_loss": heldout_loss(problem, factors, truth, cells)}
    sq, nsq, sq_real, n_real = 0.0, 0, 0.0, 0
    wrong = {"boolean": [0, 0], "ordinal": [0, 0], "categorical": [0, 0]}
    for j, rows in _cells_by_column(cells, problem.table.n).items():
        kind, loss = problem.table.kinds[j], problem.losses[j]
        a = _values(truth, rows, j)
        u = embedded(problem, factors, j)[rows]
        if problem.dims[j] == 1 and isinstance(kind, (Real, Boolean, Ordinal)):
            d2 = (np.asarray(a, float) - u) ** 2
            sq += d2.sum()
            nsq += len(rows)
            if isinstance(kind, Real):
                sq_real += d2.sum()
                n_real += len(rows)
        if isinstance(kind, (Boolean, Ordinal, Categorical)):
            guess = to_domain(kind, loss.impute(u))
            tag = kind.name
            wrong[tag][0] += int(np.sum(guess != a))
            wrong[tag][1] += len(rows)
    out["rms"] = float(np.sqrt(sq / nsq)) if nsq else float("nan")
    out["mse"] = float(sq_real / n_real) if n_real else float("nan")
    tot_w = sum(w for w, _ in wrong.values())
    tot_n = sum(c for _, c in wrong.values())
    out["misclassification"] = tot_w / tot_n if tot_n else float("nan")
    for tag, (w, c) in wrong.items():
        if c:
            out[f"misclassification_{tag}"] = w / c
    if any(isinstance(k, Boolean) for k in problem.table.kinds):
        try:
            out["precision_at"] = precision_at(problem, factors, truth, cells, T)
        except ValueError:
            pass
    return out


# -- regularization path ----------------------------------------------------------------


@dataclass
class PathPoint:
    gamma: float
    factors: Factors
    objective: float
    train_error: float
    test_error: float = float("nan")
    iterations: int = 0
    seconds: float = 0.0


def regularize(problem: GlrmProblem, gamma: float) -> GlrmProblem:
    """The same problem with every weighted regularizer set to ``gamma``."""
    rows = [r.with_gamma(gamma) for r in problem.base_row_regs]
    cache = {}
    rows = [cache.setdefault(r, r) for r in rows]
    cols = [r.with_gamma(gamma) for r in problem.col_regs]
    cols = [cache.setdefault(r, r) for r in cols]
    if len(set(map(id, rows))) == 1:
        rows = rows[0]
    return problem.with_regs(rows, cols)


def reg_path(problem: GlrmProblem, gammas, init: Factors | None = None, config: FitConfig | None = None,
             truth: DataTable | None = None, test_cells=None, fitter=fit) -> list[PathPoint]:
    """Fit along a strictly decreasing list of gammas, warm-starting each
    fit from the previous solution."""
    gammas = [float(g) for g in gammas]
    if any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gammas must be strictly decreasing")
    config = config or FitConfig()
    current = init if init is not None else initialize(problem, "svd", config.seed)
    out = []
    for g in gammas:
        p = regularize(problem, g)
        t0 = time.perf_counter()
        current, rep = fitter(p, current, config)
        pt = PathPoint(g, current, rep.final_objective, train_loss(p, current),
                       iterations=rep.iterations, seconds=time.perf_counter() - t0)
        if truth is not None and test_cells is not None and len(test_cells):
            pt.test_error = heldout_loss(p, current, truth, test_cells)
        out.append(pt)
    return out


def path_report(points: list[PathPoint], sep: str = "\t") -> str:
    """Delimited text, one row per gamma; the last column is the decrease in
    training error from the previous (larger) gamma, for elbow inspection."""
    lines = [sep.join(["gamma", "objective", "train_error", "test_error", "train_decrease", "iterations"])]
    prev = None
    for p in points:
        dec = "" if prev is None else repr(prev - p.train_error)
        lines.append(sep.join([repr(p.gamma), repr(p.objective), repr(p.train_error), repr(p.test_error),
                               dec, str(p.iterations)]))
        prev = p.train_error
    return "\n".join(lines) + "\n"


# -- cross-validation -----------------------------------------------------------------------


@dataclass
class CVResult:
    rows: list = field(default_factory=list)   # (k, gamma, fold, train_error, test_error)

    def summary(self):
        """(k, gamma, mean train error, mean test error) per grid cell."""
        cells = {}
        for k, g, _, tr, te in self.rows:
            cells.setdefault((k, g), []).append((tr, te))
        return [(k, g, float(np.mean([t for t, _ in v])), float(np.mean([t for _, t in v])))
                for (k, g), v in cells.items()]

    def best(self):
        """(k, gamma) minimizing the mean test error."""
        k, g, _, _ = min(self.summary(), key=lambda r: (r[3], r[0], -r[1]))
        return k, g

    def to_text(self, sep: str = "\t") -> str:
        best = self.best()
        lines = [sep.join(["k", "gamma", "fold", "train_error", "test_error"])]
        lines += [sep.join([str(k), repr(g), str(f), repr(tr), repr(te)]) for k, g, f, tr, te in self.rows]
        lines.append(f"# best k={best[0]} gamma={best[1]!r}")
        return "\n".join(lines) + "\n"


def cross_validate(problem: GlrmProblem, ks, gammas, fraction: float = 0.1, folds: int = 1, seed: int = 0,
                   config: FitConfig | None = None, init: str = "svd", fitter=fit) -> CVResult:
    """Hold out random observed entries, fit on the rest and score the
    held-out entries, for every rank in ``ks`` and weight in ``gammas``.

    Each fold draws its own holdout set from ``seed``; all grid cells share
    the folds. Gammas are visited from largest to smallest, warm-starting.
    """
    config = config or FitConfig()
    rng = np.random.default_rng(seed)
    fold_seeds = rng.integers(0, 2**31 - 1, size=folds)
    result = CVResult()
    gammas = sorted({float(g) for g in gammas}, reverse=True)
    for f, fs in enumerate(fold_seeds):
        train, held = split_holdout(problem.table, fraction, int(fs))
        for k in ks:
            base = problem.with_table(train, k=int(k))
            current = None
            for g in gammas:
                p = regularize(base, g)
                if current is None:
                    current = initialize(p, init, int(fs))
                current, _ = fitter(p, current, config)
                result.rows.append((int(k), g, f, train_loss(p, current),
                                    heldout_loss(p, current, problem.table, held)))
    return result
