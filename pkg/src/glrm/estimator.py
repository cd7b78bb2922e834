"""scikit-learn style estimator wrapping the problem and fitting engines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .data import DataTable, FeatureKind, Real, parse_kind
from .fit import FitConfig, fit, fit_exact_quadratic, fit_stochastic, solve_rows
from .initialization import initialize
from .losses import Loss, default_loss, make_loss
from .model import Factors, GlrmProblem, impute_table, loss_terms
from .regularizers import Reg, Zero, parse_reg

SOLVERS = ("proxgrad", "exact", "stochastic")

# Row refits run a fixed number of passes so each row's result does not
# depend on which other rows are in the batch.
ROW_CONFIG = dict(max_iters=300, tol=-np.inf)


class GLRM(TransformerMixin, BaseEstimator):
    """Generalized low rank model.

    Parameters
    ----------
    rank : int
        Number of archetypes k.
    loss : "auto", a catalog name, a Loss, or a list with one entry per column.
        "auto" picks huber / hinge / ordinal hinge / one-vs-all by column kind.
    regularizer, col_regularizer : catalog name or Reg for rows of X and
        columns of Y. The weight of named regularizers is ``gamma``;
        ``col_regularizer=None`` reuses the row regularizer.
    offset, scaling : add a free per-column offset; divide each column's loss
        by its generalized variance.
    init : "svd", "random" or "kmeanspp".
    solver : "proxgrad", "exact" (quadratic losses only) or "stochastic".
    kinds : column kinds for array input, e.g. ["real", "boolean", "ordinal:5"].
        Ignored when fitting a DataTable.
    """

    def __init__(self, rank=2, loss="auto", regularizer="quadreg", col_regularizer=None, gamma=0.0,
                 offset=False, scaling=False, init="svd", solver="proxgrad", max_iter=200, tol=1e-4,
                 sample_fraction=0.5, random_state=None, kinds=None, threads=1):
        self.rank = rank
        self.loss = loss
        self.regularizer = regularizer
        self.col_regularizer = col_regularizer
        self.gamma = gamma
        self.offset = offset
        self.scaling = scaling
        self.init = init
        self.solver = solver
        self.max_iter = max_iter
        self.tol = tol
        self.sample_fraction = sample_fraction
        self.random_state = random_state
        self.kinds = kinds
        self.threads = threads

    # -- helpers

    def _table(self, X, reset: bool) -> DataTable:
        if isinstance(X, DataTable):
            if not reset and X.n != self.n_features_in_:
                raise ValueError(f"expected {self.n_features_in_} columns, got {X.n}")
            return X
        A = validate_data(self, X, reset=reset, dtype=float, ensure_all_finite="allow-nan")
        if np.isinf(A).any():
            raise ValueError("Input contains infinity; mark missing entries with NaN")
        if self.kinds is None:
            kinds = [Real()] * A.shape[1]
        else:
            kinds = [k if isinstance(k, FeatureKind) else parse_kind(k) for k in self.kinds]
            if len(kinds) != A.shape[1]:
                raise ValueError(f"kinds lists {len(kinds)} columns, data has {A.shape[1]}")
        return DataTable.from_array(A, kinds)

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.input_tags.allow_nan = True
        return tags

    def _losses(self, table):
        spec = self.loss
        if isinstance(spec, (list, tuple)):
            if len(spec) != table.n:
                raise ValueError("need one loss per column")
            return [s if isinstance(s, Loss) else (default_loss(k) if s == "auto" else make_loss(s, k))
                    for s, k in zip(spec, table.kinds)]
        if isinstance(spec, Loss):
            return [spec] * table.n
        if spec == "auto":
            return [default_loss(k) for k in table.kinds]
        return [make_loss(spec, k) for k in table.kinds]

    def _reg(self, spec) -> Reg:
        if isinstance(spec, Reg):
            return spec
        if spec is None:
            return Zero()
        return parse_reg(spec, self.gamma)

    def _config(self):
        seed = 0 if self.random_state is None else int(self.random_state)
        # the stochastic solver keeps the acceptance test so the default step cannot diverge
        return FitConfig(max_iters=self.max_iter, tol=self.tol, seed=seed, threads=self.threads,
                         sample_fraction=self.sample_fraction if self.solver == "stochastic" else None,
                         accept=self.solver == "stochastic")

    # -- API

    def fit(self, X, y=None):
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if int(self.rank) < 1:
            raise ValueError("rank must be at least 1")
        table = self._table(X, reset=True)
        row_reg = self._reg(self.regularizer)
        col_reg = row_reg if self.col_regularizer is None else self._reg(self.col_regularizer)
        problem = GlrmProblem(table, int(self.rank), self._losses(table), row_reg, col_reg,
                              offset=self.offset, scaling=self.scaling)
        config = self._config()
        start = initialize(problem, self.init, config.seed)
        engine = {"proxgrad": fit, "exact": fit_exact_quadratic, "stochastic": fit_stochastic}[self.solver]
        factors, report = engine(problem, start, config)
        self.problem_ = problem
        self.factors_ = factors
        self.report_ = report
        self.n_features_in_ = table.n
        self.n_iter_ = report.iterations
        self.embedding_ = factors.X[:, : problem.k]
        self.components_ = factors.Y
        return self

    def transform(self, X):
        """Representations of new rows, fitted with the archetypes held fixed."""
        check_is_fitted(self, "factors_")
        Xn, p = self._rows(X)
        return Xn[:, : p.k]

    def _rows(self, X):
        p = self.problem_.with_table(self._table(X, reset=False))
        Xn, _ = solve_rows(p, self.factors_.Y, config=FitConfig(**ROW_CONFIG))
        return Xn, p

    def inverse_transform(self, Z):
        """Imputed data (numeric encoding) for representations Z."""
        check_is_fitted(self, "factors_")
        Z = check_array(Z, dtype=float)
        p = self.problem_
        X = np.ones((len(Z), p.k_eff))
        X[:, : p.k] = Z
        return self._impute(X)

    def _impute(self, X):
        p = self.problem_
        stub = p.with_table(p.table.take_rows(np.zeros(len(X), dtype=int)))
        t = impute_table(stub, Factors(X, self.factors_.Y, self.factors_.sigma2))
        if t.is_numeric():
            return t.to_array()
        return t

    def impute(self, X=None):
        """Fill every cell (observed or not) of the training data, or of new rows X."""
        check_is_fitted(self, "factors_")
        if X is None:
            return self._impute(self.factors_.X)
        Xn, _ = self._rows(X)
        return self._impute(Xn)

    def score(self, X, y=None):
        """Negative mean loss of the observed entries of X after fitting their rows."""
        check_is_fitted(self, "factors_")
        Xn, p = self._rows(X)
        terms = loss_terms(p, Xn, self.factors_.Y)
        table = p.table
        return -sum(float(t.sum()) for t in terms) / max(table.n_observed, 1)
