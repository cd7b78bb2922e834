"""Fitting engines: alternating proximal gradient, exact quadratic updates,
a stochastic-gradient variant and single-row solves for new examples.

All engines alternate a full pass over the rows of X with a full pass over
the column blocks of Y. Within a pass every row (column) is updated
independently, so the work can be split across threads without changing
the result.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .losses import Quadratic
from .model import Factors, GlrmProblem, col_reg_values, entry_inputs, row_reg_values
from .regularizers import (BlockSparseInd, FixedEntry, OneSparseInd, OneSparseNonnegInd,
                           QuadraticReg, UnitOneSparseInd, Zero)

JITTER = 1e-10


class InfeasibleStart(ValueError):
    pass


@dataclass
class FitConfig:
    max_iters: int = 200
    tol: float = 1e-4
    alpha: float = 1.0           # initial step scale per row and column
    decrease: float = 0.7        # step factor after a rejected update
    increase: float = 1.05       # step factor after an accepted update
    inner_iters: int = 1         # prox-prox iterations per exact pass
    sample_fraction: float | None = None
    accept: bool = False         # acceptance checks in the stochastic engine
    seed: int = 0
    threads: int = 1
    patience: int = 10           # stop after this many stalled passes with no accepted step

    def __post_init__(self):
        if not 0 < self.decrease < 1 or self.increase <= 1:
            raise ValueError("need 0 < decrease < 1 < increase")
        if self.max_iters < 0 or self.alpha <= 0:
            raise ValueError("max_iters must be >= 0 and alpha > 0")


@dataclass
class FitReport:
    objectives: list = field(default_factory=list)   # objectives[0] is the starting value
    times: list = field(default_factory=list)        # wall seconds per iteration
    reason: str = "max_iters"
    row_steps: np.ndarray | None = None
    col_steps: np.ndarray | None = None
    sampled: bool = False

    @property
    def iterations(self) -> int:
        return len(self.times)

    @property
    def final_objective(self) -> float:
        return self.objectives[-1]

    def to_text(self, sep: str = "\t") -> str:
        lines = [sep.join(["iteration", "objective", "time"])]
        lines.append(sep.join(["0", repr(float(self.objectives[0])), "0.0"]))
        for t, (obj, dt) in enumerate(zip(self.objectives[1:], self.times), start=1):
            lines.append(sep.join([str(t), repr(float(obj)), f"{dt:.6f}"]))
        return "\n".join(lines) + "\n"


# -- evaluation engine ---------------------------------------------------------------


class _Engine:
    """Flattened view of the observed entries of a problem.

    Gradients with respect to X and Y are products with a sparse m x D
    matrix holding dL/du at each observed (row, embedding column) slot; its
    sparsity pattern is fixed, so only the data array changes per pass.
    """

    def __init__(self, problem: GlrmProblem, threads: int = 1):
        self.p = problem
        m, D = problem.table.m, problem.D
        self.rows = np.concatenate([g.rows for g in problem.groups]) if problem.groups else np.zeros(0, int)
        self.cols = np.concatenate([g.cols for g in problem.groups]) if problem.groups else np.zeros(0, int)
        self.bounds = np.cumsum([0] + [len(g) for g in problem.groups])
        srow, scol, self.slot_entry = [], [], []
        start = 0
        for g in problem.groups:
            d = g.ecols.shape[1]
            srow.append(np.repeat(g.rows, d))
            scol.append(g.ecols.ravel())
            self.slot_entry.append(np.repeat(np.arange(start, start + len(g)), d))
            start += len(g)
        srow = np.concatenate(srow) if srow else np.zeros(0, int)
        scol = np.concatenate(scol) if scol else np.zeros(0, int)
        self.slot_entry = np.concatenate(self.slot_entry) if self.slot_entry else np.zeros(0, int)
        S = len(srow)
        tag = np.arange(1, S + 1, dtype=float)
        self.M = sp.csr_matrix((tag, (srow, scol)), shape=(m, D))
        self.perm = self.M.data.astype(np.int64) - 1
        self.MT = sp.csr_matrix((tag, (scol, srow)), shape=(D, m))
        self.permT = self.MT.data.astype(np.int64) - 1
        self.m, self.n, self.D = m, problem.table.n, D
        self.ecol_owner = np.repeat(np.arange(self.n), problem.dims)
        self.threads = max(1, int(threads))
        self.pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def inputs(self, X, Y):
        return [entry_inputs(X, Y, g) for g in self.p.groups]

    def terms(self, us):
        if not us:
            return np.zeros(0)
        return np.concatenate([g.w * g.loss.value(u, g.a, strict=False) for g, u in zip(self.p.groups, us)])

    def slot_grads(self, us, weights=None):
        parts = []
        for g, u in zip(self.p.groups, us):
            gr = g.loss.grad(u, g.a, strict=False)
            gr = gr.reshape(len(g), -1) * g.w[:, None]
            parts.append(gr.ravel())
        flat = np.concatenate(parts) if parts else np.zeros(0)
        if weights is not None:
            flat = flat * weights[self.slot_entry]
        return flat

    def grad_X(self, flat, Y):
        self.M.data[:] = flat[self.perm]
        return np.asarray(self.M @ Y.T)

    def grad_Y(self, flat, X):
        self.MT.data[:] = flat[self.permT]
        return np.asarray(self.MT @ X).T

    def row_sums(self, terms):
        return np.bincount(self.rows, weights=terms, minlength=self.m)

    def col_sums(self, terms):
        return np.bincount(self.cols, weights=terms, minlength=self.n)

    # -- prox passes, chunked over threads

    def _chunks(self, idx):
        if self.pool is None or len(idx) < 2 * self.threads:
            return [idx]
        return np.array_split(idx, self.threads)

    def prox_rows(self, V, step):
        out = np.empty_like(V)
        jobs = []
        for reg, rows in self.p.row_reg_groups():
            for chunk in self._chunks(rows):
                jobs.append((reg, chunk))

        def run(job):
            reg, chunk = job
            out[chunk] = reg.prox(V[chunk], step[chunk])

        self._run(run, jobs)
        return out

    def prox_cols(self, Y, step):
        out = Y.copy()
        jobs = []
        for reg, d, cols in self.p.col_reg_groups():
            for chunk in self._chunks(cols):
                jobs.append((reg, d, chunk))

        def run(job):
            reg, d, chunk = job
            B = self.p.col_block_matrix(Y, chunk, d)
            self.p.set_col_blocks(out, chunk, d, reg.prox(B, step[chunk]))

        self._run(run, jobs)
        return out

    def _run(self, fn, jobs):
        if self.pool is None or len(jobs) == 1:
            for job in jobs:
                fn(job)
        else:
            list(self.pool.map(fn, jobs))


def _check_start(obj):
    if not np.isfinite(obj):
        raise InfeasibleStart("objective is infinite at the starting point; start from a feasible "
                              "point, e.g. by projecting the initial factors onto the constraints")


def _rel_decrease(prev, cur):
    return (prev - cur) / max(abs(cur), 1.0)


# -- proximal gradient --------------------------------------------------------------


def _fit_proxgrad(problem, init, config, callback, sample_fraction=None, update_y=True):
    init.check(problem)
    eng = _Engine(problem, config.threads)
    X, Y = init.X.astype(float).copy(), init.Y.astype(float).copy()
    m, n = eng.m, eng.n
    ar = np.full(m, float(config.alpha))
    ac = np.full(n, float(config.alpha))
    nrow = np.maximum(problem.row_counts, 1)
    ncol = np.maximum(problem.col_counts, 1)
    stochastic = sample_fraction is not None
    adaptive = (not stochastic) or config.accept
    rng = np.random.default_rng(config.seed)

    terms = eng.terms(eng.inputs(X, Y))
    rreg = row_reg_values(problem, X)
    creg = col_reg_values(problem, Y)
    obj = float(terms.sum() + rreg.sum() + creg.sum())
    _check_start(obj)
    report = FitReport(objectives=[obj], sampled=stochastic)
    stalled = 0
    try:
        for t in range(1, config.max_iters + 1):
            t0 = time.perf_counter()
            if stochastic:
                keep = rng.random(len(eng.rows)) < sample_fraction
                wx = keep / sample_fraction
                keep = rng.random(len(eng.rows)) < sample_fraction
                wy = keep / sample_fraction
            else:
                wx = wy = None
            if not adaptive:
                ar[:] = config.alpha / np.sqrt(t)
                ac[:] = config.alpha / np.sqrt(t)

            # X pass
            accepted_any = False
            us = eng.inputs(X, Y)
            step = ar / nrow
            G = eng.grad_X(eng.slot_grads(us, wx), Y)
            Xc = eng.prox_rows(X - step[:, None] * G, step)
            new_terms = eng.terms(eng.inputs(Xc, Y))
            new_rreg = row_reg_values(problem, Xc)
            if adaptive:
                old_f = eng.row_sums(terms if wx is None else terms * wx) + rreg
                new_f = eng.row_sums(new_terms if wx is None else new_terms * wx) + new_rreg
                ok = new_f <= old_f
                ar = np.where(ok, ar * config.increase, ar * config.decrease)
            else:
                ok = np.ones(m, dtype=bool)
            accepted_any |= bool(ok.any())
            X = np.where(ok[:, None], Xc, X)
            rreg = np.where(ok, new_rreg, rreg)
            terms = np.where(ok[eng.rows], new_terms, terms)

            # Y pass
            if update_y:
                us = eng.inputs(X, Y)
                cstep = ac / ncol
                estep = cstep[eng.ecol_owner]
                G = eng.grad_Y(eng.slot_grads(us, wy), X)
                Yc = eng.prox_cols(Y - estep[None, :] * G, cstep)
                new_terms = eng.terms(eng.inputs(X, Yc))
                new_creg = col_reg_values(problem, Yc)
                if adaptive:
                    old_f = eng.col_sums(terms if wy is None else terms * wy) + creg
                    new_f = eng.col_sums(new_terms if wy is None else new_terms * wy) + new_creg
                    ok = new_f <= old_f
                    ac = np.where(ok, ac * config.increase, ac * config.decrease)
                else:
                    ok = np.ones(n, dtype=bool)
                accepted_any |= bool(ok.any())
                Y = np.where(ok[eng.ecol_owner][None, :], Yc, Y)
                creg = np.where(ok, new_creg, creg)
                terms = np.where(ok[eng.cols], new_terms, terms)

            # every entry's loss is already cached, so the exact objective is free
            cur = float(terms.sum() + rreg.sum() + creg.sum())
            report.times.append(time.perf_counter() - t0)
            report.objectives.append(cur)
            if callback is not None:
                callback(t, X, Y)
            if stochastic and not config.accept:
                obj = cur
                continue
            rel = _rel_decrease(obj, cur)
            # sampled acceptance does not make the full objective monotone; an increase is not convergence
            small = rel < config.tol and not (stochastic and rel < 0)
            obj = cur
            stalled = stalled + 1 if (small and not accepted_any) else 0
            if small and (accepted_any or stalled >= config.patience):
                report.reason = "converged"
                break
    finally:
        eng.close()
    report.row_steps, report.col_steps = ar, ac
    sigma2 = problem.sigma2.copy()
    return Factors(X, Y, sigma2), report


def fit(problem: GlrmProblem, init: Factors, config: FitConfig | None = None, callback=None):
    """Alternating proximal gradient with per-row and per-column adaptive steps.

    Each row takes the step x - (alpha_i / n_i) g followed by the prox of its
    regularizer, and keeps the result only if its own objective did not
    increase; alpha_i then grows by ``config.increase`` or shrinks by
    ``config.decrease``. Columns are treated the same way. Returns the final
    factors and a :class:`FitReport`.
    """
    return _fit_proxgrad(problem, init, config or FitConfig(), callback)


def fit_stochastic(problem: GlrmProblem, init: Factors, config: FitConfig | None = None, callback=None):
    """Proximal stochastic gradient.

    Each pass keeps every observed entry independently with probability
    ``config.sample_fraction`` and reweights it by its inverse, giving an
    unbiased gradient. Steps follow alpha / sqrt(t) with no acceptance test
    unless ``config.accept`` is set, in which case the adaptive rule of
    :func:`fit` is used (and a fraction of 1 reproduces :func:`fit`).
    """
    config = config or FitConfig(sample_fraction=0.5)
    p = config.sample_fraction
    if p is None or not 0 < p <= 1:
        raise ValueError("sample_fraction must lie in (0, 1]")
    return _fit_proxgrad(problem, init, config, callback, sample_fraction=float(p))


def stochastic_gradient(problem: GlrmProblem, factors: Factors, fraction: float, rng):
    """One sampled estimate of the gradient of the loss part with respect to X."""
    eng = _Engine(problem)
    keep = rng.random(len(eng.rows)) < fraction
    return eng.grad_X(eng.slot_grads(eng.inputs(factors.X, factors.Y), keep / fraction), factors.Y)


def loss_gradient(problem: GlrmProblem, factors: Factors):
    """Exact gradients of the summed scaled losses: (dX, dY)."""
    eng = _Engine(problem)
    flat = eng.slot_grads(eng.inputs(factors.X, factors.Y))
    return eng.grad_X(flat, factors.Y), eng.grad_Y(flat, factors.X)


def solve_rows(problem: GlrmProblem, Y, X0=None, config: FitConfig | None = None):
    """Refit every row of X with Y held fixed (new examples, held-out scoring)."""
    config = config or FitConfig(max_iters=500, tol=1e-8)
    if X0 is None:
        X0 = np.zeros((problem.table.m, problem.k_eff))
        if problem.with_offset:
            X0[:, -1] = 1.0
    f, rep = _fit_proxgrad(problem, Factors(np.asarray(X0, float), np.asarray(Y, float)), config,
                           None, update_y=False)
    return f.X, rep


def solve_row(problem: GlrmProblem, Y, i: int, x0=None, config: FitConfig | None = None):
    """Fit row ``i`` alone against a fixed Y."""
    sub = GlrmProblem(problem.table.take_rows([i]), problem.k, problem.losses, problem.base_row_regs[i],
                      problem.col_regs, problem.with_offset, sigma2=problem.sigma2)
    X0 = None if x0 is None else np.asarray(x0, dtype=float).reshape(1, -1)
    X, _ = solve_rows(sub, Y, X0, config)
    return X[0]


# -- exact alternating minimization for quadratic losses ---------------------------------


def _split(reg):
    """(inner regularizer, pinned) for a possibly offset-wrapped regularizer."""
    if isinstance(reg, FixedEntry):
        return reg.inner, True
    return reg, False


def _ridge_gamma(reg):
    if isinstance(reg, Zero):
        return 0.0
    if isinstance(reg, QuadraticReg):
        return reg.g
    return None


def _chol_solve(G, B, what):
    """Solve G Z = B for symmetric positive (semi)definite G, jittering if singular."""
    try:
        c = scipy.linalg.cho_factor(G, check_finite=False)
        if np.min(np.abs(np.diag(c[0]))) < 1e-150:
            raise np.linalg.LinAlgError
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        warnings.warn(f"{what}: singular Gram matrix; adding ridge jitter {JITTER:g}", RuntimeWarning,
                      stacklevel=4)
        c = scipy.linalg.cho_factor(G + JITTER * np.eye(len(G)), check_finite=False)
    return scipy.linalg.cho_solve(c, B, check_finite=False)


def _batched_solve(Gs, Bs, what):
    try:
        np.linalg.cholesky(Gs)
        return np.linalg.solve(Gs, Bs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        warnings.warn(f"{what}: singular Gram matrix; adding ridge jitter {JITTER:g}", RuntimeWarning,
                      stacklevel=4)
        eye = np.eye(Gs.shape[-1])
        return np.linalg.solve(Gs + JITTER * eye, Bs[..., None])[..., 0]


class _QuadSide:
    """Least-squares data for one side: minimize sum_j W_ij (x_i . F_j - T_ij)^2 over rows i."""

    def __init__(self, W, T):
        self.W = W           # (r, c) weights, zero where unobserved
        self.T = T           # (r, c) targets, zero where unobserved
        self.full = bool(np.all(W > 0)) and np.ptp(W, axis=0).max(initial=0) == 0

    def grams(self, F):
        """Per-row Gram matrices sum_j W_ij F_j F_j^T, shape (r, q, q) or a shared (q, q)."""
        if self.full:
            return (F * self.W[0]) @ F.T
        return np.einsum("ij,kj,lj->ikl", self.W, F, F, optimize=True)

    def rhs(self, F):
        return (self.W * self.T) @ F.T

    def loss(self, V, F):
        R = V @ F - self.T
        return np.einsum("ij,ij->i", self.W * R, R)


def _exact_side(side: _QuadSide, V, F, regs, pinned_row, alphas, config, what):
    """One exact pass: each row of V minimizes its quadratic loss plus regularizer.

    ``F`` is the fixed factor (q_eff x c). If ``pinned_row`` is set, the last
    coordinate of V is held at 1 (offset column of X). Returns new V and the
    updated per-row prox step sizes.
    """
    r = len(V)
    V = V.copy()
    if pinned_row:
        Fk, f0 = F[:-1], F[-1]
        T = side.T - f0[None, :]
        sub = _QuadSide(side.W, np.where(side.W > 0, T, 0.0))
        sub.full = side.full
        Z = V[:, :-1]
    else:
        Fk, sub, Z = F, side, V
    q = Fk.shape[0]
    G = sub.grams(Fk)
    B = sub.rhs(Fk)
    shared = G.ndim == 2
    newZ = Z.copy()
    for reg, rows in regs:
        gam = _ridge_gamma(reg)
        if gam is not None:
            if shared:
                newZ[rows] = _chol_solve(G + gam * np.eye(q), B[rows].T, what).T
            else:
                newZ[rows] = _batched_solve(G[rows] + gam * np.eye(q), B[rows], what)
        elif reg.finite_candidates or isinstance(reg, UnitOneSparseInd):
            Gr = np.broadcast_to(G, (r, q, q))[rows] if shared else G[rows]
            newZ[rows] = _enumerate(reg, Gr, B[rows], q)
        else:
            # prox-prox: x' = prox_{a r}((2G + I/a)^{-1} (2b + x/a)), accepted if not worse
            for _ in range(max(1, config.inner_iters)):
                a = alphas[rows]
                Gr = np.broadcast_to(G, (r, q, q))[rows] if shared else G[rows]
                lhs = 2.0 * Gr + np.eye(q)[None] / a[:, None, None]
                cand = np.linalg.solve(lhs, (2.0 * B[rows] + Z[rows] / a[:, None])[..., None])[..., 0]
                cand = reg.prox(cand, a)
                old = _row_obj(sub, Z[rows], Fk, reg, rows)
                new = _row_obj(sub, cand, Fk, reg, rows)
                ok = new <= old
                alphas[rows] = np.where(ok, a * config.increase, a * config.decrease)
                Z = Z.copy()
                Z[rows] = np.where(ok[:, None], cand, Z[rows])
            newZ[rows] = Z[rows]
    if pinned_row:
        V[:, :-1] = newZ
        V[:, -1] = 1.0
    else:
        V = newZ
    return V, alphas


def _row_obj(side, Z, F, reg, rows):
    R = Z @ F - side.T[rows]
    return np.einsum("ij,ij->i", side.W[rows] * R, R) + reg.value(Z)


def _enumerate(reg, G, B, q):
    """Exact minimizer of x^T G x - 2 b^T x over a finite union of supports."""
    r = len(B)
    out = np.zeros((r, q))
    idx = np.arange(r)
    diag = np.einsum("rii->ri", G)
    if isinstance(reg, UnitOneSparseInd):
        cost = diag - 2.0 * B
        out[idx, np.argmin(cost, axis=1)] = 1.0
        return out
    if isinstance(reg, (OneSparseInd, OneSparseNonnegInd)):
        b = np.maximum(B, 0.0) if isinstance(reg, OneSparseNonnegInd) else B
        safe = np.where(diag > 0, diag, 1.0)
        gain = np.where(diag > 0, b * b / safe, 0.0)
        best = np.argmax(gain, axis=1)
        out[idx, best] = np.where(diag[idx, best] > 0, b[idx, best] / safe[idx, best], 0.0)
        return out
    if isinstance(reg, BlockSparseInd):
        best_gain = np.full(r, -np.inf)
        for blk in reg.supports(q):
            Gb = G[:, blk][:, :, blk] + JITTER * np.eye(len(blk))
            z = np.linalg.solve(Gb, B[:, blk][..., None])[..., 0]
            gain = np.einsum("ri,ri->r", B[:, blk], z)
            better = gain > best_gain
            best_gain = np.where(better, gain, best_gain)
            out[better] = 0.0
            out[np.ix_(better, blk)] = z[better]
        return out
    raise ValueError(f"no exact update for regularizer {reg.name}")


def fit_exact_quadratic(problem: GlrmProblem, init: Factors, config: FitConfig | None = None,
                        callback=None):
    """Alternating minimization for problems whose losses are all quadratic.

    With Zero or quadratic regularizers each row solve is a ridge regression
    done by Cholesky factorization; when the data are fully observed one
    factorization of G + gamma I is shared by every row. Finite-candidate
    indicators (cluster assignment, 1-sparse, block-sparse) are minimized
    exactly by enumeration, so the pair of passes is Lloyd's algorithm for
    quadratic loss with unit one-sparse rows. Other regularizers take
    prox-prox steps with the same per-row acceptance rule as :func:`fit`.
    """
    config = config or FitConfig()
    init.check(problem)
    if not all(isinstance(l, Quadratic) for l in problem.losses):
        raise ValueError("fit_exact_quadratic needs quadratic loss on every column")
    m, n, k = problem.table.m, problem.table.n, problem.k
    A = np.where(problem.table.mask, problem.table.to_array(), 0.0)
    W = problem.table.mask / problem.sigma2[None, :]
    rows_side = _QuadSide(W, A)
    cols_side = _QuadSide(W.T, A.T)

    X, Y = init.X.astype(float).copy(), init.Y.astype(float).copy()
    ar = np.full(m, config.alpha)
    ac = np.full(n, config.alpha)
    row_regs = [(_split(reg)[0], rows) for reg, rows in problem.row_reg_groups()]
    col_groups = [(reg, cols) for reg, d, cols in problem.col_reg_groups()]

    def total(X, Y):
        R = X @ Y - A
        return float((W * R * R).sum() + row_reg_values(problem, X).sum() + col_reg_values(problem, Y).sum())

    obj = total(X, Y)
    _check_start(obj)
    report = FitReport(objectives=[obj])
    for t in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        X, ar = _exact_side(rows_side, X, Y, row_regs, problem.with_offset, ar, config, "X update")
        # columns: the offset row of Y is free, so it is solved jointly but left unregularized
        Yt, ac = _exact_cols(cols_side, Y.T, X, col_groups, problem.with_offset, ac, config)
        Y = Yt.T
        cur = total(X, Y)
        report.times.append(time.perf_counter() - t0)
        report.objectives.append(cur)
        if callback is not None:
            callback(t, X, Y)
        if _rel_decrease(obj, cur) < config.tol:
            obj = cur
            report.reason = "converged"
            break
        obj = cur
    report.row_steps, report.col_steps = ar, ac
    return Factors(X, Y, problem.sigma2.copy()), report


def _exact_cols(side, V, F, groups, free_last, alphas, config):
    """Column pass: rows of V are y_j^T; with an offset the last entry is unregularized."""
    q = F.shape[1]
    G = side.grams(F.T)
    B = side.rhs(F.T)
    shared = G.ndim == 2
    V = V.copy()
    for reg, cols in groups:
        gam = _ridge_gamma(reg)
        if gam is not None:
            P = np.eye(q) * gam
            if free_last:
                P[-1, -1] = 0.0
            if shared:
                V[cols] = _chol_solve(G + P, B[cols].T, "Y update").T
            else:
                V[cols] = _batched_solve(G[cols] + P, B[cols], "Y update")
        elif free_last:
            raise ValueError(f"exact updates with offset support only ridge column regularizers, "
                             f"not {reg.name}")
        else:
            newV, a = _exact_side(_QuadSide(side.W[cols], side.T[cols]), V[cols], F.T,
                                  [(reg, np.arange(len(cols)))], False, alphas[cols].copy(), config,
                                  "Y update")
            V[cols] = newV
            alphas[cols] = a
    return V, alphas
