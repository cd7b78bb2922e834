"""Initial factors: random, SVD of a standardized data matrix, and k-means++."""

from __future__ import annotations

import warnings

import numpy as np

from .data import Boolean, Categorical, Interval, Ordinal, Real
from .losses import CrammerSinger, MultiOrdinal, OneVsAll
from .model import Factors, GlrmProblem


def init_random(problem: GlrmProblem, seed: int = 0) -> Factors:
    """Standard normal X and Y; the offset column of X is set to 1."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((problem.table.m, problem.k_eff))
    Y = rng.standard_normal((problem.k_eff, problem.D))
    if problem.with_offset:
        X[:, -1] = 1.0
    return Factors(X, Y, problem.sigma2.copy())


def project_feasible(problem: GlrmProblem, factors: Factors) -> Factors:
    """Project the factors onto the regularizers' constraint sets.

    A prox step with a negligible weight is a projection for set indicators
    and is skipped for everything else.
    """
    X, Y = factors.X.copy(), factors.Y.copy()
    for reg, rows in problem.row_reg_groups():
        if reg.is_indicator:
            X[rows] = reg.prox(X[rows], 1e-12)
    for reg, d, cols in problem.col_reg_groups():
        if reg.is_indicator:
            problem.set_col_blocks(Y, cols, d, reg.prox(problem.col_block_matrix(Y, cols, d), 1e-12))
    return Factors(X, Y, factors.sigma2)


# -- numeric encoding ---------------------------------------------------------------


def _encode(problem: GlrmProblem):
    """Numeric columns aligned with the embedding columns of Y.

    Returns an m x D array with NaN at missing cells and a boolean array
    marking the embedding columns that have a numeric meaning. Scalars are
    used as numbers (levels 1..d for ordinals, interval midpoints);
    categorical one-hot embeddings become d columns of +-1 indicators and
    the threshold embedding of ordinals becomes d-1 indicators of a > l.
    Permutation and ranking embeddings have no numeric encoding.
    """
    t = problem.table
    out = np.full((t.m, problem.D), np.nan)
    known = np.zeros(problem.D, dtype=bool)
    for j, (loss, kind) in enumerate(zip(problem.losses, t.kinds)):
        col, pres = t.columns[j], t.mask[:, j]
        b = problem.block(j)
        if isinstance(loss, (OneVsAll, CrammerSinger)):
            lv = np.arange(1, loss.d + 1)
            vals = np.where(col[:, None] == lv, 1.0, -1.0)
        elif isinstance(loss, MultiOrdinal):
            thr = np.arange(1, loss.d)
            vals = np.where(col[:, None] > thr, 1.0, -1.0)
        elif isinstance(kind, Interval):
            vals = col.mean(axis=1)[:, None]
        elif isinstance(kind, (Real, Boolean, Ordinal, Categorical)):
            vals = col[:, None]
        else:
            continue
        vals = vals.reshape(t.m, -1)
        out[:, b] = np.where(pres[:, None], vals, np.nan)
        known[b] = True
    return out, known


def build_scaled_matrix(problem: GlrmProblem, center: bool | None = None, scale: bool | None = None):
    """Standardized, reweighted data matrix used for SVD initialization.

    Each numeric column (see :func:`_encode`) has its observed entries
    centered by their mean ``mu`` (when ``center``), divided by their sample
    standard deviation ``sigma`` (when ``scale``) and multiplied by m / m_j,
    where m_j is the number of observed entries; missing entries are 0.
    ``center`` and ``scale`` default to the problem's offset and scaling
    flags. Returns ``(A_tilde, mu, sigma, known)`` with one entry of mu and
    sigma per embedding column.
    """
    center = problem.with_offset if center is None else center
    scale = problem.with_scaling if scale is None else scale
    E, known = _encode(problem)
    m = E.shape[0]
    obs = ~np.isnan(E)
    counts = obs.sum(axis=0)
    if np.any(counts[known] < 2):
        bad = int(problem.table.mask.sum(axis=0).argmin())
        raise ValueError(f"column {bad} has fewer than 2 observations")
    mu = np.zeros(problem.D)
    sigma = np.ones(problem.D)
    Ez = np.where(obs, E, 0.0)
    safe = np.maximum(counts, 1)
    if center:
        mu = np.where(known, Ez.sum(axis=0) / safe, 0.0)
    if scale:
        dev = np.where(obs, E - mu, 0.0)
        var = (dev ** 2).sum(axis=0) / np.maximum(counts - 1, 1)
        sigma = np.where(known & (var > 0), np.sqrt(var), 1.0)
    At = np.where(obs, (E - mu) * (m / (sigma * safe)), 0.0)
    At[:, ~known] = 0.0
    return At, mu, sigma, known


def top_k_svd(A, k: int, tol: float = 1e-8, max_iter: int = 300, oversample: int = 10, seed: int = 0):
    """Leading k singular triples by block subspace iteration.

    Returns ``(U, s, Vt)`` with U m x k, s length k, Vt k x n. Directions
    beyond the numerical rank of A are returned as zeros, with a warning.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    p = min(k + oversample, m, n)
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(A @ rng.standard_normal((n, p)))
    prev = None
    for _ in range(max_iter):
        Z, _ = np.linalg.qr(A.T @ Q)
        Q, _ = np.linalg.qr(A @ Z)
        s = np.linalg.svd(Q.T @ A, compute_uv=False)[:k]
        if prev is not None and np.max(np.abs(s - prev)) <= tol * max(s[0] if len(s) else 0.0, 1e-300):
            break
        prev = s
    Ub, s, Vt = np.linalg.svd(Q.T @ A, full_matrices=False)
    U = Q @ Ub
    U, s, Vt = U[:, :k], s[:k], Vt[:k]
    top = s[0] if len(s) else 0.0
    rank = int(np.sum(s > max(top, 1e-300) * 1e-12)) if top > 0 else 0
    if rank < k:
        warnings.warn(f"matrix has numerical rank {rank} < {k}; padding with zero directions",
                      RuntimeWarning, stacklevel=2)
        pad_u = np.zeros((m, k))
        pad_v = np.zeros((k, n))
        sv = np.zeros(k)
        r = min(rank, len(s))
        pad_u[:, :r], pad_v[:r], sv[:r] = U[:, :r], Vt[:r], s[:r]
        U, s, Vt = pad_u, sv, pad_v
    return U, s, Vt


def init_svd(problem: GlrmProblem, seed: int = 0) -> Factors:
    """X = U S^(1/2) and Y = S^(1/2) V^T diag(sigma) from the top-k SVD of the
    standardized matrix; with an offset the last column of X is 1 and the
    last row of Y holds the column means. Embedding columns without a
    numeric encoding (permutations, rankings) get standard normal entries."""
    At, mu, sigma, known = build_scaled_matrix(problem)
    k = problem.k
    U, s, Vt = top_k_svd(At, k, seed=seed)
    root = np.sqrt(s)
    X = np.zeros((problem.table.m, problem.k_eff))
    Y = np.zeros((problem.k_eff, problem.D))
    X[:, :k] = U * root
    Y[:k] = (root[:, None] * Vt) * sigma[None, :]
    if problem.with_offset:
        X[:, -1] = 1.0
        Y[-1] = mu
    if not known.all():
        rng = np.random.default_rng(seed)
        Y[:, ~known] = rng.standard_normal((problem.k_eff, int((~known).sum())))
    return Factors(X, Y, problem.sigma2.copy())


def init_kmeanspp(problem: GlrmProblem, seed: int = 0) -> Factors:
    """k-means++ seeding: centroids are data rows drawn with probability
    proportional to the squared distance to the nearest centroid so far.

    Missing entries are filled with the column mean. X is the one-hot
    assignment of each row to its nearest centroid (lowest index on ties).
    """
    k, m = problem.k, problem.table.m
    if k > m:
        raise ValueError(f"cannot pick {k} centroids from {m} rows")
    E, known = _encode(problem)
    means = np.where(known, np.nanmean(np.where(np.isnan(E), np.nan, E), axis=0), 0.0) if m else 0.0
    P = np.where(np.isnan(E), means, E)
    P[:, ~known] = 0.0
    rng = np.random.default_rng(seed)
    centers = [int(rng.integers(m))]
    d2 = ((P - P[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(m), centers)
            nxt = int(rng.choice(free))
        centers.append(nxt)
        d2 = np.minimum(d2, ((P - P[nxt]) ** 2).sum(axis=1))
    C = P[centers]
    dist = ((P[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    X = np.zeros((m, problem.k_eff))
    X[np.arange(m), np.argmin(dist, axis=1)] = 1.0
    Y = np.zeros((problem.k_eff, problem.D))
    Y[:k] = C
    if problem.with_offset:
        X[:, -1] = 1.0
    return Factors(X, Y, problem.sigma2.copy())


INITIALIZERS = {"random": init_random, "svd": init_svd, "kmeanspp": init_kmeanspp}


def initialize(problem: GlrmProblem, method: str = "svd", seed: int = 0) -> Factors:
    """Named initializer; svd falls back to random if the data cannot be encoded."""
    if method not in INITIALIZERS:
        raise ValueError(f"unknown init {method!r}; choose from {sorted(INITIALIZERS)}")
    if method == "svd":
        try:
            f = init_svd(problem, seed)
        except ValueError as e:
            warnings.warn(f"svd initialization failed ({e}); using random initialization",
                          RuntimeWarning, stacklevel=2)
            f = init_random(problem, seed)
    else:
        f = INITIALIZERS[method](problem, seed)
    return project_feasible(problem, f)
