"""Closed-form solutions and optimality checks for quadratically regularized PCA.

Throughout, QRPCA means minimizing ||A - XY||_F^2 + gamma ||X||_F^2 +
gamma ||Y||_F^2, the library's quadratic loss with QuadraticReg(gamma) on
both sides.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .data import DataTable
from .losses import Quadratic
from .model import Factors, GlrmProblem, objective
from .regularizers import QuadraticReg

CERT_SLACK = 1e-8


class CertificateError(ValueError):
    pass


def qrpca_problem(A, k: int, gamma: float) -> GlrmProblem:
    A = np.asarray(A, dtype=float)
    reg = QuadraticReg(gamma)
    return GlrmProblem(DataTable.from_array(A), k, [Quadratic()] * A.shape[1], reg, reg)


def qrpca_objective(A, X, Y, gamma: float) -> float:
    R = np.asarray(A) - X @ Y
    return float((R * R).sum() + gamma * ((X * X).sum() + (Y * Y).sum()))


def qrpca_solve(A, k: int, gamma: float) -> Factors:
    """Global minimizer: soft-threshold the top k singular values by gamma and
    split them evenly, X = U_k S^(1/2), Y = S^(1/2) V_k^T."""
    A = np.asarray(A, dtype=float)
    if k > min(A.shape):
        raise ValueError("k must not exceed min(m, n)")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    root = np.sqrt(np.maximum(s[:k] - gamma, 0.0))
    X = U[:, :k] * root
    Y = root[:, None] * Vt[:k]
    return Factors(X, Y, np.ones(A.shape[1]))


def stationary_value(sigma, active, gamma: float) -> float:
    """QRPCA objective at the stationary point that keeps the singular
    directions in ``active`` (each shrunk by gamma) and drops the rest."""
    sigma = np.asarray(sigma, dtype=float)
    active = sorted(set(int(i) for i in active))
    if any(sigma[i] < gamma for i in active):
        raise ValueError("active singular values must be at least gamma")
    inactive = np.setdiff1d(np.arange(len(sigma)), active)
    s_act = sigma[active]
    return float((sigma[inactive] ** 2).sum() + (gamma ** 2 + 2 * gamma * np.abs(s_act - gamma)).sum())


def stationary_values(sigma, k: int, gamma: float):
    """All admissible active sets of size <= k with their stationary values."""
    sigma = np.asarray(sigma, dtype=float)
    ok = [i for i in range(len(sigma)) if sigma[i] >= gamma]
    out = []
    for size in range(0, k + 1):
        for S in itertools.combinations(ok, size):
            out.append((S, stationary_value(sigma, S, gamma)))
    return out


def nuclear_norm(Z) -> float:
    return float(np.linalg.svd(np.asarray(Z, dtype=float), compute_uv=False).sum())


def nuclear_norm_split(Z, tol: float = 1e-12):
    """X = U S^(1/2), Y = S^(1/2) V^T over the nonzero singular values of Z,
    so that XY = Z and (||X||^2 + ||Y||^2) / 2 = ||Z||_*."""
    Z = np.asarray(Z, dtype=float)
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    r = int(np.sum(s > tol * max(s[0] if len(s) else 0.0, 1e-300))) if len(s) and s[0] > 0 else 0
    root = np.sqrt(s[:r])
    return U[:, :r] * root, root[:, None] * Vt[:r]


def spectral_norm(M, tol: float = 1e-9, max_iter: int = 1000, seed: int = 0) -> float:
    """Largest singular value by power iteration on [[0, M], [M^T, 0]]."""
    M = np.asarray(M, dtype=float)
    m, n = M.shape
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m + n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = np.concatenate([M @ v[m:], M.T @ v[:m]])
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(nrm - est) <= tol * max(nrm, 1.0):
            est = nrm
            break
        est = nrm
    return float(est)


@dataclass
class Certificate:
    certified: bool
    value: float            # spectral norm of W = G / (2g) + U V^T
    alignment: float = 0.0  # max(||U^T W||_2, ||W V||_2), zero at a true subgradient
    note: str = ""

    def __str__(self):
        verdict = "certified" if self.certified else "uncertified"
        return f"{verdict} (spectral norm {self.value:.12g}, alignment {self.alignment:.3g})"


def _at_kink(loss, u, a, h=1e-7, tol=1e-4):
    """Entries where the one-sided difference quotients of the loss disagree."""
    f0 = loss.value(u, a, strict=False)
    fp = loss.value(u + h, a, strict=False)
    fm = loss.value(u - h, a, strict=False)
    right, left = (fp - f0) / h, (f0 - fm) / h
    gap = np.abs(right - left).reshape(len(f0), -1).max(axis=1)
    return gap > tol


def certify_global(problem: GlrmProblem, factors: Factors, align_tol: float = 1e-4) -> Certificate:
    """Test whether (X, Y) globally solves the rank-constrained problem.

    The library's QuadraticReg(g) on both sides equals nuclear-norm weight
    2g on Z = XY. With G the scaled loss gradients at the observed entries
    of Z and U S V^T the thin SVD of Z, -G / (2g) is a subgradient of the
    nuclear norm at Z exactly when W = G / (2g) + U V^T has spectral norm at
    most 1 and is orthogonal to U and V. The norm alone is not enough: small
    perturbations of an optimum keep it below 1. ``align_tol`` bounds the
    orthogonality residual relative to 1. Needs convex losses differentiable
    at every observed entry, equal quadratic regularizers on rows and
    columns and no offset.
    """
    if problem.with_offset:
        raise CertificateError("the certificate does not cover models with an offset")
    regs = {r for r in problem.base_row_regs} | {r for r in problem.col_regs}
    if len(regs) != 1 or not isinstance(next(iter(regs)), QuadraticReg):
        raise CertificateError("the certificate needs the same quadratic regularizer on rows and columns")
    gamma = next(iter(regs)).g
    if gamma <= 0:
        raise CertificateError("the certificate needs a positive regularization weight")
    X, Y = factors.X, factors.Y
    Z = X @ Y
    G = np.zeros_like(Z)
    for g in problem.groups:
        if not g.loss.convex:
            raise CertificateError(f"{g.loss.name} loss is not convex")
        u = Z[g.rows[:, None], g.ecols]
        u = u[:, 0] if g.loss.embed_dim == 1 else u
        if not g.loss.differentiable and np.any(_at_kink(g.loss, u, g.a)):
            raise CertificateError(f"{g.loss.name} loss sits at a kink on some observed entry; "
                                   "its subgradient there is not unique, so no certificate is issued")
        grad = g.loss.grad(u, g.a, strict=False).reshape(len(g), -1) * g.w[:, None]
        G[g.rows[:, None], g.ecols] = grad
    Xs, Ys = nuclear_norm_split(Z, tol=1e-10)
    r = Xs.shape[1]
    W = G / (2 * gamma)
    align = 0.0
    if r:
        U = Xs / np.linalg.norm(Xs, axis=0)
        V = Ys / np.linalg.norm(Ys, axis=1)[:, None]
        W = W + U @ V
        align = max(np.linalg.norm(U.T @ W, 2), np.linalg.norm(W @ V.T, 2))
    s = spectral_norm(W)
    note = ""
    if 1 < s <= 1 + CERT_SLACK:
        note = "within floating-point slack of the boundary"
        warnings.warn(f"certificate value {s!r} exceeds 1 by at most {CERT_SLACK:g}", RuntimeWarning,
                      stacklevel=2)
    if align > align_tol:
        note = "Z is not stationary: W is not orthogonal to the singular vectors of Z"
    return Certificate(bool(s <= 1 + CERT_SLACK and align <= align_tol), s, float(align), note)
