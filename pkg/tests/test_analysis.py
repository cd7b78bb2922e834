import numpy as np
import pytest

from glrm.analysis import (CertificateError, certify_global, nuclear_norm, nuclear_norm_split,
                           qrpca_objective, qrpca_problem, qrpca_solve, spectral_norm, stationary_value,
                           stationary_values)
from glrm.data import Boolean, DataTable
from glrm.losses import Hinge, Huber, L1, Logarithmic, Quadratic
from glrm.model import Factors, GlrmProblem
from glrm.regularizers import L1Reg, QuadraticReg


def test_qrpca_gamma_zero_is_truncated_svd(rng):
    A = rng.normal(size=(12, 9))
    f = qrpca_solve(A, 3, 0.0)
    s = np.linalg.svd(A, compute_uv=False)
    err = ((A - f.X @ f.Y) ** 2).sum()
    assert err == pytest.approx((s[3:] ** 2).sum(), abs=1e-8)


def test_qrpca_large_gamma_is_zero(rng):
    A = rng.normal(size=(8, 6))
    s1 = np.linalg.svd(A, compute_uv=False)[0]
    f = qrpca_solve(A, 2, s1 * 1.01)
    assert not f.X.any() and not f.Y.any()


def test_qrpca_objective_closed_form(rng):
    A = rng.normal(size=(10, 7))
    g = 0.8
    s = np.linalg.svd(A, compute_uv=False)
    f = qrpca_solve(A, 3, g)
    # kept directions cost g^2 + 2 g (s - g), the rest cost s^2
    keep = s[:3] > g
    want = (s[3:] ** 2).sum() + np.where(keep, g ** 2 + 2 * g * (s[:3] - g), s[:3] ** 2).sum()
    assert qrpca_objective(A, f.X, f.Y, g) == pytest.approx(want, rel=1e-12)


def test_stationary_values():
    sigma = np.array([5.0, 3.0, 2.0, 0.5])
    vals = dict(stationary_values(sigma, 2, 1.0))
    assert min(vals, key=vals.get) == (0, 1)
    assert vals[()] == pytest.approx((sigma ** 2).sum())
    with pytest.raises(ValueError):
        stationary_value(sigma, [3], 1.0)


def test_nuclear_norm_split(rng):
    Z = rng.normal(size=(6, 4)) @ rng.normal(size=(4, 7))
    X, Y = nuclear_norm_split(Z)
    np.testing.assert_allclose(X @ Y, Z, atol=1e-10)
    assert 0.5 * ((X ** 2).sum() + (Y ** 2).sum()) == pytest.approx(nuclear_norm(Z), rel=1e-10)


def test_spectral_norm(rng):
    M = rng.normal(size=(9, 5))
    assert spectral_norm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-6)
    assert spectral_norm(np.zeros((3, 3))) == 0.0


def _separated(rng, m=15, n=12, k=3):
    U, _ = np.linalg.qr(rng.normal(size=(m, m)))
    V, _ = np.linalg.qr(rng.normal(size=(n, n)))
    s = np.concatenate([[9.0, 7.0, 5.0], np.linspace(0.8, 0.1, min(m, n) - k)])
    return (U[:, : len(s)] * s) @ V[:, : len(s)].T


def test_certificate_on_solution(rng):
    A = _separated(rng)
    f = qrpca_solve(A, 3, 1.0)
    c = certify_global(qrpca_problem(A, 3, 1.0), f)
    assert c.certified and c.value <= 1
    assert "certified" in str(c)


def test_certificate_needs_small_tail(rng):
    # gamma below sigma_4: the rank-3 solution is not the convex optimum
    A = _separated(rng)
    c = certify_global(qrpca_problem(A, 3, 0.5), qrpca_solve(A, 3, 0.5))
    assert not c.certified


def test_certificate_rejects_perturbation(rng):
    A = _separated(rng)
    f = qrpca_solve(A, 3, 1.0)
    for eps in (1e-3, 1e-2, 0.3):
        g = Factors(f.X + eps * rng.normal(size=f.X.shape), f.Y)
        c = certify_global(qrpca_problem(A, 3, 1.0), g)
        assert not c.certified and c.alignment > 1e-4
    # the norm test alone would pass small perturbations
    g = Factors(f.X + 1e-3 * rng.normal(size=f.X.shape), f.Y)
    assert certify_global(qrpca_problem(A, 3, 1.0), g).value < 1


def test_certificate_on_fitted_model(rng):
    from glrm.fit import FitConfig, fit
    from glrm.initialization import init_svd
    A = _separated(rng)
    p = qrpca_problem(A, 3, 1.0)
    f, _ = fit(p, init_svd(p), FitConfig(max_iters=5000, tol=1e-12))
    assert certify_global(p, f).certified


def test_certificate_refusals(rng):
    A = rng.normal(size=(6, 5))
    t = DataTable.from_array(A)
    f = Factors(rng.normal(size=(6, 2)), rng.normal(size=(2, 5)))
    with pytest.raises(CertificateError):
        certify_global(GlrmProblem(t, 2, [Quadratic()] * 5, QuadraticReg(1), QuadraticReg(1), offset=True),
                       Factors(np.ones((6, 3)), np.ones((3, 5))))
    with pytest.raises(CertificateError):
        certify_global(GlrmProblem(t, 2, [Quadratic()] * 5, L1Reg(1), L1Reg(1)), f)
    with pytest.raises(CertificateError):
        certify_global(GlrmProblem(t, 2, [Quadratic()] * 5, QuadraticReg(1), QuadraticReg(2)), f)
    with pytest.raises(CertificateError):
        certify_global(GlrmProblem(t, 2, [Quadratic()] * 5, QuadraticReg(0), QuadraticReg(0)), f)
    pos = DataTable.from_array(np.abs(A) + 0.1)
    with pytest.raises(CertificateError, match="convex"):
        certify_global(GlrmProblem(pos, 2, [Logarithmic()] * 5, QuadraticReg(1), QuadraticReg(1)),
                       Factors(np.abs(f.X), np.abs(f.Y)))
    # hinge exactly at its kink
    B = DataTable.from_array(np.ones((2, 2)), Boolean())
    Xk, Yk = np.ones((2, 1)), np.ones((1, 2))
    with pytest.raises(CertificateError, match="kink"):
        certify_global(GlrmProblem(B, 1, [Hinge()] * 2, QuadraticReg(1), QuadraticReg(1)), Factors(Xk, Yk))


def test_certificate_smooth_nonquadratic_loss(rng):
    A = _separated(rng)
    t = DataTable.from_array(A)
    p = GlrmProblem(t, 3, [Huber()] * A.shape[1], QuadraticReg(1.0), QuadraticReg(1.0))
    c = certify_global(p, Factors(np.zeros((15, 3)), np.zeros((3, 12))))
    assert not c.certified
