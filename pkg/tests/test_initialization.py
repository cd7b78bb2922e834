import numpy as np
import pytest

from glrm.data import Categorical, DataTable, Real
from glrm.initialization import (build_scaled_matrix, init_kmeanspp, init_random, init_svd, initialize,
                                 project_feasible, top_k_svd)
from glrm.losses import OneVsAll, Quadratic
from glrm.model import GlrmProblem
from glrm.regularizers import NonnegInd, UnitOneSparseInd


def test_top_k_svd_matches_lapack(rng):
    A = rng.normal(size=(40, 25))
    U, s, Vt = top_k_svd(A, 5)
    s_ref = np.linalg.svd(A, compute_uv=False)[:5]
    np.testing.assert_allclose(s, s_ref, rtol=1e-7)
    np.testing.assert_allclose(U.T @ U, np.eye(5), atol=1e-10)
    Uf, sf, Vf = np.linalg.svd(A)
    # singular values converge quadratically faster than the subspace
    err = np.linalg.norm((U * s) @ Vt - (Uf[:, :5] * sf[:5]) @ Vf[:5]) / sf[0]
    assert err < 1e-4


def test_top_k_svd_rank_deficient(rng):
    A = rng.normal(size=(20, 2)) @ rng.normal(size=(2, 15))
    with pytest.warns(RuntimeWarning, match="rank"):
        U, s, Vt = top_k_svd(A, 4)
    assert s[2] == 0 and s[3] == 0 and not U[:, 2:].any()


def test_svd_init_is_truncated_svd(rng):
    A = rng.normal(size=(30, 12))
    p = GlrmProblem(DataTable.from_array(A), 3, [Quadratic()] * 12)
    f = init_svd(p)
    Uf, sf, Vf = np.linalg.svd(A)
    np.testing.assert_allclose(f.X @ f.Y, (Uf[:, :3] * sf[:3]) @ Vf[:3], atol=1e-6)


def test_scaled_matrix(rng):
    A = rng.normal(3.0, 2.0, size=(10, 4))
    A[0, 1] = np.nan
    p = GlrmProblem(DataTable.from_array(A), 2, [Quadratic()] * 4, offset=True, scaling=True)
    At, mu, sigma, known = build_scaled_matrix(p)
    assert known.all()
    np.testing.assert_allclose(mu, np.nanmean(A, axis=0))
    np.testing.assert_allclose(sigma, np.nanstd(A, axis=0, ddof=1))
    assert At[0, 1] == 0.0
    assert At[1, 1] == pytest.approx((A[1, 1] - mu[1]) / sigma[1] * 10 / 9)


def test_svd_offset_row_holds_means(rng):
    A = rng.normal(5.0, 1.0, size=(15, 6))
    p = GlrmProblem(DataTable.from_array(A), 2, [Quadratic()] * 6, offset=True)
    f = init_svd(p)
    assert (f.X[:, -1] == 1).all()
    np.testing.assert_allclose(f.Y[-1], A.mean(axis=0))


def test_categorical_encoding_columns():
    t = DataTable([np.array([1.0, 2.0, 3.0, 1.0])], [Categorical(3)])
    p = GlrmProblem(t, 1, [OneVsAll(3)])
    At, _, _, known = build_scaled_matrix(p)
    assert At.shape == (4, 3) and known.all()
    np.testing.assert_array_equal(At[0], [1.0, -1.0, -1.0])


def test_random_init_and_seed(rng):
    p = GlrmProblem(DataTable.from_array(rng.normal(size=(6, 4))), 2, offset=True)
    a, b = init_random(p, 3), init_random(p, 3)
    np.testing.assert_array_equal(a.X, b.X)
    assert (a.X[:, -1] == 1).all()


def test_kmeanspp(rng):
    A = np.vstack([rng.normal(0, 0.1, (10, 3)), rng.normal(5, 0.1, (10, 3))])
    p = GlrmProblem(DataTable.from_array(A), 2, [Quadratic()] * 3, UnitOneSparseInd())
    f = init_kmeanspp(p, seed=1)
    assert (f.X.sum(axis=1) == 1).all()
    # the two seeds land in different clusters, so assignments split the blocks
    assert len(set(f.X[:10].argmax(1))) == 1 and len(set(f.X[10:].argmax(1))) == 1
    assert f.X[0].argmax() != f.X[-1].argmax()
    with pytest.raises(ValueError):
        init_kmeanspp(GlrmProblem(DataTable.from_array(A[:1]), 2), 0)


def test_project_feasible(rng):
    p = GlrmProblem(DataTable.from_array(rng.normal(size=(5, 3))), 2, None, NonnegInd(), NonnegInd())
    f = project_feasible(p, init_random(p, 0))
    assert (f.X >= 0).all() and (f.Y >= 0).all()


def test_initialize_dispatch(rng):
    p = GlrmProblem(DataTable.from_array(rng.normal(size=(5, 3))), 2)
    for name in ("svd", "random", "kmeanspp"):
        f = initialize(p, name, 0)
        f.check(p)
    with pytest.raises(ValueError):
        initialize(p, "bogus")
