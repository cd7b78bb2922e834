"""Per-entry loss functions L(u, a).

Every loss acts on batches: ``u`` is an array of shape (N,) for scalar losses
or (N, d) for losses with embedding dimension d > 1, and ``a`` holds N
feature values in the column's storage format (floats for scalar kinds and
levels, (N, 2) arrays for intervals, (N, d) arrays for permutations, an
object array of pair lists for comparisons). Levels and permutation entries
are 1-based, as stored in :class:`glrm.data.DataTable`.

Subgradient conventions at kinks: the hinge family uses strict inequalities
(an inactive side contributes 0), and l1, quantile and fractional losses
return 0 where u equals the data value.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, fields
from typing import ClassVar

import numpy as np

from .data import (Boolean, Categorical, Comparisons, FeatureKind, Interval, Ordinal,
                   Permutation, Real)

VAR_EPS = 1e-12
MU_MAX = 1e3
_POS_LO = 1e-12


class LossDomainError(ValueError):
    def __init__(self, loss, what):
        self.loss = loss.name
        super().__init__(f"{loss.name} loss: {what}")


def _relu(x):
    return np.maximum(x, 0.0)


def _step(x):
    return (x > 0).astype(float)


@dataclass(frozen=True)
class Loss:
    name: ClassVar[str] = "loss"
    convex: ClassVar[bool] = True
    differentiable: ClassVar[bool] = False
    piecewise_linear: ClassVar[bool] = False
    positive_u: ClassVar[bool] = False
    finite_domain: ClassVar[bool] = False

    @property
    def embed_dim(self) -> int:
        return 1

    # subclasses implement _value, _grad, impute
    def accepts(self, kind: FeatureKind) -> bool:
        return isinstance(kind, (Real, Boolean, Ordinal))

    def a_ok(self, a) -> np.ndarray:
        return np.isfinite(np.asarray(a, dtype=float))

    def u_ok(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        ok = np.isfinite(u)
        if self.positive_u:
            ok &= u > 0
        return ok if ok.ndim == 1 else ok.all(axis=1)

    def value(self, u, a, strict: bool = True) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        uok = self.u_ok(u)
        if strict:
            self._check(u, a, uok)
            return self._value(u, a)
        if uok.all():
            return self._value(u, a)
        out = np.full(len(uok), np.inf)
        if uok.any():
            sub = _take(a, uok)
            out[uok] = self._value(u[uok], sub)
        return out

    def grad(self, u, a, strict: bool = True) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if strict:
            self._check(u, a, self.u_ok(u))
        return self._grad(u, a)

    def _check(self, u, a, uok):
        if not np.all(uok):
            raise LossDomainError(self, "u outside the domain of the loss")
        if not np.all(self.a_ok(a)):
            raise LossDomainError(self, "data value outside the admissible domain")

    def candidates(self):
        """All feature values, for losses over a finite domain."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        out = {"name": self.name}
        for f in (x.name for x in fields(self)):
            out[f] = getattr(self, f)
        return out

    def label(self) -> str:
        params = [str(getattr(self, f)) for f in (x.name for x in fields(self))]
        return self.name if not params else f"{self.name}:{','.join(params)}"


def _take(a, mask):
    if isinstance(a, np.ndarray):
        return a[mask]
    return np.asarray(a, dtype=object)[mask]


# -- scalar losses for real data -------------------------------------------


@dataclass(frozen=True)
class Quadratic(Loss):
    name: ClassVar[str] = "quadratic"
    differentiable: ClassVar[bool] = True

    def _value(self, u, a):
        return (u - a) ** 2

    def _grad(self, u, a):
        return 2.0 * (u - a)

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


@dataclass(frozen=True)
class L1(Loss):
    name: ClassVar[str] = "l1"
    piecewise_linear: ClassVar[bool] = True

    def _value(self, u, a):
        return np.abs(u - a)

    def _grad(self, u, a):
        return np.sign(u - a)

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


def huber(x):
    ax = np.abs(x)
    return np.where(ax <= 1.0, 0.5 * x * x, ax - 0.5)


@dataclass(frozen=True)
class Huber(Loss):
    name: ClassVar[str] = "huber"
    differentiable: ClassVar[bool] = True

    def _value(self, u, a):
        return huber(u - a)

    def _grad(self, u, a):
        return np.clip(u - a, -1.0, 1.0)

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


@dataclass(frozen=True)
class Quantile(Loss):
    name: ClassVar[str] = "quantile"
    piecewise_linear: ClassVar[bool] = True
    alpha: float = 0.5

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("quantile alpha must lie in (0, 1)")

    def _value(self, u, a):
        return self.alpha * _relu(a - u) + (1 - self.alpha) * _relu(u - a)

    def _grad(self, u, a):
        return np.where(u > a, 1 - self.alpha, np.where(u < a, -self.alpha, 0.0))

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


class _PositiveData:
    def a_ok(self, a):
        a = np.asarray(a, dtype=float)
        return np.isfinite(a) & (a > 0)

    def accepts(self, kind):
        return isinstance(kind, (Real, Ordinal))


@dataclass(frozen=True)
class Fractional(_PositiveData, Loss):
    name: ClassVar[str] = "fractional"
    positive_u: ClassVar[bool] = True

    def _value(self, u, a):
        return np.maximum((a - u) / u, (u - a) / a)

    def _grad(self, u, a):
        left, right = (a - u) / u, (u - a) / a
        return np.where(left > right, -a / u ** 2, np.where(left < right, 1.0 / a, 0.0))

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


@dataclass(frozen=True)
class Logarithmic(_PositiveData, Loss):
    name: ClassVar[str] = "log"
    convex: ClassVar[bool] = False
    differentiable: ClassVar[bool] = True
    positive_u: ClassVar[bool] = True

    def _value(self, u, a):
        return np.log(u / a) ** 2

    def _grad(self, u, a):
        return 2.0 * np.log(u / a) / u

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


def _xlogx(a):
    a = np.asarray(a, dtype=float)
    return np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)), 0.0)


@dataclass(frozen=True)
class PoissonExp(Loss):
    """exp(u) - a u + a log a - a, for nonnegative counts a."""

    name: ClassVar[str] = "poisson"
    differentiable: ClassVar[bool] = True

    def accepts(self, kind):
        return isinstance(kind, (Real, Ordinal))

    def a_ok(self, a):
        a = np.asarray(a, dtype=float)
        return np.isfinite(a) & (a >= 0)

    def _value(self, u, a):
        return np.exp(u) - a * u + _xlogx(a) - a

    def _grad(self, u, a):
        return np.exp(u) - a

    def impute(self, u):
        return np.exp(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class KLDivergence(_PositiveData, Loss):
    name: ClassVar[str] = "kl"
    differentiable: ClassVar[bool] = True
    positive_u: ClassVar[bool] = True

    def _value(self, u, a):
        return a * np.log(a / u) - a + u

    def _grad(self, u, a):
        return 1.0 - a / u

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


@dataclass(frozen=True)
class ItakuraSaito(_PositiveData, Loss):
    """a/u - log(a/u) - 1."""

    name: ClassVar[str] = "is"
    convex: ClassVar[bool] = False
    differentiable: ClassVar[bool] = True
    positive_u: ClassVar[bool] = True

    def _value(self, u, a):
        r = a / u
        return r - np.log(r) - 1.0

    def _grad(self, u, a):
        return 1.0 / u - a / u ** 2

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


@dataclass(frozen=True)
class BetaDivergence(_PositiveData, Loss):
    name: ClassVar[str] = "beta"
    differentiable: ClassVar[bool] = True
    positive_u: ClassVar[bool] = True
    beta: float = 2.0

    def __post_init__(self):
        if self.beta in (0.0, 1.0):
            raise ValueError("beta divergence is singular at beta = 0 or 1; use 'is' or 'kl'")

    @property
    def convex(self):
        return 1 <= self.beta <= 2

    def _value(self, u, a):
        b = self.beta
        return a ** b / (b * (b - 1)) + u ** b / b - a * u ** (b - 1) / (b - 1)

    def _grad(self, u, a):
        b = self.beta
        return u ** (b - 1) - a * u ** (b - 2)

    def impute(self, u):
        return np.asarray(u, dtype=float).copy()


# -- losses for abstract scalar data -----------------------------------------


class _BooleanData:
    finite_domain: ClassVar[bool] = True

    def accepts(self, kind):
        return isinstance(kind, Boolean)

    def a_ok(self, a):
        return np.isin(np.asarray(a, dtype=float), (-1.0, 1.0))

    def candidates(self):
        return [-1.0, 1.0]

    def impute(self, u):
        return np.where(np.asarray(u, dtype=float) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class Hinge(_BooleanData, Loss):
    name: ClassVar[str] = "hinge"
    piecewise_linear: ClassVar[bool] = True

    def _value(self, u, a):
        return _relu(1.0 - a * u)

    def _grad(self, u, a):
        return -a * _step(1.0 - a * u)


@dataclass(frozen=True)
class Logistic(_BooleanData, Loss):
    name: ClassVar[str] = "logistic"
    differentiable: ClassVar[bool] = True

    def _value(self, u, a):
        return np.logaddexp(0.0, -a * u)

    def _grad(self, u, a):
        # -a / (1 + exp(a u)) without overflow
        return -a * np.exp(-np.logaddexp(0.0, a * u))


class _LevelData:
    finite_domain: ClassVar[bool] = True

    def a_ok(self, a):
        a = np.asarray(a, dtype=float)
        return (a == np.round(a)) & (a >= 1) & (a <= self.d)

    def candidates(self):
        return [float(v) for v in range(1, self.d + 1)]


@dataclass(frozen=True)
class OrdinalHinge(_LevelData, Loss):
    """Sum of hinges pushing u between the levels around a (empty sums are 0)."""

    name: ClassVar[str] = "ordinal_hinge"
    piecewise_linear: ClassVar[bool] = True
    d: int = 2

    def accepts(self, kind):
        return isinstance(kind, Ordinal) and kind.levels == self.d

    def _parts(self, u, a):
        lv = np.arange(1, self.d + 1, dtype=float)
        a = np.asarray(a, dtype=float)[:, None]
        u = u[:, None]
        lower = lv < a
        upper = lv > a
        return lv, u, lower, upper

    def _value(self, u, a):
        lv, u, lower, upper = self._parts(u, a)
        return (np.where(lower, _relu(1 - u + lv), 0.0)
                + np.where(upper, _relu(1 + u - lv), 0.0)).sum(axis=1)

    def _grad(self, u, a):
        lv, u, lower, upper = self._parts(u, a)
        return (np.where(lower, -_step(1 - u + lv), 0.0)
                + np.where(upper, _step(1 + u - lv), 0.0)).sum(axis=1)

    def impute(self, u):
        return _enumerate_argmin(self, np.asarray(u, dtype=float))


@dataclass(frozen=True)
class IntervalLoss(Loss):
    """Deadzone-linear loss: zero inside [a1, a2], linear outside."""

    name: ClassVar[str] = "interval"
    piecewise_linear: ClassVar[bool] = True

    def accepts(self, kind):
        return isinstance(kind, Interval)

    def a_ok(self, a):
        a = np.asarray(a, dtype=float)
        return np.isfinite(a).all(axis=1) & (a[:, 0] <= a[:, 1])

    def _value(self, u, a):
        a = np.asarray(a, dtype=float)
        return np.maximum(_relu(a[:, 0] - u), _relu(u - a[:, 1]))

    def _grad(self, u, a):
        a = np.asarray(a, dtype=float)
        return np.where(u < a[:, 0], -1.0, np.where(u > a[:, 1], 1.0, 0.0))

    def impute(self, u):
        u = np.asarray(u, dtype=float)
        return np.column_stack([u, u])


# -- multi-dimensional losses --------------------------------------------------


class _MultiDim:
    @property
    def embed_dim(self):
        return self.d

    def _onehot(self, a):
        idx = np.asarray(a, dtype=float).astype(int) - 1
        oh = np.zeros((len(idx), self.d), dtype=bool)
        oh[np.arange(len(idx)), idx] = True
        return oh


@dataclass(frozen=True)
class OneVsAll(_MultiDim, _LevelData, Loss):
    name: ClassVar[str] = "onevsall"
    piecewise_linear: ClassVar[bool] = True
    d: int = 2

    def accepts(self, kind):
        return isinstance(kind, Categorical) and kind.levels == self.d

    def _value(self, u, a):
        oh = self._onehot(a)
        return np.where(oh, _relu(1 - u), _relu(1 + u)).sum(axis=1)

    def _grad(self, u, a):
        oh = self._onehot(a)
        return np.where(oh, -_step(1 - u), _step(1 + u))

    def impute(self, u):
        return np.argmax(np.atleast_2d(u), axis=1).astype(float) + 1


def _max_other(u, oh):
    """Value and (lowest) index of the largest entry of each row outside ``oh``."""
    masked = np.where(oh, -np.inf, u)
    idx = np.argmax(masked, axis=1)
    return masked[np.arange(len(u)), idx], idx


@dataclass(frozen=True)
class CrammerSinger(_MultiDim, _LevelData, Loss):
    name: ClassVar[str] = "crammer_singer"
    piecewise_linear: ClassVar[bool] = True
    d: int = 2

    def accepts(self, kind):
        return isinstance(kind, Categorical) and kind.levels == self.d

    def _value(self, u, a):
        oh = self._onehot(a)
        other, _ = _max_other(u, oh)
        return _relu(1 - u[oh] + other)

    def _grad(self, u, a):
        oh = self._onehot(a)
        other, idx = _max_other(u, oh)
        active = (1 - u[oh] + other) > 0
        g = np.zeros_like(u)
        rows = np.arange(len(u))
        act = active.astype(float)
        g[oh] = -act
        g[rows, idx] += act
        return g

    def impute(self, u):
        return np.argmax(np.atleast_2d(u), axis=1).astype(float) + 1


@dataclass(frozen=True)
class MultiOrdinal(_LevelData, Loss):
    """One hinge per threshold l = 1..d-1, separating levels <= l from > l."""

    name: ClassVar[str] = "multi_ordinal"
    piecewise_linear: ClassVar[bool] = True
    d: int = 2

    @property
    def embed_dim(self):
        return self.d - 1

    def accepts(self, kind):
        return isinstance(kind, Ordinal) and kind.levels == self.d

    def _signs(self, a):
        thr = np.arange(1, self.d, dtype=float)
        return np.where(np.asarray(a, dtype=float)[:, None] > thr, 1.0, -1.0)

    def _value(self, u, a):
        u2 = u.reshape(len(u), -1)
        return _relu(1 - self._signs(a) * u2).sum(axis=1)

    def _grad(self, u, a):
        s = self._signs(a)
        g = -s * _step(1 - s * u.reshape(len(u), -1))
        return g.reshape(u.shape)

    def impute(self, u):
        u = np.asarray(u, dtype=float)
        return _enumerate_argmin(self, u if self.d > 2 else u.reshape(-1))


class _PermutationData:
    finite_domain: ClassVar[bool] = True

    @property
    def embed_dim(self):
        return self.d

    def accepts(self, kind):
        return isinstance(kind, Permutation) and kind.levels == self.d

    def a_ok(self, a):
        a = np.asarray(a, dtype=float)
        return np.all(np.sort(a, axis=1) == np.arange(1, self.d + 1), axis=1)

    def candidates(self):
        return [tuple(p) for p in itertools.permutations(range(1, self.d + 1))]

    def impute(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.argsort(-u, axis=1, kind="stable").astype(float) + 1

    def _ordered(self, u, a):
        idx = np.asarray(a, dtype=float).astype(int) - 1
        return np.take_along_axis(u, idx, axis=1), idx


@dataclass(frozen=True)
class PermutationLoss(_PermutationData, Loss):
    name: ClassVar[str] = "permutation"
    piecewise_linear: ClassVar[bool] = True
    d: int = 2

    def _value(self, u, a):
        v, _ = self._ordered(u, a)
        return _relu(1 - v[:, :-1] + v[:, 1:]).sum(axis=1)

    def _grad(self, u, a):
        v, idx = self._ordered(u, a)
        act = _step(1 - v[:, :-1] + v[:, 1:])
        gv = np.zeros_like(v)
        gv[:, :-1] -= act
        gv[:, 1:] += act
        g = np.zeros_like(u)
        np.put_along_axis(g, idx, gv, axis=1)
        return g


@dataclass(frozen=True)
class RankingFull(_PermutationData, Loss):
    name: ClassVar[str] = "ranking"
    piecewise_linear: ClassVar[bool] = True
    d: int = 2

    def _pairs(self):
        i, j = np.triu_indices(self.d, k=1)
        return i, j

    def _value(self, u, a):
        v, _ = self._ordered(u, a)
        i, j = self._pairs()
        return _relu(1 - v[:, i] + v[:, j]).sum(axis=1)

    def _grad(self, u, a):
        v, idx = self._ordered(u, a)
        i, j = self._pairs()
        act = _step(1 - v[:, i] + v[:, j])
        gv = np.zeros_like(v)
        for col in range(len(i)):
            gv[:, i[col]] -= act[:, col]
            gv[:, j[col]] += act[:, col]
        g = np.zeros_like(u)
        np.put_along_axis(g, idx, gv, axis=1)
        return g


@dataclass(frozen=True)
class RankingPairwise(Loss):
    """Hinge on each observed comparison (p above q); unobserved pairs cost 0.

    Imputation returns the full ordering sort(u), as for the permutation loss.
    """

    name: ClassVar[str] = "ranking_pairs"
    piecewise_linear: ClassVar[bool] = True
    d: int = 2

    @property
    def embed_dim(self):
        return self.d

    def accepts(self, kind):
        return isinstance(kind, Comparisons) and kind.levels == self.d

    def a_ok(self, a):
        return np.array([all(1 <= p <= self.d and 1 <= q <= self.d and p != q for p, q in cell)
                         for cell in a], dtype=bool)

    def _value(self, u, a):
        out = np.zeros(len(u))
        for n, cell in enumerate(a):
            for p, q in cell:
                out[n] += max(0.0, 1 - u[n, p - 1] + u[n, q - 1])
        return out

    def _grad(self, u, a):
        g = np.zeros_like(u)
        for n, cell in enumerate(a):
            for p, q in cell:
                if 1 - u[n, p - 1] + u[n, q - 1] > 0:
                    g[n, p - 1] -= 1
                    g[n, q - 1] += 1
        return g

    def impute(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.argsort(-u, axis=1, kind="stable").astype(float) + 1


def _enumerate_argmin(loss, u):
    """Level minimizing loss(u, level) for each row; ties go to the lowest level."""
    cands = loss.candidates()
    n = len(u)
    best = np.full(n, np.inf)
    arg = np.zeros(n)
    for c in cands:
        v = loss._value(u, np.full(n, c))
        better = v < best
        best[better] = v[better]
        arg[better] = c
    return arg


# -- catalog -------------------------------------------------------------------

CATALOG: dict[str, type[Loss]] = {cls.name: cls for cls in [
    Quadratic, L1, Huber, Quantile, Fractional, Logarithmic, PoissonExp, KLDivergence,
    ItakuraSaito, BetaDivergence, Hinge, Logistic, OrdinalHinge, IntervalLoss, OneVsAll,
    CrammerSinger, MultiOrdinal, PermutationLoss, RankingFull, RankingPairwise]}

_LEVELED = {"ordinal_hinge", "onevsall", "crammer_singer", "multi_ordinal", "permutation",
            "ranking", "ranking_pairs"}


def loss_from_dict(d: dict) -> Loss:
    d = dict(d)
    cls = CATALOG[d.pop("name")]
    return cls(**d)


def make_loss(name: str, kind: FeatureKind | None = None, param: float | None = None) -> Loss:
    """Build a catalog loss by name; level counts come from ``kind``."""
    if name not in CATALOG:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(CATALOG)}")
    cls = CATALOG[name]
    if name in _LEVELED:
        if kind is None or kind.levels is None:
            raise ValueError(f"loss {name!r} needs a leveled column kind")
        return cls(d=int(kind.levels))
    if name == "quantile":
        return cls(alpha=0.5 if param is None else float(param))
    if name == "beta":
        return cls(beta=2.0 if param is None else float(param))
    return cls()


def default_loss(kind: FeatureKind) -> Loss:
    """Automatic choice per kind: huber, hinge, ordinal hinge, one-vs-all."""
    if isinstance(kind, Boolean):
        return Hinge()
    if isinstance(kind, Ordinal):
        return OrdinalHinge(kind.levels)
    if isinstance(kind, Categorical):
        return OneVsAll(kind.levels)
    if isinstance(kind, Interval):
        return IntervalLoss()
    if isinstance(kind, Permutation):
        return PermutationLoss(kind.levels)
    if isinstance(kind, Comparisons):
        return RankingPairwise(kind.levels)
    return Huber()


# -- single-entry convenience ----------------------------------------------------


def _batch_u(spec: Loss, u):
    u = np.asarray(u, dtype=float)
    if spec.embed_dim == 1:
        u = u.reshape(1)
        return u
    u = u.reshape(1, spec.embed_dim)
    return u


def _batch_a(spec: Loss, a):
    if isinstance(spec, RankingPairwise):
        arr = np.empty(1, dtype=object)
        arr[0] = tuple(tuple(p) for p in a)
        return arr
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a.reshape(1)
    return a.reshape(1, -1)


def loss_value(spec: Loss, u, a) -> float:
    return float(spec.value(_batch_u(spec, u), _batch_a(spec, a))[0])


def loss_grad(spec: Loss, u, a):
    g = spec.grad(_batch_u(spec, u), _batch_a(spec, a))
    return float(g[0]) if spec.embed_dim == 1 else g[0].copy()


def loss_impute(spec: Loss, u):
    out = spec.impute(_batch_u(spec, u))
    out = out[0]
    if isinstance(spec, (PermutationLoss, RankingFull, RankingPairwise)):
        return tuple(int(t) for t in out)
    if isinstance(spec, IntervalLoss):
        return (float(out[0]), float(out[1]))
    return float(out)


# -- column statistics ---------------------------------------------------------------

def _bisect(pred, lo, hi, tol):
    """Smallest t in [lo, hi] with pred(t) true, for pred monotone false -> true."""
    while hi - lo > tol * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _argmin_1d(loss: Loss, g, tol=1e-13):
    """Minimize a scalar function whose derivative ``g`` changes sign once.

    The summed losses of the catalog are all unimodal in u, so the minimizer
    set is the interval between sup{g < 0} and inf{g > 0}; its midpoint is
    returned (the median for l1, 0 for a balanced hinge column). When that
    set is unbounded the finite edge is used, or the box edge if none, and a
    warning is issued.
    """
    lo = _POS_LO if loss.positive_u else -MU_MAX
    hi = MU_MAX
    neg_lo, pos_hi = g(lo) < 0, g(hi) > 0
    left = _bisect(lambda t: g(t) >= 0, lo, hi, tol) if neg_lo else None
    right = _bisect(lambda t: g(t) > 0, lo, hi, tol) if pos_hi else None
    if left is not None and right is not None:
        return 0.5 * (left + right)
    warnings.warn(f"{loss.name}: column minimizer is unbounded within [{lo:g}, {hi:g}]",
                  RuntimeWarning, stacklevel=3)
    if left is None and right is None:
        return 0.5 * (lo + hi) if not loss.positive_u else 1.0
    if left is None:
        # g >= 0 everywhere: decreasing toward lo, or flat until right
        return right if loss.piecewise_linear and g(lo) == 0 else lo
    return left if loss.piecewise_linear and g(hi) == 0 else hi


def column_stats(spec: Loss, values, n_j: int | None = None):
    """Generalized mean and variance of one column under ``spec``.

    ``mu`` minimizes the summed loss over the observed values and
    ``sigma2`` is that minimal sum divided by ``n_j - 1``, floored at
    ``VAR_EPS``. Scalar minimizations use bisection on the sign of the summed subgradient; losses
    with embedding dimension > 1 are minimized coordinate-wise.
    """
    if isinstance(spec, RankingPairwise):
        vals = np.empty(len(values), dtype=object)
        vals[:] = list(values)
    else:
        vals = np.asarray(values, dtype=float)
    n = len(vals) if n_j is None else n_j
    if n < 2:
        raise ValueError("column statistics need at least two observations")
    if not np.all(spec.a_ok(vals)):
        raise LossDomainError(spec, "data value outside the admissible domain")
    N = len(vals)
    dim = spec.embed_dim
    if dim == 1:
        def g(t):
            return float(spec._grad(np.full(N, t), vals).sum())
        mu = np.array([_argmin_1d(spec, g)])
        total = float(spec._value(np.full(N, mu[0]), vals).sum())
    else:
        mu = np.zeros(dim)

        def total_at(vec):
            return float(spec._value(np.tile(vec, (N, 1)), vals).sum())

        for _sweep in range(25):
            before = mu.copy()
            for c in range(dim):
                def g(t, c=c):
                    trial = mu.copy()
                    trial[c] = t
                    return float(spec._grad(np.tile(trial, (N, 1)), vals)[:, c].sum())
                mu[c] = _argmin_1d(spec, g)
            if np.max(np.abs(mu - before)) < 1e-9:
                break
        total = total_at(mu)
    sigma2 = max(total / (n - 1), VAR_EPS)
    return mu, sigma2
