"""Row and column regularizers with values and proximal operators.

``value`` and ``prox`` act on batches: ``V`` has shape (N, p), one vector
per row (a row of X, or a flattened column block of Y). ``prox(V, alpha)``
returns argmin_x alpha * r(x) + 0.5 * ||x - v||^2 for each row; ``alpha`` is
a scalar or an array of N positive step sizes. Set indicators return 0 or
inf and their prox is the Euclidean projection. Argmax ties go to the
lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import ClassVar

import numpy as np

_SIMPLEX_TOL = 1e-12


def _rows(V):
    V = np.asarray(V, dtype=float)
    return V.reshape(1, -1) if V.ndim == 1 else V


def _col(alpha, n):
    a = np.asarray(alpha, dtype=float)
    return a.reshape(-1, 1) if a.ndim else np.full((n, 1), float(a))


def _indicator(ok):
    return np.where(ok, 0.0, np.inf)


@dataclass(frozen=True)
class Reg:
    name: ClassVar[str] = "reg"
    convex: ClassVar[bool] = True
    is_indicator: ClassVar[bool] = False
    orthogonally_invariant: ClassVar[bool] = False
    finite_candidates: ClassVar[bool] = False

    @property
    def gamma(self):
        return getattr(self, "g", None)

    def with_gamma(self, gamma: float) -> "Reg":
        """Copy with the weight replaced; indicators are returned unchanged."""
        if "g" in {x.name for x in fields(self)}:
            return replace(self, g=float(gamma))
        return self

    def to_dict(self) -> dict:
        out = {"name": self.name}
        for f in (x.name for x in fields(self)):
            v = getattr(self, f)
            out[f] = v.to_dict() if isinstance(v, Reg) else (list(v) if isinstance(v, tuple) else v)
        return out

    def label(self) -> str:
        return self.name

    def value(self, V) -> np.ndarray:
        return self._value(_rows(V))

    def prox(self, V, alpha) -> np.ndarray:
        V = _rows(V)
        return self._prox(V, _col(alpha, len(V)))


@dataclass(frozen=True)
class Zero(Reg):
    name: ClassVar[str] = "zero"
    orthogonally_invariant: ClassVar[bool] = True

    def _value(self, V):
        return np.zeros(len(V))

    def _prox(self, V, a):
        return V.copy()


@dataclass(frozen=True)
class QuadraticReg(Reg):
    """g * ||x||^2."""

    name: ClassVar[str] = "quadreg"
    orthogonally_invariant: ClassVar[bool] = True
    g: float = 1.0

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("regularization weight must be nonnegative")

    def _value(self, V):
        return self.g * np.einsum("ij,ij->i", V, V)

    def _prox(self, V, a):
        return V / (1.0 + 2.0 * a * self.g)


@dataclass(frozen=True)
class L1Reg(Reg):
    name: ClassVar[str] = "l1reg"
    g: float = 1.0

    def __post_init__(self):
        if self.g < 0:
            raise ValueError("regularization weight must be nonnegative")

    def _value(self, V):
        return self.g * np.abs(V).sum(axis=1)

    def _prox(self, V, a):
        return np.sign(V) * np.maximum(np.abs(V) - a * self.g, 0.0)


@dataclass(frozen=True)
class NonnegInd(Reg):
    name: ClassVar[str] = "nonneg"
    is_indicator: ClassVar[bool] = True

    def _value(self, V):
        return _indicator((V >= 0).all(axis=1))

    def _prox(self, V, a):
        return np.maximum(V, 0.0)


@dataclass(frozen=True)
class BoxInd(Reg):
    name: ClassVar[str] = "box"
    is_indicator: ClassVar[bool] = True
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError("box needs lo <= hi")

    def _value(self, V):
        return _indicator(((V >= self.lo) & (V <= self.hi)).all(axis=1))

    def _prox(self, V, a):
        return np.clip(V, self.lo, self.hi)


def project_simplex(V):
    """Euclidean projection of each row onto the probability simplex."""
    V = _rows(V)
    p = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ind = np.arange(1, p + 1)
    cond = U - css / ind > 0
    rho = p - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(V)), rho] / (rho + 1)
    return np.maximum(V - theta[:, None], 0.0)


@dataclass(frozen=True)
class SimplexInd(Reg):
    name: ClassVar[str] = "simplex"
    is_indicator: ClassVar[bool] = True

    def _value(self, V):
        return _indicator((V >= 0).all(axis=1) & (np.abs(V.sum(axis=1) - 1) <= _SIMPLEX_TOL * max(1, V.shape[1])))

    def _prox(self, V, a):
        return project_simplex(V)


def _card_le1(V):
    return (V != 0).sum(axis=1) <= 1


@dataclass(frozen=True)
class OneSparseInd(Reg):
    """card(x) <= 1."""

    name: ClassVar[str] = "onesparse"
    convex: ClassVar[bool] = False
    is_indicator: ClassVar[bool] = True
    finite_candidates: ClassVar[bool] = True

    def _value(self, V):
        return _indicator(_card_le1(V))

    def _prox(self, V, a):
        idx = np.argmax(np.abs(V), axis=1)
        out = np.zeros_like(V)
        r = np.arange(len(V))
        out[r, idx] = V[r, idx]
        return out

    def supports(self, p):
        return [np.array([l]) for l in range(p)]


@dataclass(frozen=True)
class OneSparseNonnegInd(Reg):
    """card(x) <= 1 and x >= 0."""

    name: ClassVar[str] = "onesparse_nonneg"
    convex: ClassVar[bool] = False
    is_indicator: ClassVar[bool] = True
    finite_candidates: ClassVar[bool] = True

    def _value(self, V):
        return _indicator(_card_le1(V) & (V >= 0).all(axis=1))

    def _prox(self, V, a):
        P = np.maximum(V, 0.0)
        idx = np.argmax(P, axis=1)
        out = np.zeros_like(V)
        r = np.arange(len(V))
        out[r, idx] = P[r, idx]
        return out

    def supports(self, p):
        return [np.array([l]) for l in range(p)]


@dataclass(frozen=True)
class UnitOneSparseInd(Reg):
    """x = e_l for some l (cluster assignment)."""

    name: ClassVar[str] = "unitonesparse"
    convex: ClassVar[bool] = False
    is_indicator: ClassVar[bool] = True
    finite_candidates: ClassVar[bool] = True

    def _value(self, V):
        ones = (V == 1).sum(axis=1) == 1
        zeros = (V == 0).sum(axis=1) == V.shape[1] - 1
        return _indicator(ones & zeros)

    def _prox(self, V, a):
        out = np.zeros_like(V)
        out[np.arange(len(V)), np.argmax(V, axis=1)] = 1.0
        return out


@dataclass(frozen=True)
class BlockSparseInd(Reg):
    """Support inside a single block of a partition of the coordinates.

    ``sizes`` lists consecutive block sizes; empty means blocks of size 1.
    """

    name: ClassVar[str] = "blocksparse"
    convex: ClassVar[bool] = False
    is_indicator: ClassVar[bool] = True
    finite_candidates: ClassVar[bool] = True
    sizes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))

    def supports(self, p):
        if not self.sizes:
            return [np.array([l]) for l in range(p)]
        if sum(self.sizes) != p:
            raise ValueError(f"block sizes {self.sizes} do not partition {p} coordinates")
        edges = np.cumsum((0,) + self.sizes)
        return [np.arange(edges[b], edges[b + 1]) for b in range(len(self.sizes))]

    def _value(self, V):
        blocks = self.supports(V.shape[1])
        used = np.stack([(V[:, b] != 0).any(axis=1) for b in blocks], axis=1)
        return _indicator(used.sum(axis=1) <= 1)

    def _prox(self, V, a):
        blocks = self.supports(V.shape[1])
        norms = np.stack([np.einsum("ij,ij->i", V[:, b], V[:, b]) for b in blocks], axis=1)
        best = np.argmax(norms, axis=1)
        out = np.zeros_like(V)
        for n, b in enumerate(blocks):
            sel = best == n
            out[np.ix_(sel, b)] = V[np.ix_(sel, b)]
        return out


@dataclass(frozen=True)
class MaxNormInd(Reg):
    """||x||^2 <= mu."""

    name: ClassVar[str] = "maxnorm"
    is_indicator: ClassVar[bool] = True
    orthogonally_invariant: ClassVar[bool] = True
    mu: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("max-norm bound must be positive")

    def _value(self, V):
        return _indicator(np.einsum("ij,ij->i", V, V) <= self.mu * (1 + 1e-12))

    def _prox(self, V, a):
        nrm = np.sqrt(np.einsum("ij,ij->i", V, V))
        scale = np.where(nrm > np.sqrt(self.mu), np.sqrt(self.mu) / np.maximum(nrm, 1e-300), 1.0)
        return V * scale[:, None]


@dataclass(frozen=True)
class L2Unsquared(Reg):
    """g * ||x||_2, which zeroes whole vectors (feature selection)."""

    name: ClassVar[str] = "l2"
    orthogonally_invariant: ClassVar[bool] = True
    g: float = 1.0

    def _value(self, V):
        return self.g * np.sqrt(np.einsum("ij,ij->i", V, V))

    def _prox(self, V, a):
        nrm = np.sqrt(np.einsum("ij,ij->i", V, V))[:, None]
        shrink = np.maximum(1.0 - a * self.g / np.maximum(nrm, 1e-300), 0.0)
        return V * shrink


@dataclass(frozen=True)
class L1PlusNonneg(Reg):
    name: ClassVar[str] = "l1_nonneg"
    g: float = 1.0

    def _value(self, V):
        return np.where((V >= 0).all(axis=1), self.g * V.sum(axis=1), np.inf)

    def _prox(self, V, a):
        return np.maximum(V - a * self.g, 0.0)


@dataclass(frozen=True)
class FixedEntry(Reg):
    """Pins coordinate ``index`` to ``value`` and applies ``inner`` to the rest.

    Used for offsets, where the last column of X is held at 1.
    """

    name: ClassVar[str] = "fixed_first"
    inner: Reg = Zero()
    value_: float = 1.0
    index: int = -1

    @property
    def convex(self):
        return self.inner.convex

    @property
    def orthogonally_invariant(self):
        return self.inner.orthogonally_invariant

    @property
    def is_indicator(self):
        return self.inner.is_indicator

    @property
    def finite_candidates(self):
        return self.inner.finite_candidates

    @property
    def gamma(self):
        return self.inner.gamma

    def with_gamma(self, gamma):
        return replace(self, inner=self.inner.with_gamma(gamma))

    def label(self):
        return f"{self.name}({self.inner.label()})"

    def _rest(self, p):
        keep = np.ones(p, dtype=bool)
        keep[self.index] = False
        return keep

    def _value(self, V):
        keep = self._rest(V.shape[1])
        pinned = V[:, ~keep][:, 0] == self.value_
        return np.where(pinned, self.inner._value(V[:, keep]), np.inf)

    def _prox(self, V, a):
        keep = self._rest(V.shape[1])
        out = np.empty_like(V)
        out[:, keep] = self.inner._prox(V[:, keep], a)
        out[:, ~keep] = self.value_
        return out


CATALOG: dict[str, type[Reg]] = {cls.name: cls for cls in [
    Zero, QuadraticReg, L1Reg, NonnegInd, BoxInd, OneSparseInd, UnitOneSparseInd, SimplexInd,
    BlockSparseInd, MaxNormInd, L2Unsquared, OneSparseNonnegInd, L1PlusNonneg, FixedEntry]}


def make_reg(name: str, gamma: float | None = None, **params) -> Reg:
    """Catalog regularizer by name; ``gamma`` sets the weight where there is one."""
    if name not in CATALOG:
        raise ValueError(f"unknown regularizer {name!r}; choose from {sorted(CATALOG)}")
    cls = CATALOG[name]
    if "g" in {x.name for x in fields(cls)} and gamma is not None:
        params["g"] = float(gamma)
    return cls(**params)


def parse_reg(text: str, gamma: float | None = None) -> Reg:
    """Parse ``name`` or ``name:p1,p2`` (box:lo,hi; maxnorm:mu; blocksparse:2,3)."""
    name, _, rest = text.partition(":")
    args = [float(t) for t in rest.split(",")] if rest else []
    if name == "box" and args:
        return BoxInd(*args)
    if name == "maxnorm" and args:
        return MaxNormInd(args[0])
    if name == "blocksparse" and args:
        return BlockSparseInd(tuple(int(t) for t in args))
    if args and name in ("quadreg", "l1reg", "l2", "l1_nonneg"):
        return make_reg(name, args[0])
    return make_reg(name, gamma)


def reg_from_dict(d: dict) -> Reg:
    d = dict(d)
    cls = CATALOG[d.pop("name")]
    if "inner" in d:
        d["inner"] = reg_from_dict(d["inner"])
    if "sizes" in d:
        d["sizes"] = tuple(d["sizes"])
    return cls(**d)


def reg_value(spec: Reg, v) -> float:
    return float(spec.value(np.ravel(np.asarray(v, dtype=float)))[0])


def reg_prox(spec: Reg, v, alpha: float):
    v = np.asarray(v, dtype=float)
    return spec.prox(v.ravel(), alpha)[0].reshape(v.shape)
