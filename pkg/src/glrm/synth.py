"""Synthetic data sets used by the experiments and the ``synth`` command."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Boolean, DataTable, Ordinal, Real


@dataclass
class Synthetic:
    truth: DataTable          # every cell
    observed: DataTable       # cells the model may see
    info: dict = field(default_factory=dict)

    @property
    def hidden(self) -> np.ndarray:
        """Cells present in the truth but not observed, as (i, j) pairs."""
        return np.argwhere(self.truth.mask & ~self.observed.mask)


def _gauss_factors(rng, m, n, k):
    return rng.standard_normal((m, k)), rng.standard_normal((k, n))


def boolean(seed=0, m=50, n=50, k=10) -> Synthetic:
    """A = sign(X Y) with standard normal factors, fully observed."""
    rng = np.random.default_rng(seed)
    X, Y = _gauss_factors(rng, m, n, k)
    A = np.where(X @ Y >= 0, 1.0, -1.0)
    t = DataTable.from_array(A, Boolean())
    return Synthetic(t, t, {"preset": "boolean", "k_true": k, "XY": X @ Y})


def _positive_rate_scale(B, target=0.5):
    lo, hi = 0.0, 1.0 / max(B.min(), 1e-12)
    for _ in range(200):
        c = 0.5 * (lo + hi)
        if np.minimum(c * B, 1.0).mean() < target:
            lo = c
        else:
            hi = c
    return 0.5 * (lo + hi)


def censored(seed=0, m=300, n=300, k=3, observe=0.1) -> Synthetic:
    """Boolean A with P(A_ij = +1) proportional to B = XY (uniform [0,1]
    factors), scaled so half the entries are positive; only a fraction
    ``observe`` of the positive entries is observed."""
    rng = np.random.default_rng(seed)
    B = rng.random((m, k)) @ rng.random((k, n))
    c = _positive_rate_scale(B)
    A = np.where(rng.random((m, n)) < np.minimum(c * B, 1.0), 1.0, -1.0)
    pos = np.argwhere(A > 0)
    pick = pos[rng.choice(len(pos), size=int(round(observe * len(pos))), replace=False)]
    mask = np.zeros((m, n), dtype=bool)
    mask[pick[:, 0], pick[:, 1]] = True
    truth = DataTable.from_array(A, Boolean())
    return Synthetic(truth, truth.with_mask(mask), {"preset": "censored", "k_true": k,
                                                    "positive_rate_hidden": float((A[~mask] > 0).mean())})


def mixed(seed=0, m=100, n1=40, n2=30, n3=30, k=10, levels=7) -> Synthetic:
    """Real columns x_i y_j, Boolean columns sign(x_i y_j) and ordinal
    columns round(3 x_i y_j + 1) clipped to 1..levels."""
    rng = np.random.default_rng(seed)
    X, Y = _gauss_factors(rng, m, n1 + n2 + n3, k)
    U = X @ Y
    cols, kinds = [], []
    for j in range(n1 + n2 + n3):
        u = U[:, j]
        if j < n1:
            cols.append(u)
            kinds.append(Real())
        elif j < n1 + n2:
            cols.append(np.where(u >= 0, 1.0, -1.0))
            kinds.append(Boolean())
        else:
            cols.append(np.clip(np.round(3 * u + 1), 1, levels))
            kinds.append(Ordinal(levels))
    names = [f"real{j}" for j in range(n1)] + [f"bool{j}" for j in range(n2)] + [f"ord{j}" for j in range(n3)]
    t = DataTable(cols, kinds, names)
    return Synthetic(t, t, {"preset": "mixed", "k_true": k, "groups": (n1, n2, n3)})


def missing(seed=0, **kw) -> Synthetic:
    """The mixed table with a block censored: rows in the second half of the
    table, the last 3 real columns and every Boolean and ordinal column."""
    s = mixed(seed, **kw)
    n1, n2, n3 = s.info["groups"]
    m = s.truth.m
    mask = np.ones(s.truth.shape, dtype=bool)
    mask[m // 2:, n1 - 3:] = False
    s.observed = s.truth.with_mask(mask)
    s.info["preset"] = "missing"
    return s


def huber_outliers(seed=0, m=300, n=300, k=3, outlier_max=3.0, outlier_prob=0.05, observe=0.5) -> Synthetic:
    """A = XY + S with standard normal factors and sparse uniform outliers S;
    a uniformly random fraction ``observe`` of the entries is observed."""
    rng = np.random.default_rng(seed)
    X, Y = _gauss_factors(rng, m, n, k)
    S = np.where(rng.random((m, n)) < outlier_prob, rng.uniform(0, outlier_max, (m, n)), 0.0)
    A = X @ Y + S
    truth = DataTable.from_array(A)
    mask = np.zeros(m * n, dtype=bool)
    mask[rng.choice(m * n, size=int(round(observe * m * n)), replace=False)] = True
    return Synthetic(truth, truth.with_mask(mask.reshape(m, n)),
                     {"preset": "cv", "k_true": k, "observe": observe})


def regpath(seed=0, **kw) -> Synthetic:
    kw.setdefault("outlier_max", 1.0)
    kw.setdefault("observe", 0.1)
    s = huber_outliers(seed, **kw)
    s.info["preset"] = "regpath"
    return s


def qrpca(seed=0, m=20, n=20, k=3, noise=0.05) -> Synthetic:
    """Rank-k Gaussian product plus small dense noise, fully observed.
    With this noise level gamma = 1 separates the signal from the noise."""
    rng = np.random.default_rng(seed)
    X, Y = _gauss_factors(rng, m, n, k)
    A = X @ Y + noise * rng.standard_normal((m, n))
    t = DataTable.from_array(A)
    return Synthetic(t, t, {"preset": "qrpca", "k_true": k})


PRESETS = {"boolean": boolean, "censored": censored, "mixed": mixed, "missing": missing,
           "cv": huber_outliers, "huber": huber_outliers, "regpath": regpath, "qrpca": qrpca}


def generate(preset: str, seed: int = 0, **kw) -> Synthetic:
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    return PRESETS[preset](seed, **kw)
