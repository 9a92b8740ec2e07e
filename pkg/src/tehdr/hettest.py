"""Global permutation test of independence between covariates and pseudo-outcomes."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import stats

from ._rng import derive_rng
from .data import Covariates, DesignMatrix, encode

__all__ = ["LinearStatistic", "HetTestResult", "linear_statistic", "global_test", "MIN_B"]

StatisticKind = Literal["max_type", "quadratic"]
MIN_B = 99
_CHUNK = 512
_MVN_DRAWS = 100_000
_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class LinearStatistic:
    """Linear statistic ``T = G' psi`` with its moments under the permutation null."""

    T: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    z: np.ndarray
    kept: np.ndarray
    dropped: tuple[int, ...]

    @property
    def degenerate(self) -> bool:
        return len(self.z) == 0


@dataclass(frozen=True)
class HetTestResult:
    statistic_kind: StatisticKind
    observed: float
    p_value: float
    method: Literal["permutation_mc", "asymptotic", "exact"]
    B: int
    dropped_columns: list[str] = field(default_factory=list)
    seed: int | None = None
    degenerate: bool = False
    df: int = 0

    def to_dict(self) -> dict:
        return {
            "statistic_kind": self.statistic_kind,
            "observed": self.observed,
            "p_value": self.p_value,
            "method": self.method,
            "B": self.B,
            "dropped_columns": list(self.dropped_columns),
            "seed": self.seed,
            "degenerate": self.degenerate,
            "df": self.df,
        }


def _matrix(G) -> np.ndarray:
    if isinstance(G, DesignMatrix):
        return G.columns
    G = np.asarray(G, dtype=float)
    return G[:, None] if G.ndim == 1 else G


def _moments(G: np.ndarray, psi: np.ndarray):
    n = len(psi)
    colsum = G.sum(axis=0)
    mu = colsum * psi.mean()
    v_psi = np.mean((psi - psi.mean()) ** 2)
    sigma = v_psi * (n / (n - 1) * (G**2).sum(axis=0) - colsum**2 / (n - 1))
    return mu, sigma


def linear_statistic(G, psi) -> LinearStatistic:
    """Standardized components of ``T_j = sum_i G_ij psi_i``.

    Mean and variance are those of T under random permutation of ``psi``
    against the fixed rows of ``G``. Columns whose null variance vanishes
    (numerically) are dropped.
    """
    G = _matrix(G)
    psi = np.asarray(psi, dtype=float)
    if G.shape[0] != len(psi):
        raise ValueError("G and psi lengths differ")
    if len(psi) < 2:
        raise ValueError("need at least two observations")
    T = G.T @ psi
    mu, sigma = _moments(G, psi)
    scale = (np.abs(G).sum(axis=0) * np.abs(psi - psi.mean()).max()) ** 2
    keep = sigma > 1e-12 * np.maximum(scale, 1e-300)
    z = (T[keep] - mu[keep]) / np.sqrt(sigma[keep])
    return LinearStatistic(T, mu, sigma, z, np.flatnonzero(keep), tuple(np.flatnonzero(~keep).tolist()))


def _reduce(z: np.ndarray, kind: StatisticKind) -> np.ndarray:
    if kind == "max_type":
        return np.abs(z).max(axis=-1)
    if kind == "quadratic":
        return (z**2).sum(axis=-1)
    raise ValueError(f"unknown statistic kind {kind!r}")


def _perm_stats(G: np.ndarray, psi: np.ndarray, perms: np.ndarray, mu, sd, kind) -> np.ndarray:
    T = psi[perms] @ G  # (b, q); moments are permutation-invariant
    return _reduce((T - mu) / sd, kind)


def _null_corr(G: np.ndarray) -> np.ndarray:
    Gc = G - G.mean(axis=0)
    cov = Gc.T @ Gc
    d = np.sqrt(np.diag(cov))
    return cov / np.outer(d, d)


def global_test(
    X,
    psi,
    statistic_kind: StatisticKind = "max_type",
    method: Literal["permutation_mc", "asymptotic", "exact"] = "permutation_mc",
    B: int = 9999,
    seed: int = 0,
) -> HetTestResult:
    """Test H0: psi independent of X against arbitrary alternatives.

    ``X`` is a :class:`Covariates` table (encoded with ``dummy_plus_rank``),
    a :class:`DesignMatrix`, or a raw matrix used as is. ``method="exact"``
    enumerates all n! orderings and is only allowed for n <= 8.
    """
    if isinstance(X, Covariates):
        design = encode(X, "dummy_plus_rank")
        G_full, names = design.columns, list(design.column_names)
    else:
        G_full = _matrix(X)
        names = list(getattr(X, "column_names", [f"col{j}" for j in range(G_full.shape[1])]))
    psi = np.asarray(psi, dtype=float)
    if not np.all(np.isfinite(psi)):
        raise ValueError("psi has non-finite entries")
    if method == "permutation_mc" and B < MIN_B:
        raise ValueError(f"B must be at least {MIN_B} (got {B})")
    if method not in ("permutation_mc", "asymptotic", "exact"):
        raise ValueError(f"unknown method {method!r}")
    _reduce(np.zeros((1, 1)), statistic_kind)

    ls = linear_statistic(G_full, psi)
    dropped = [names[j] for j in ls.dropped]
    if ls.degenerate:
        return HetTestResult(statistic_kind, 0.0, 1.0, method, B, dropped, seed, True, 0)
    G = np.ascontiguousarray(G_full[:, ls.kept])
    mu, sd = ls.mu[ls.kept], np.sqrt(ls.sigma[ls.kept])
    observed = float(_reduce(ls.z, statistic_kind))
    threshold = observed * (1 - _TIE_RTOL)
    n, q = G.shape

    if method == "exact":
        if n > 8:
            raise ValueError("exact enumeration is limited to n <= 8")
        perms = np.array(list(itertools.permutations(range(n))))
        s = _perm_stats(G, psi, perms, mu, sd, statistic_kind)
        p = float(np.mean(s >= threshold))
        return HetTestResult(statistic_kind, observed, p, method, len(perms), dropped, seed, False, q)

    if method == "asymptotic":
        # z is asymptotically N(0, R); both statistics are referred to draws from it,
        # since sum z_j^2 with correlated components is a weighted chi-square mixture.
        rng = derive_rng(seed, 0xA5)
        w, V = np.linalg.eigh(_null_corr(G))
        L = V * np.sqrt(np.clip(w, 0, None))
        hits = 0
        for start in range(0, _MVN_DRAWS, 10_000):
            Z = rng.standard_normal((min(10_000, _MVN_DRAWS - start), q)) @ L.T
            s = np.abs(Z).max(axis=1) if statistic_kind == "max_type" else np.einsum("ij,ij->i", Z, Z)
            hits += int(np.count_nonzero(s >= threshold))
        p = hits / _MVN_DRAWS
        return HetTestResult(statistic_kind, observed, p, method, 0, dropped, seed, False, q)

    hits = 0
    for c, start in enumerate(range(0, B, _CHUNK)):
        b = min(_CHUNK, B - start)
        rng = derive_rng(seed, 0x9E, c)
        perms = rng.permuted(np.tile(np.arange(n), (b, 1)), axis=1)
        hits += int(np.count_nonzero(_perm_stats(G, psi, perms, mu, sd, statistic_kind) >= threshold))
    p = (1 + hits) / (B + 1)
    return HetTestResult(statistic_kind, observed, p, method, B, dropped, seed, False, q)


def mc_tolerance(p: float, B: int, k: float = 3.0) -> float:
    return k * math.sqrt(p * (1 - p) / B)
