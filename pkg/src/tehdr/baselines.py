"""Linear-model comparison methods: per-covariate and joint interaction tests."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats
from scipy.special import expit

from .data import TrialDataset, encode

__all__ = ["BaselineResult", "GLMFit", "fit_glm", "univariate_baseline", "multivariate_baseline", "IdentifiabilityError"]

_RANK_TOL = 1e-9


class IdentifiabilityError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineResult:
    method: str
    global_p: float
    per_covariate_p: np.ndarray
    top_covariate: str
    tau_hat: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def top_index(self) -> int:
        return int(np.argmin(self.per_covariate_p))


@dataclass(frozen=True)
class GLMFit:
    coef: np.ndarray  # full length; aliased columns hold 0
    kept: np.ndarray  # indices of estimable columns
    deviance: float  # RSS for gaussian
    cov: np.ndarray  # covariance of coef[kept]
    family: str

    def linear_predictor(self, Z: np.ndarray) -> np.ndarray:
        return Z @ self.coef

    def mean(self, Z: np.ndarray) -> np.ndarray:
        eta = self.linear_predictor(Z)
        return expit(eta) if self.family == "binomial" else eta


def _estimable(Z: np.ndarray) -> np.ndarray:
    """Column indices of a maximal linearly independent subset, in input order."""
    if Z.shape[1] == 0:
        return np.arange(0)
    _, R, piv = linalg.qr(Z, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > _RANK_TOL * max(d[0], 1e-300))) if len(d) else 0
    return np.sort(piv[:rank])


def _binomial_deviance(y, p) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-2 * np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))


def _irls(Z: np.ndarray, y: np.ndarray, max_iter: int = 100, tol: float = 1e-10):
    beta = np.zeros(Z.shape[1])
    dev_old = np.inf
    for _ in range(max_iter):
        eta = Z @ beta
        p = expit(eta)
        w = np.maximum(p * (1 - p), 1e-10)
        zwork = eta + (y - p) / w
        sw = np.sqrt(w)
        beta = np.linalg.lstsq(Z * sw[:, None], zwork * sw, rcond=None)[0]
        dev = _binomial_deviance(y, expit(Z @ beta))
        if abs(dev - dev_old) < tol * (abs(dev) + 0.1):
            break
        dev_old = dev
    else:
        warnings.warn("logistic IRLS did not converge (possible separation)", RuntimeWarning)
    p = expit(Z @ beta)
    info = (Z * (p * (1 - p))[:, None]).T @ Z
    return beta, dev, np.linalg.pinv(info)


def fit_glm(Z: np.ndarray, y: np.ndarray, family: str = "gaussian") -> GLMFit:
    """Unpenalized GLM fit; aliased columns are fixed at zero."""
    kept = _estimable(Z)
    Zk = Z[:, kept]
    coef = np.zeros(Z.shape[1])
    if family == "gaussian":
        b = np.linalg.lstsq(Zk, y, rcond=None)[0]
        rss = float(np.sum((y - Zk @ b) ** 2))
        dof = max(len(y) - len(kept), 1)
        cov = rss / dof * np.linalg.pinv(Zk.T @ Zk)
        coef[kept] = b
        return GLMFit(coef, kept, rss, cov, family)
    if family == "binomial":
        b, dev, cov = _irls(Zk, y)
        coef[kept] = b
        return GLMFit(coef, kept, dev, cov, family)
    raise ValueError(f"unknown family {family!r}")


def _lrt(reduced: GLMFit, full: GLMFit, n: int) -> tuple[float, int]:
    """Likelihood-ratio p-value for nested fits.

    The gaussian ratio ``n log(RSS0 / RSS1)`` is a monotone function of the F
    statistic, so its exact null distribution is used rather than chi-square.
    """
    df = len(full.kept) - len(reduced.kept)
    if df <= 0:
        return 1.0, 0
    if full.family == "gaussian":
        resid_df = n - len(full.kept)
        if resid_df <= 0:
            return 1.0, df
        if full.deviance <= 0:
            return 0.0, df
        F = (reduced.deviance - full.deviance) / df / (full.deviance / resid_df)
        return float(stats.f.sf(max(F, 0.0), df, resid_df)), df
    stat = reduced.deviance - full.deviance
    return float(stats.chi2.sf(max(stat, 0.0), df)), df


def _family(dataset: TrialDataset) -> str:
    return "binomial" if dataset.outcome_kind == "binary" else "gaussian"


def _blocks(dataset: TrialDataset):
    design = encode(dataset.covariates, "raw")
    origin = np.asarray(design.column_origin)
    return design.columns, [np.flatnonzero(origin == j) for j in range(dataset.p)]


def _tau(fit: GLMFit, Z1: np.ndarray, Z0: np.ndarray) -> np.ndarray:
    return fit.mean(Z1) - fit.mean(Z0)


def univariate_baseline(dataset: TrialDataset) -> BaselineResult:
    """One interaction likelihood-ratio test per covariate, Bonferroni-combined.

    Reduced model: intercept + covariate block + A. Full model adds A times the
    block. The global p-value is ``min(p_j) * p`` capped at 1.
    """
    y, a = dataset.outcome, dataset.treatment.astype(float)
    n, fam = dataset.n, _family(dataset)
    B, blocks = _blocks(dataset)
    one = np.ones((n, 1))
    pvals = np.ones(dataset.p)
    fits = {}
    for j, cols in enumerate(blocks):
        Xj = B[:, cols]
        if np.all(np.ptp(Xj, axis=0) == 0):
            continue
        Z0 = np.hstack([one, Xj, a[:, None]])
        Z1 = np.hstack([Z0, a[:, None] * Xj])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            r, f = fit_glm(Z0, y, fam), fit_glm(Z1, y, fam)
        pvals[j], _ = _lrt(r, f, n)
        fits[j] = f
    top = int(np.argmin(pvals))
    global_p = min(1.0, float(pvals.min()) * dataset.p)
    if top in fits:
        Xj = B[:, blocks[top]]
        Z1 = np.hstack([one, Xj, one, Xj])
        Z0 = np.hstack([one, Xj, 0 * one, 0 * Xj])
        tau = _tau(fits[top], Z1, Z0)
    else:
        tau = np.zeros(n)
    names = tuple(dataset.covariates.names)
    return BaselineResult("univariate", global_p, pvals, names[top], tau, names)


def multivariate_baseline(dataset: TrialDataset) -> BaselineResult:
    """Joint likelihood-ratio test of all treatment-covariate interactions.

    Per-covariate p-values are Wald tests of each interaction block in the
    full model (chi-square with the block's degrees of freedom).
    """
    y, a = dataset.outcome, dataset.treatment.astype(float)
    n, fam = dataset.n, _family(dataset)
    B, blocks = _blocks(dataset)
    q = B.shape[1]
    if n <= 2 * q + 2:
        raise IdentifiabilityError(f"multivariate model needs n > 2q + 2 (n={n}, q={q})")
    one = np.ones((n, 1))
    Z0 = np.hstack([one, B, a[:, None]])
    Z1 = np.hstack([Z0, a[:, None] * B])
    reduced, full = fit_glm(Z0, y, fam), fit_glm(Z1, y, fam)
    aliased = np.setdiff1d(np.arange(Z1.shape[1]), full.kept)
    if len(aliased):
        warnings.warn(f"dropped {len(aliased)} aliased design columns", RuntimeWarning)
    global_p, _ = _lrt(reduced, full, n)

    inter_start = 2 + q
    pos = {c: i for i, c in enumerate(full.kept)}
    pvals = np.ones(dataset.p)
    for j, cols in enumerate(blocks):
        idx = [pos[inter_start + c] for c in cols if inter_start + c in pos]
        if not idx:
            continue
        b = full.coef[full.kept[idx]]
        V = full.cov[np.ix_(idx, idx)]
        w = float(b @ np.linalg.pinv(V) @ b)
        pvals[j] = float(stats.chi2.sf(w, len(idx)))
    top = int(np.argmin(pvals))
    tau = _tau(full, np.hstack([one, B, one, B]), np.hstack([one, B, 0 * one, 0 * B]))
    names = tuple(dataset.covariates.names)
    return BaselineResult("multivariate", global_p, pvals, names[top], tau, names)
