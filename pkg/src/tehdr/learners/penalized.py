"""Lasso-penalized linear and logistic regression with cross-validated lambda."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .._rng import derive_rng
from ..data import Covariates, DesignMatrix, encode, kfold_indices
from . import _cd

Family = Literal["gaussian", "binomial"]

PROB_CLIP = 1e-4
CD_TOL = 1e-7
CD_MAX_SWEEPS = 100_000
MAX_MM_STEPS = 10_000
N_LAMBDA = 100


class ConvergenceError(RuntimeError):
    """Coordinate descent did not reach the requested tolerance."""


def clip_prob(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def _expit(eta):
    return np.exp(-np.logaddexp(0.0, -eta))


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, DesignMatrix):
        return X.columns
    if isinstance(X, Covariates):
        return encode(X, "raw").columns
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


@dataclass(frozen=True)
class PenalizedLinearModel:
    family: Family
    coefficients: np.ndarray
    intercept: float
    lambda_: float
    center: np.ndarray
    scale: np.ndarray
    lambda_path: np.ndarray | None = None
    cv_mean: np.ndarray | None = None
    cv_se: np.ndarray | None = None

    @property
    def std_coefficients(self) -> np.ndarray:
        return self.coefficients * self.scale

    def decision_function(self, X) -> np.ndarray:
        return self.intercept + _as_matrix(X) @ self.coefficients

    def predict(self, X) -> np.ndarray:
        eta = self.decision_function(X)
        if self.family == "binomial":
            return clip_prob(_expit(eta))
        return eta


def _standardize(X: np.ndarray):
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale_safe = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(center)), scale, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        Xs = np.where(scale_safe > 0, (X - center) / np.where(scale_safe > 0, scale_safe, 1.0), 0.0)
    return np.ascontiguousarray(Xs), center, np.where(scale_safe > 0, scale_safe, 1.0), scale_safe > 0


def _lambda_max(Xs: np.ndarray, y: np.ndarray) -> float:
    return float(np.max(np.abs(Xs.T @ (y - y.mean())))) / len(y) if Xs.shape[1] else 0.0


def lambda_sequence(Xs: np.ndarray, y: np.ndarray, n_lambda: int = N_LAMBDA) -> np.ndarray:
    n, q = Xs.shape
    lmax = _lambda_max(Xs, y)
    if lmax <= 0:
        return np.array([0.0])
    ratio = 1e-4 if n > q else 1e-2
    return lmax * np.logspace(0, np.log10(ratio), n_lambda)


def _path(Xs, y, family, lambdas, early_stop=False):
    """Returns (intercepts_std, coefs_std) for the standardized problem."""
    if family == "gaussian":
        ybar = y.mean()
        coefs, ok = _cd.gaussian_path(Xs, y - ybar, lambdas, CD_TOL, CD_MAX_SWEEPS, early_stop)
        icpt = np.full(len(coefs), ybar)
    else:
        icpt, coefs, ok = _cd.binomial_path(
            Xs, y.astype(float), lambdas, CD_TOL, CD_MAX_SWEEPS, MAX_MM_STEPS, early_stop
        )
    if not ok:
        raise ConvergenceError(
            f"coordinate descent did not converge to tol={CD_TOL:g} within {CD_MAX_SWEEPS} sweeps"
        )
    return icpt, coefs


def _to_original(icpt_std, coef_std, center, scale, active):
    coef = np.where(active, coef_std / scale, 0.0)
    return icpt_std - center @ coef, coef


def _intercept_only(family: Family, y: np.ndarray, q: int, center, scale) -> PenalizedLinearModel:
    ybar = float(np.mean(y))
    if family == "binomial":
        pbar = float(np.clip(ybar, PROB_CLIP, 1 - PROB_CLIP))
        icpt = float(np.log(pbar / (1 - pbar)))
    else:
        icpt = ybar
    return PenalizedLinearModel(family, np.zeros(q), icpt, np.inf, center, scale)


def _loss(family: Family, y: np.ndarray, pred: np.ndarray) -> np.ndarray:
    if family == "gaussian":
        return (y[:, None] - pred) ** 2
    p = clip_prob(pred)
    return -2.0 * (y[:, None] * np.log(p) + (1 - y[:, None]) * np.log1p(-p))


def fit_penalized_linear(
    X,
    y: np.ndarray,
    family: Family = "gaussian",
    lambda_grid: Sequence[float] | np.ndarray | str | float = "auto",
    cv_folds: int = 10,
    seed: int = 0,
) -> PenalizedLinearModel:
    """Fit a lasso (gaussian) or lasso-logistic (binomial) model.

    Columns are standardized internally. With more than one candidate lambda,
    the penalty is the largest lambda whose cross-validated risk is within one
    standard error of the minimum (squared error or binomial deviance).
    """
    Xm = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n, q = Xm.shape
    if n < 10:
        raise ValueError(f"penalized regression needs n >= 10 (got {n})")
    if family == "binomial" and not np.all((y == 0) | (y == 1)):
        raise ValueError("binomial family needs a 0/1 response")
    Xs, center, scale, active = _standardize(Xm)
    if np.ptp(y) == 0 or not active.any():
        return _intercept_only(family, y, q, center, scale)

    if isinstance(lambda_grid, str):
        if lambda_grid != "auto":
            raise ValueError(f"unknown lambda_grid {lambda_grid!r}")
        # the full-data path fixes the (possibly truncated) sequence used by CV
        lambdas = lambda_sequence(Xs, y)
        icpt_full, coefs_full = _path(Xs, y, family, lambdas, early_stop=True)
        lambdas = lambdas[: len(coefs_full)]
    else:
        lambdas = np.sort(np.atleast_1d(np.asarray(lambda_grid, dtype=float)))[::-1]
        if np.any(lambdas < 0):
            raise ValueError("lambda must be >= 0")

        icpt_full = coefs_full = None

    cv_mean = cv_se = None
    if len(lambdas) == 1:
        best = 0
    else:
        if cv_folds < 2 or cv_folds > n:
            raise ValueError(f"cv_folds={cv_folds} out of range for n={n}")
        rng = derive_rng(seed, 0xC5)
        folds = kfold_indices(n, cv_folds, rng, y if family == "binomial" else None)
        losses = np.empty((n, len(lambdas)))
        for k in range(cv_folds):
            tr, te = folds != k, folds == k
            ytr = y[tr]
            if np.ptp(ytr) == 0:
                const = ytr[0] if family == "gaussian" else float(clip_prob(ytr[:1])[0])
                losses[te] = _loss(family, y[te], np.full((int(te.sum()), len(lambdas)), const))
                continue
            Xs_k, c_k, s_k, a_k = _standardize(Xm[tr])
            icpt, coefs = _path(Xs_k, ytr, family, lambdas)
            coef_orig = np.where(a_k, coefs / s_k, 0.0)
            eta = (icpt - coef_orig @ c_k)[None, :] + Xm[te] @ coef_orig.T
            pred = _expit(eta) if family == "binomial" else eta
            losses[te] = _loss(family, y[te], pred)
        fold_means = np.array([losses[folds == k].mean(axis=0) for k in range(cv_folds)])
        cv_mean = losses.mean(axis=0)
        cv_se = fold_means.std(axis=0, ddof=1) / np.sqrt(cv_folds)
        i_min = int(np.argmin(cv_mean))
        within = np.flatnonzero(cv_mean <= cv_mean[i_min] + cv_se[i_min])
        best = int(within.min())  # lambdas are decreasing

    if coefs_full is None:
        icpt_full, coefs_full = _path(Xs, y, family, lambdas[: best + 1])
    intercept, coef = _to_original(icpt_full[best], coefs_full[best], center, scale, active)
    return PenalizedLinearModel(
        family, coef, float(intercept), float(lambdas[best]), center, scale, lambdas, cv_mean, cv_se
    )


def kkt_residuals(model: PenalizedLinearModel, X, y: np.ndarray) -> np.ndarray:
    """Per-coordinate KKT violation of a gaussian fit on its standardized scale."""
    if model.family != "gaussian":
        raise ValueError("KKT check implemented for the gaussian family")
    Xm = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    Xs, _, _, active = _standardize(Xm)
    b = model.std_coefficients
    grad = Xs.T @ (y - y.mean() - Xs @ b) / len(y)
    lam = model.lambda_
    res = np.where(b == 0, np.maximum(np.abs(grad) - lam, 0.0), np.abs(grad - lam * np.sign(b)))
    return np.where(active, res, 0.0)
