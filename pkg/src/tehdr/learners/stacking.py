"""Cross-validated stacking of base learners with nonnegative least squares."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np
from scipy.optimize import nnls

from .._rng import derive_rng, derive_seed
from ..data import Covariates, encode, kfold_indices
from .forest import ConditionalForest, ForestParams, fit_conditional_forest
from .penalized import Family, PenalizedLinearModel, clip_prob, fit_penalized_linear


class FittedModel(Protocol):
    def predict(self, X: Covariates) -> np.ndarray: ...


class Member(Protocol):
    """A base learner factory usable inside :func:`fit_stacking`."""

    name: str

    def fit(self, X: Covariates, y: np.ndarray, family: Family, seed: int) -> FittedModel: ...


@dataclass(frozen=True)
class FittedLasso:
    model: PenalizedLinearModel

    def predict(self, X: Covariates) -> np.ndarray:
        return self.model.predict(encode(X, "raw"))


@dataclass(frozen=True)
class LassoMember:
    cv_folds: int = 10
    lambda_grid: Any = "auto"
    name: str = "lasso"

    def fit(self, X: Covariates, y, family, seed) -> FittedLasso:
        folds = min(self.cv_folds, len(y))
        return FittedLasso(fit_penalized_linear(encode(X, "raw"), y, family, self.lambda_grid, folds, seed))


@dataclass(frozen=True)
class FittedForest:
    forest: ConditionalForest
    family: str

    def predict(self, X: Covariates) -> np.ndarray:
        pred = self.forest.predict(X)
        return clip_prob(pred) if self.family == "binomial" else pred


@dataclass(frozen=True)
class ForestMember:
    params: ForestParams = field(default_factory=ForestParams)
    name: str = "cforest"

    def fit(self, X: Covariates, y, family, seed) -> FittedForest:
        return FittedForest(fit_conditional_forest(X, y, self.params, seed), family)


@dataclass(frozen=True)
class StackedModel:
    members: tuple[FittedModel, ...]
    member_names: tuple[str, ...]
    weights: np.ndarray
    family: str
    cv_folds: int
    cv_risk: np.ndarray
    cv_predictions: np.ndarray | None = None

    def member_predictions(self, X: Covariates) -> np.ndarray:
        return np.column_stack([m.predict(X) for m in self.members])

    def predict(self, X: Covariates) -> np.ndarray:
        preds = [w * m.predict(X) for w, m in zip(self.weights, self.members) if w > 0]
        out = np.sum(preds, axis=0)
        return clip_prob(out) if self.family == "binomial" else out


def default_members(forest_params: ForestParams | None = None, cv_folds: int = 10) -> tuple[Member, ...]:
    return (LassoMember(cv_folds=cv_folds), ForestMember(forest_params or ForestParams()))


def nnls_weights(Z: np.ndarray, y: np.ndarray, cv_risk: np.ndarray) -> np.ndarray:
    """Nonnegative least-squares weights normalized to the simplex."""
    w, _ = nnls(Z, y)
    total = w.sum()
    if not np.isfinite(total) or total <= 0:
        w = np.zeros(Z.shape[1])
        w[int(np.argmin(cv_risk))] = 1.0
        return w
    return w / total


def fit_stacking(
    X: Covariates,
    y: np.ndarray,
    family: Family = "gaussian",
    cv_folds: int = 10,
    seed: int = 0,
    members: Sequence[Member] | None = None,
) -> StackedModel:
    """Stack ``members`` on their ``cv_folds``-fold cross-validated predictions.

    Weights minimise squared error subject to w >= 0 and are rescaled to sum
    to one (all-zero solutions fall back to the member with the lowest CV
    risk). Members are then refit on all rows.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    members = tuple(members) if members is not None else default_members()
    if n < cv_folds:
        raise ValueError(f"stacking needs n >= cv_folds (n={n}, cv_folds={cv_folds})")
    if len(members) == 1:
        fitted = members[0].fit(X, y, family, derive_seed(seed, 0xF11, 0))
        return StackedModel((fitted,), (members[0].name,), np.ones(1), family, cv_folds, np.full(1, np.nan))

    rng = derive_rng(seed, 0x57AC)
    folds = kfold_indices(n, cv_folds, rng, y if family == "binomial" else None)
    Z = np.empty((n, len(members)))
    for k in range(cv_folds):
        tr, te = np.flatnonzero(folds != k), np.flatnonzero(folds == k)
        Xtr, Xte = X.subset(tr), X.subset(te)
        for m, member in enumerate(members):
            model = member.fit(Xtr, y[tr], family, derive_seed(seed, k, m))
            Z[te, m] = model.predict(Xte)
    cv_risk = ((Z - y[:, None]) ** 2).mean(axis=0)
    weights = nnls_weights(Z, y, cv_risk)
    fitted = tuple(member.fit(X, y, family, derive_seed(seed, 0xF11, m)) for m, member in enumerate(members))
    return StackedModel(fitted, tuple(m.name for m in members), weights, family, cv_folds, cv_risk, Z)
