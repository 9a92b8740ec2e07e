"""Effect-modifier ranking by permutation importance on a conditional forest."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Covariates
from .learners.forest import ConditionalForest, ForestParams, fit_conditional_forest, forest_importance
from .metalearners import CateEstimate, PseudoOutcomeVector

__all__ = ["ImportanceRanking", "ranking_forest_params", "rank_effect_modifiers", "cate_oob"]


def ranking_forest_params(**overrides) -> ForestParams:
    """Forest settings for ranking: splits are never vetoed by the p-value gate."""
    return replace(ForestParams(alpha_split=1.0), **overrides)


@dataclass(frozen=True)
class ImportanceRanking:
    names: tuple[str, ...]
    scores: np.ndarray
    rank: np.ndarray  # rank[j] = 1-based position of covariate j
    forest_ref: ConditionalForest
    n_perm_repeats: int
    degenerate: bool = False

    @property
    def order(self) -> np.ndarray:
        """Covariate indices from most to least important."""
        return np.argsort(self.rank)

    @property
    def top(self) -> str:
        return self.names[int(self.order[0])]

    def top_k(self, k: int) -> list[str]:
        return [self.names[j] for j in self.order[:k]]


def _stable_rank(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(-scores, kind="stable")
    rank = np.empty(len(scores), dtype=int)
    rank[order] = np.arange(1, len(scores) + 1)
    return rank


def _psi(psi) -> np.ndarray:
    return psi.psi if isinstance(psi, PseudoOutcomeVector) else np.asarray(psi, dtype=float)


def rank_effect_modifiers(
    X: Covariates,
    psi,
    params: ForestParams | None = None,
    n_perm_repeats: int = 5,
    seed: int = 0,
) -> ImportanceRanking:
    """Fit a forest on (X, psi) and rank covariates by OOB permutation importance.

    A score is the mean increase in out-of-bag squared error over trees and
    repeats when that covariate is shuffled among a tree's OOB rows.
    """
    y = _psi(psi)
    params = params or ranking_forest_params()
    forest = fit_conditional_forest(X, y, params, seed)
    if forest.is_degenerate:
        scores = np.zeros(X.p)
        return ImportanceRanking(tuple(X.names), scores, np.arange(1, X.p + 1), forest, n_perm_repeats, True)
    scores = forest_importance(forest, X, y, n_perm_repeats, seed)
    return ImportanceRanking(tuple(X.names), scores, _stable_rank(scores), forest, n_perm_repeats)


def cate_oob(
    X: Covariates,
    psi,
    forest: ConditionalForest | ImportanceRanking | None = None,
    params: ForestParams | None = None,
    seed: int = 0,
) -> tuple[CateEstimate, np.ndarray]:
    """Out-of-bag forest predictions of psi, with the fallback flags."""
    if isinstance(forest, ImportanceRanking):
        forest = forest.forest_ref
    if forest is None:
        forest = fit_conditional_forest(X, _psi(psi), params or ranking_forest_params(), seed)
    tau, fallback = forest.predict_oob(X)
    return CateEstimate(tau, "oob_cforest"), fallback
