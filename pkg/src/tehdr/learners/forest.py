"""Conditional inference forests (unbiased recursive partitioning)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .._rng import derive_seed
from ..data import Covariates
from . import _ctree


@dataclass(frozen=True)
class ForestParams:
    """Forest settings. ``None`` fields resolve against the training data.

    Defaults: ``mtry = ceil(sqrt(p))``, ``min_node = max(20, ceil(0.05 n))``.
    ``min_leaf`` is the smallest child a split may create.
    """

    ntree: int = 500
    mtry: int | None = None
    subsample_fraction: float = 0.632
    alpha_split: float = 0.05
    min_node: int | None = None
    min_leaf: int = 7

    def resolve(self, n: int, p: int) -> "ForestParams":
        return replace(
            self,
            mtry=self.mtry if self.mtry is not None else math.ceil(math.sqrt(p)),
            min_node=self.min_node if self.min_node is not None else max(20, math.ceil(0.05 * n)),
        )


@dataclass(frozen=True)
class ConditionalTree:
    """Read-only view of one tree inside a :class:`ConditionalForest`."""

    feature: np.ndarray
    threshold: np.ndarray
    right_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    p_value: np.ndarray
    size: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def root_feature(self) -> int:
        return int(self.feature[0])

    def right_levels(self, node: int) -> list[int]:
        mask = int(self.right_mask[node])
        return [b for b in range(64) if (mask >> b) & 1]


@dataclass(frozen=True)
class ConditionalForest:
    params: ForestParams
    seed: int
    is_categorical: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    right_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    p_value: np.ndarray
    size: np.ndarray
    offsets: np.ndarray
    inbag: np.ndarray
    oob_mask: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "oob_mask", ~self.inbag)

    @property
    def ntree(self) -> int:
        return len(self.offsets) - 1

    @property
    def trees(self) -> list[ConditionalTree]:
        return [self.tree(t) for t in range(self.ntree)]

    def tree(self, t: int) -> ConditionalTree:
        s = slice(self.offsets[t], self.offsets[t + 1])
        return ConditionalTree(
            self.feature[s], self.threshold[s], self.right_mask[s], self.left[s],
            self.right[s], self.value[s], self.p_value[s], self.size[s],
        )

    @property
    def is_degenerate(self) -> bool:
        return bool(np.all(self.feature < 0))

    def _arrays(self):
        return (self.feature, self.threshold, self.right_mask, self.left, self.right, self.value)

    def tree_predictions(self, X) -> np.ndarray:
        Xv = _values(X)
        _check_levels(Xv, self.is_categorical)
        return _ctree.tree_predictions(Xv, self.is_categorical, *self._arrays(), self.offsets)

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=1)

    def predict_oob(self, X_train) -> tuple[np.ndarray, np.ndarray]:
        """OOB predictions for the training rows and a flag for rows that fell back.

        A row that is in-bag for every tree receives the full-forest prediction.
        """
        preds = self.tree_predictions(X_train)
        if preds.shape[0] != self.inbag.shape[1]:
            raise ValueError("predict_oob needs the exact training table")
        oob = self.oob_mask.T
        counts = oob.sum(axis=1)
        fallback = counts == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(fallback, preds.mean(axis=1), (preds * oob).sum(axis=1) / np.maximum(counts, 1))
        return out, fallback


def _values(X) -> np.ndarray:
    if isinstance(X, Covariates):
        return X.values
    X = np.asarray(X, dtype=float)
    return np.ascontiguousarray(X[:, None] if X.ndim == 1 else X)


def _check_levels(Xv: np.ndarray, is_cat: np.ndarray) -> None:
    if is_cat.any():
        cats = Xv[:, is_cat]
        if cats.size and (cats.min() < 0 or cats.max() > 62):
            raise ValueError("categorical level codes must lie in 0..62")


def fit_conditional_forest(
    X,
    y: np.ndarray,
    params: ForestParams | None = None,
    seed: int = 0,
    categorical: np.ndarray | None = None,
) -> ConditionalForest:
    """Fit a forest of conditional inference trees.

    Each tree sees a without-replacement subsample. At each node the covariate
    with the smallest Bonferroni-adjusted association p-value among ``mtry``
    random candidates is chosen; the node becomes a leaf when that adjusted
    p-value exceeds ``alpha_split`` or the node is smaller than ``min_node``.
    """
    Xv = _values(X)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = Xv.shape
    if n < 20:
        raise ValueError(f"conditional forest needs n >= 20 (got {n})")
    if len(y) != n:
        raise ValueError("X and y lengths differ")
    if categorical is None:
        categorical = X.categorical if isinstance(X, Covariates) else np.zeros(p, dtype=bool)
    is_cat = np.ascontiguousarray(categorical, dtype=np.bool_)
    _check_levels(Xv, is_cat)
    params = (params or ForestParams()).resolve(n, p)
    n_in = max(1, min(n - 1, int(round(params.subsample_fraction * n))))
    seeds = np.array([derive_seed(seed, t) % (2**32) for t in range(params.ntree)], dtype=np.int64)
    out = _ctree.build_forest(
        Xv, is_cat, y, params.ntree, n_in, params.mtry, params.alpha_split,
        params.min_node, params.min_leaf, seeds,
    )
    forest = ConditionalForest(params, seed, is_cat, *out)
    if params.ntree >= 50 and forest.oob_mask.sum(axis=0).min() == 0:
        warnings.warn("some samples are out-of-bag for no tree; consider a larger ntree", RuntimeWarning)
    return forest


def predict_oob(forest: ConditionalForest, X_train) -> np.ndarray:
    return forest.predict_oob(X_train)[0]


def forest_importance(forest: ConditionalForest, X, y: np.ndarray, n_repeats: int = 5, seed: int = 0) -> np.ndarray:
    """Marginal permutation importance on each tree's out-of-bag rows."""
    Xv = _values(X)
    seeds = np.array([derive_seed(seed, 0x1A, t) % (2**32) for t in range(forest.ntree)], dtype=np.int64)
    return _ctree.permutation_importance(
        Xv, forest.is_categorical, np.ascontiguousarray(y, dtype=float), *forest._arrays(),
        forest.offsets, forest.inbag, n_repeats, seeds,
    )
