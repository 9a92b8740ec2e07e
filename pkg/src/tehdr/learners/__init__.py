"""Base learners and the stacking ensemble used for nuisance and CATE models."""

from .forest import (
    ConditionalForest,
    ConditionalTree,
    ForestParams,
    fit_conditional_forest,
    forest_importance,
    predict_oob,
)
from .penalized import (
    ConvergenceError,
    PenalizedLinearModel,
    clip_prob,
    fit_penalized_linear,
    kkt_residuals,
)
from .stacking import (
    ForestMember,
    LassoMember,
    StackedModel,
    default_members,
    fit_stacking,
)

__all__ = [
    "ConditionalForest",
    "ConditionalTree",
    "ConvergenceError",
    "ForestMember",
    "ForestParams",
    "LassoMember",
    "PenalizedLinearModel",
    "StackedModel",
    "clip_prob",
    "default_members",
    "fit_conditional_forest",
    "fit_penalized_linear",
    "fit_stacking",
    "forest_importance",
    "kkt_residuals",
    "predict",
    "predict_oob",
]


def predict(model, X):
    """Predict with any fitted learner in this package."""
    return model.predict(X)
