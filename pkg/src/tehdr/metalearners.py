"""ATE estimators, pseudo-outcomes and cross-fitted CATE meta-learners."""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from ._rng import derive_seed
from .data import FoldAssignment, TrialDataset, assign_folds
from .learners.stacking import Member, default_members, fit_stacking

__all__ = [
    "NuisanceFit",
    "PseudoOutcomeVector",
    "CateEstimate",
    "CrossFitResult",
    "NuisanceFitError",
    "ate_gcomp",
    "ate_ipw",
    "ate_aipw",
    "psi_dr1",
    "psi_dr2",
    "psi_ipw",
    "pseudo_outcome_dr",
    "pseudo_outcome_ipw",
    "clip_propensity",
    "crossfit",
    "dr_learner_crossfit",
    "cate_s_learner",
    "cate_t_learner",
]

PI_CLIP = (0.025, 0.975)
MIN_ARM = 20


class NuisanceFitError(RuntimeError):
    pass


def clip_propensity(pi_hat, bounds: tuple[float, float] = PI_CLIP) -> tuple[np.ndarray, int]:
    pi_hat = np.asarray(pi_hat, dtype=float)
    clipped = np.clip(pi_hat, *bounds)
    return clipped, int(np.count_nonzero(clipped != pi_hat))


@dataclass(frozen=True)
class NuisanceFit:
    """Per-sample nuisance estimates with the training rows behind each one.

    ``train_indices[k]`` lists the rows used to fit the models that produced
    the estimates for fold ``k``.
    """

    pi_hat: np.ndarray
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    folds: FoldAssignment | None = None
    mode: Literal["estimated", "fixed_randomization", "given"] = "given"
    clip_count: int = 0
    train_indices: tuple[np.ndarray, ...] = ()

    @classmethod
    def from_arrays(cls, pi_hat, mu0_hat, mu1_hat, clip: bool = True) -> "NuisanceFit":
        pi = np.asarray(pi_hat, dtype=float)
        n_clip = 0
        if clip:
            pi, n_clip = clip_propensity(pi)
        return cls(pi, np.asarray(mu0_hat, dtype=float), np.asarray(mu1_hat, dtype=float), clip_count=n_clip)

    @property
    def fold_of(self) -> np.ndarray | None:
        return None if self.folds is None else self.folds.fold_of

    def is_crossfitted(self) -> bool:
        """True when no sample's nuisance models saw that sample in training."""
        if self.folds is None or len(self.train_indices) != self.folds.K:
            return False
        for k, train in enumerate(self.train_indices):
            if np.any(self.folds.fold_of[train] == k):
                return False
        return True


@dataclass(frozen=True)
class PseudoOutcomeVector:
    psi: np.ndarray
    learner: Literal["DR", "IPW", "T"]
    formula: Literal["dr1", "dr2", "ipw", "t"]
    nuisance: NuisanceFit | None = None


@dataclass(frozen=True)
class CateEstimate:
    tau_hat: np.ndarray
    source: Literal["dr_crossfit", "oob_cforest", "s_learner", "t_learner", "ipw_learner", "t_crossfit"]
    K: int | None = None


def ate_gcomp(mu0_hat, mu1_hat) -> float:
    mu0_hat, mu1_hat = np.asarray(mu0_hat, float), np.asarray(mu1_hat, float)
    if mu0_hat.shape != mu1_hat.shape:
        raise ValueError("outcome model vectors differ in length")
    return float(np.mean(mu1_hat - mu0_hat))


def psi_ipw(y, a, pi_hat) -> np.ndarray:
    y, a, pi = (np.asarray(v, dtype=float) for v in (y, a, pi_hat))
    return (a - pi) / (pi * (1 - pi)) * y


def ate_ipw(y, a, pi_hat) -> float:
    return float(np.mean(psi_ipw(y, a, pi_hat)))


def psi_dr1(y, a, pi_hat, mu0_hat, mu1_hat) -> np.ndarray:
    """Outcome-model difference corrected by inverse-weighted residuals."""
    y, a, pi, mu0, mu1 = (np.asarray(v, dtype=float) for v in (y, a, pi_hat, mu0_hat, mu1_hat))
    mu_a = np.where(a == 1, mu1, mu0)
    return (a - pi) / (pi * (1 - pi)) * (y - mu_a) + mu1 - mu0


def psi_dr2(y, a, pi_hat, mu0_hat, mu1_hat) -> np.ndarray:
    """IPW pseudo-outcome corrected by propensity-reweighted outcome models."""
    y, a, pi, mu0, mu1 = (np.asarray(v, dtype=float) for v in (y, a, pi_hat, mu0_hat, mu1_hat))
    return (a - pi) / (pi * (1 - pi)) * y + (1 - a / pi) * mu1 - (1 - (1 - a) / (1 - pi)) * mu0


def ate_aipw(y, a, nuisance: NuisanceFit) -> float:
    return float(np.mean(psi_dr2(y, a, nuisance.pi_hat, nuisance.mu0_hat, nuisance.mu1_hat)))


def pseudo_outcome_dr(y, a, nuisance: NuisanceFit, formula: Literal["dr1", "dr2"] = "dr1") -> PseudoOutcomeVector:
    fn = {"dr1": psi_dr1, "dr2": psi_dr2}[formula]
    psi = fn(y, a, nuisance.pi_hat, nuisance.mu0_hat, nuisance.mu1_hat)
    return PseudoOutcomeVector(psi, "DR", formula, nuisance)


def pseudo_outcome_ipw(y, a, pi_hat) -> PseudoOutcomeVector:
    if isinstance(pi_hat, NuisanceFit):
        return PseudoOutcomeVector(psi_ipw(y, a, pi_hat.pi_hat), "IPW", "ipw", pi_hat)
    return PseudoOutcomeVector(psi_ipw(y, a, pi_hat), "IPW", "ipw")


# ---------------------------------------------------------------------------
# cross-fitting

_PSEUDO = {
    "dr": lambda y, a, pi, mu0, mu1: psi_dr1(y, a, pi, mu0, mu1),
    "ipw": lambda y, a, pi, mu0, mu1: psi_ipw(y, a, pi),
    "t": lambda y, a, pi, mu0, mu1: mu1 - mu0,
}
_SOURCE = {"dr": "dr_crossfit", "ipw": "ipw_learner", "t": "t_crossfit"}
_LABEL = {"dr": ("DR", "dr1"), "ipw": ("IPW", "ipw"), "t": ("T", "t")}


@dataclass(frozen=True)
class CrossFitResult:
    nuisance: NuisanceFit
    pseudo: dict[str, PseudoOutcomeVector]
    cate: dict[str, CateEstimate]
    fold_cate: dict[str, np.ndarray]
    warnings: tuple[str, ...] = ()
    nuisance_weights: dict[str, np.ndarray] = field(default_factory=dict)


def _fit_fold(
    dataset: TrialDataset,
    folds: FoldAssignment,
    k: int,
    learners: tuple[str, ...],
    members: tuple[Member, ...],
    cate_members: tuple[Member, ...],
    cv_folds: int,
    propensity: str,
    seed: int,
    clip: tuple[float, float],
):
    train, test = folds.train_test(k)
    X, a, y = dataset.covariates, dataset.treatment, dataset.outcome
    family = "binomial" if dataset.outcome_kind == "binary" else "gaussian"
    a_tr = a[train]
    tr0, tr1 = train[a_tr == 0], train[a_tr == 1]
    if min(len(tr0), len(tr1)) < MIN_ARM:
        raise NuisanceFitError(f"fold {k}: fewer than {MIN_ARM} training samples in an arm")
    if len(test) < MIN_ARM:
        raise NuisanceFitError(f"fold {k}: test fold has fewer than {MIN_ARM} samples")
    Xte = X.subset(test)
    weights = {}
    try:
        if propensity == "estimated":
            m_pi = fit_stacking(X.subset(train), a_tr, "binomial", cv_folds, derive_seed(seed, k, 0), members)
            pi = m_pi.predict(Xte)
            weights["pi"] = m_pi.weights
        else:
            pi = np.full(len(test), a_tr.mean())
        m0 = fit_stacking(X.subset(tr0), y[tr0], family, cv_folds, derive_seed(seed, k, 1), members)
        m1 = fit_stacking(X.subset(tr1), y[tr1], family, cv_folds, derive_seed(seed, k, 2), members)
        mu0, mu1 = m0.predict(Xte), m1.predict(Xte)
        weights["mu0"], weights["mu1"] = m0.weights, m1.weights
    except Exception as exc:
        raise NuisanceFitError(f"nuisance fit failed in fold {k}: {exc}") from exc
    pi, n_clip = clip_propensity(pi, clip)
    psis, taus = {}, {}
    for li, learner in enumerate(learners):
        psi = _PSEUDO[learner](y[test], a[test], pi, mu0, mu1)
        psis[learner] = psi
        model = fit_stacking(Xte, psi, "gaussian", cv_folds, derive_seed(seed, k, 10 + li), cate_members)
        taus[learner] = model.predict(X)
    return dict(test=test, train=train, pi=pi, mu0=mu0, mu1=mu1, n_clip=n_clip, psi=psis, tau=taus, weights=weights)


def crossfit(
    dataset: TrialDataset,
    K: int = 5,
    seed: int = 0,
    learners: Sequence[str] = ("dr",),
    members: Sequence[Member] | None = None,
    cate_members: Sequence[Member] | None = None,
    cv_folds: int = 10,
    propensity: Literal["estimated", "fixed_randomization"] = "estimated",
    clip: tuple[float, float] = PI_CLIP,
    workers: int = 1,
) -> CrossFitResult:
    """Cross-fitted pseudo-outcome learners sharing one set of nuisance fits.

    For every fold k the propensity and both arm-specific outcome models are
    stacked on the other folds, pseudo-outcomes are formed on fold k, a CATE
    model is stacked on fold k and evaluated on every row. The final CATE is
    the average of the K fold models. ``learners`` picks the pseudo-outcomes:
    ``dr`` (doubly robust), ``ipw`` and ``t`` (outcome-model difference).
    """
    learners = tuple(learners)
    unknown = set(learners) - set(_PSEUDO)
    if unknown:
        raise ValueError(f"unknown learners {sorted(unknown)}")
    if propensity not in ("estimated", "fixed_randomization"):
        raise ValueError(f"unknown propensity mode {propensity!r}")
    members = tuple(members) if members is not None else default_members(cv_folds=cv_folds)
    cate_members = tuple(cate_members) if cate_members is not None else members
    folds = assign_folds(dataset.n, K, dataset.treatment, derive_seed(seed, 0xF0))
    args = [(dataset, folds, k, learners, members, cate_members, cv_folds, propensity, seed, clip) for k in range(K)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, K)) as pool:
            parts = list(pool.map(_fit_fold, *zip(*args)))
    else:
        parts = [_fit_fold(*arg) for arg in args]

    n = dataset.n
    pi, mu0, mu1 = np.empty(n), np.empty(n), np.empty(n)
    psi = {l: np.empty(n) for l in learners}
    fold_tau = {l: np.empty((K, n)) for l in learners}
    n_clip = 0
    for k, part in enumerate(parts):
        te = part["test"]
        pi[te], mu0[te], mu1[te] = part["pi"], part["mu0"], part["mu1"]
        n_clip += part["n_clip"]
        for l in learners:
            psi[l][te] = part["psi"][l]
            fold_tau[l][k] = part["tau"][l]
    nuisance = NuisanceFit(
        pi, mu0, mu1, folds, propensity, n_clip, tuple(part["train"] for part in parts)
    )
    msgs = []
    if n_clip > 0.10 * n:
        msg = f"propensity clipped for {n_clip} of {n} samples (> 10%)"
        warnings.warn(msg, RuntimeWarning)
        msgs.append(msg)
    pseudo = {l: PseudoOutcomeVector(psi[l], *_LABEL[l], nuisance) for l in learners}
    cate = {l: CateEstimate(fold_tau[l].mean(axis=0), _SOURCE[l], K) for l in learners}
    weights = {
        f"fold{k}_{name}": w for k, part in enumerate(parts) for name, w in part["weights"].items()
    }
    return CrossFitResult(nuisance, pseudo, cate, fold_tau, tuple(msgs), weights)


def dr_learner_crossfit(
    dataset: TrialDataset,
    K: int = 5,
    seed: int = 0,
    **kwargs,
) -> tuple[PseudoOutcomeVector, CateEstimate]:
    """DR-learner with cross-fitting; returns the pseudo-outcomes and averaged CATE."""
    res = crossfit(dataset, K, seed, learners=("dr",), **kwargs)
    return res.pseudo["dr"], res.cate["dr"]


def cate_s_learner(
    dataset: TrialDataset, seed: int = 0, members: Sequence[Member] | None = None, cv_folds: int = 10
) -> CateEstimate:
    family = "binomial" if dataset.outcome_kind == "binary" else "gaussian"
    X = dataset.covariates
    XA = X.add_numeric("__treatment__", dataset.treatment.astype(float))
    model = fit_stacking(XA, dataset.outcome, family, cv_folds, derive_seed(seed, 0x5), members)
    tau = model.predict(X.add_numeric("__treatment__", np.ones(X.n))) - model.predict(
        X.add_numeric("__treatment__", np.zeros(X.n))
    )
    return CateEstimate(tau, "s_learner")


def cate_t_learner(
    dataset: TrialDataset, seed: int = 0, members: Sequence[Member] | None = None, cv_folds: int = 10
) -> CateEstimate:
    family = "binomial" if dataset.outcome_kind == "binary" else "gaussian"
    a = dataset.treatment
    models = []
    for arm in (0, 1):
        idx = np.flatnonzero(a == arm)
        if len(idx) < MIN_ARM:
            raise NuisanceFitError(f"arm {arm} has {len(idx)} samples; T-learner needs {MIN_ARM}")
        models.append(
            fit_stacking(dataset.covariates.subset(idx), dataset.outcome[idx], family, cv_folds,
                         derive_seed(seed, 0x7, arm), members)
        )
    X = dataset.covariates
    return CateEstimate(models[1].predict(X) - models[0].predict(X), "t_learner")
