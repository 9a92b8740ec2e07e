"""End-to-end analysis: global test, effect-modifier ranking and CATE for one dataset."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from ._rng import derive_seed
from .config import Config
from .data import TrialDataset
from .hettest import HetTestResult, global_test
from .metalearners import CateEstimate, CrossFitResult, ate_aipw, ate_gcomp, ate_ipw, crossfit
from .ranking import ImportanceRanking, cate_oob, rank_effect_modifiers

__all__ = ["DrPipelineResult", "run_dr_pipeline", "analyze", "write_analysis", "subgroup_table", "clean_json"]

REPORT_SCHEMA_VERSION = "1.0"
SUBGROUP_FIELDS = (
    "covariate", "bin", "n", "observed_effect", "observed_ci_lo", "observed_ci_hi",
    "dr_adjusted_effect", "overall_ate",
)


@dataclass(frozen=True)
class DrPipelineResult:
    crossfit: CrossFitResult
    cate: CateEstimate
    test: HetTestResult
    ranking: ImportanceRanking
    cate_oob: CateEstimate
    oob_fallback: np.ndarray


def run_dr_pipeline(
    dataset: TrialDataset,
    config: Config | None = None,
    seed: int = 0,
    learners: Sequence[str] = ("dr",),
    workers: int = 1,
) -> DrPipelineResult:
    """Cross-fitted DR-learner, global test on its pseudo-outcomes, then ranking."""
    config = config or Config()
    ml, lc = config.metalearner, config.learners
    members = lc.build()
    cf = crossfit(
        dataset, ml.folds, derive_seed(seed, 1), learners=tuple(learners), members=members,
        cv_folds=lc.cv_folds, propensity=ml.propensity, clip=(ml.clip_lo, ml.clip_hi), workers=workers,
    )
    psi = cf.pseudo["dr"]
    tc = config.test
    test = global_test(dataset.covariates, psi.psi, tc.statistic, tc.method, tc.B, derive_seed(seed, 2))
    rc = config.ranking
    ranking = rank_effect_modifiers(
        dataset.covariates, psi, rc.forest_params(), rc.n_perm_repeats, derive_seed(seed, 3)
    )
    oob, fallback = cate_oob(dataset.covariates, psi, ranking)
    return DrPipelineResult(cf, cf.cate["dr"], test, ranking, oob, fallback)


def clean_json(obj):
    """Replace non-finite floats by None and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _bins(dataset: TrialDataset, j: int) -> list[tuple[str, np.ndarray]]:
    X = dataset.covariates
    col = X.values[:, j]
    if X.levels[j] is not None:
        return [(str(level), col == code) for code, level in enumerate(X.levels[j])]
    edges = np.unique(np.quantile(col, [0, 0.25, 0.5, 0.75, 1.0]))
    if len(edges) == 1:
        return [(f"[{edges[0]:.6g}, {edges[0]:.6g}]", np.ones(len(col), dtype=bool))]
    out = []
    for b in range(len(edges) - 1):
        lo, hi = edges[b], edges[b + 1]
        mask = (col >= lo) & (col <= hi) if b == 0 else (col > lo) & (col <= hi)
        out.append((f"{'[' if b == 0 else '('}{lo:.6g}, {hi:.6g}]", mask))
    return out


def _observed_effect(y: np.ndarray, a: np.ndarray) -> tuple[float, float, float]:
    y1, y0 = y[a == 1], y[a == 0]
    if len(y1) == 0 or len(y0) == 0:
        return (math.nan,) * 3
    est = float(y1.mean() - y0.mean())
    if len(y1) < 2 or len(y0) < 2:
        return est, math.nan, math.nan
    se = math.sqrt(y1.var(ddof=1) / len(y1) + y0.var(ddof=1) / len(y0))
    z = stats.norm.ppf(0.975)
    return est, float(est - z * se), float(est + z * se)


def subgroup_table(dataset: TrialDataset, tau_hat: np.ndarray, covariates: Sequence[str], overall_ate: float) -> list[dict]:
    """Binned unadjusted effects next to the mean DR-learner CATE in each bin.

    Numeric covariates are cut at their quartiles, categorical ones by level.
    """
    rows = []
    for name in covariates:
        j = dataset.covariates.index(name)
        for label, mask in _bins(dataset, j):
            obs, lo, hi = _observed_effect(dataset.outcome[mask], dataset.treatment[mask])
            rows.append({
                "covariate": name, "bin": label, "n": int(mask.sum()),
                "observed_effect": obs, "observed_ci_lo": lo, "observed_ci_hi": hi,
                "dr_adjusted_effect": float(tau_hat[mask].mean()) if mask.any() else math.nan,
                "overall_ate": overall_ate,
            })
    return rows


def analyze(
    dataset: TrialDataset,
    config: Config | None = None,
    seed: int = 0,
    top_k: int | None = None,
    workers: int = 1,
) -> dict:
    """Run the full analysis and return the report as a JSON-ready dict.

    The keys ``cate`` and ``subgroups`` hold the per-subject and per-bin tables
    written alongside the report.
    """
    config = config or Config()
    top_k = config.ranking.top_k if top_k is None else top_k
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = run_dr_pipeline(dataset, config, seed, workers=workers)
    msgs = list(res.crossfit.warnings)
    for w in caught:
        text = str(w.message)
        if text not in msgs:
            msgs.append(text)
    nuis = res.crossfit.nuisance
    y, a = dataset.outcome, dataset.treatment
    ate = {
        "gcomp": ate_gcomp(nuis.mu0_hat, nuis.mu1_hat),
        "ipw": ate_ipw(y, a, nuis.pi_hat),
        "aipw": ate_aipw(y, a, nuis),
    }
    alpha = config.test.alpha
    evidence = (not res.test.degenerate) and res.test.p_value <= alpha
    n_fallback = int(res.oob_fallback.sum())
    if n_fallback:
        msgs.append(f"{n_fallback} samples were in-bag for every ranking tree; OOB CATE uses the full forest for them")
    if res.test.dropped_columns:
        msgs.append(f"global test dropped zero-variance columns: {', '.join(res.test.dropped_columns)}")
    if res.ranking.degenerate:
        msgs.append("ranking forest is degenerate (no splits); all scores are 0")

    rk = res.ranking
    top = rk.top_k(min(top_k, dataset.p))
    ranking = {
        "status": "evidence against homogeneity" if evidence else "no evidence against homogeneity",
        "degenerate": rk.degenerate,
        "n_perm_repeats": rk.n_perm_repeats,
        "top_k": top,
        "covariates": [
            {"covariate": rk.names[j], "score": float(rk.scores[j]), "rank": int(rk.rank[j])}
            for j in rk.order
        ],
    }
    ids = dataset.ids or tuple(str(i + 1) for i in range(dataset.n))
    cate_rows = [
        {"id": ids[i], "tau_hat": float(res.cate.tau_hat[i]), "tau_oob": float(res.cate_oob.tau_hat[i]),
         "psi": float(res.crossfit.pseudo["dr"].psi[i])}
        for i in range(dataset.n)
    ]
    subgroups = subgroup_table(dataset, res.cate.tau_hat, top, ate["aipw"])
    test = res.test.to_dict()
    test.update(alpha=alpha, reject=evidence)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "n": dataset.n,
        "p": dataset.p,
        "outcome_kind": dataset.outcome_kind,
        "ate": ate,
        "global_test": test,
        "ranking": ranking,
        "cate": {"source": res.cate.source, "K": res.cate.K, "mean": float(res.cate.tau_hat.mean()),
                 "sd": float(res.cate.tau_hat.std()), "file": "cate.csv"},
        "subgroup_displays": {"covariates": top, "file": "subgroups.csv", "rows": subgroups},
        "provenance": {
            "seed": seed,
            "config_hash": config.hash(),
            "config": config.to_dict(),
            "propensity_mode": nuis.mode,
            "clip_count": nuis.clip_count,
            "oob_fallback_count": n_fallback,
            "folds": nuis.folds.K,
            "warnings": msgs,
        },
    }
    return {"report": clean_json(report), "cate": cate_rows, "ranking": ranking["covariates"], "subgroups": subgroups}


def _cell(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else ""
    return v


def _write_csv(path: Path, fields: Sequence[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_cell(r[k]) for k in fields])


def write_analysis(result: dict, out: str | Path) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result["report"], indent=2, sort_keys=True) + "\n")
    _write_csv(out / "cate.csv", ("id", "tau_hat", "tau_oob", "psi"), result["cate"])
    _write_csv(out / "ranking.csv", ("covariate", "score", "rank"), result["ranking"])
    _write_csv(out / "subgroups.csv", SUBGROUP_FIELDS, result["subgroups"])
    return out
