"""Simulation benchmark: synthetic trials, calibration and replicate execution."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special, stats

from ._rng import derive_rng, derive_seed
from .config import Config, SimbenchConfig
from .data import Covariates, TrialDataset

__all__ = [
    "CovariateModel",
    "ScenarioSpec",
    "Calibration",
    "BenchmarkReport",
    "TRUTH",
    "REQUIRED",
    "generate_covariates",
    "f_prog",
    "f_pred",
    "scenario_response",
    "true_cate",
    "simulate_trial",
    "calibrate_s",
    "calibrate_beta",
    "calibrate",
    "run_benchmark",
    "write_benchmark",
]

# 0-based positions of the categorical columns (X1, X2, X4, X6, X8, X20, X25, X28)
DEFAULT_CATEGORICAL = (0, 1, 3, 5, 7, 19, 24, 27)
YN = ("N", "Y")

TRUTH = {1: ("X11",), 2: ("X14",), 3: ("X14", "X1"), 4: ("X14", "X4")}
REQUIRED = {
    1: {"X1": "categorical", "X11": "numeric"},
    2: {"X8": "categorical", "X14": "numeric"},
    3: {"X1": "categorical", "X14": "numeric", "X17": "numeric"},
    4: {"X4": "categorical", "X11": "numeric", "X14": "numeric"},
}
# scaling factors printed for the source covariate distribution, kept for side-by-side reporting
REFERENCE_S = {1: 2.30, 2: 1.42, 3: 1.39, 4: 2.89}


@dataclass(frozen=True)
class CovariateModel:
    """Gaussian-copula covariates: AR(1) latent normals mapped to [0, 1] or Y/N."""

    p: int = 30
    rho: float = 0.3
    categorical: tuple[int, ...] = DEFAULT_CATEGORICAL

    def __post_init__(self):
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if any(not 0 <= j < self.p for j in self.categorical):
            raise ValueError("categorical index out of range")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f"X{j + 1}" for j in range(self.p))


def _latent(n: int, p: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((p, n))  # column-major for the recursion
    c = math.sqrt(1 - rho * rho)
    for j in range(1, p):
        z[j] *= c
        z[j] += rho * z[j - 1]
    return z.T


def _covariates_from_latent(z: np.ndarray, model: CovariateModel, keep: Sequence[int] | None = None) -> Covariates:
    cols = list(range(z.shape[1])) if keep is None else sorted(keep)
    cat = np.isin(cols, model.categorical)
    zk = z[:, cols]
    values = np.empty(zk.shape)
    values[:, cat] = zk[:, cat] > 0
    values[:, ~cat] = special.ndtr(zk[:, ~cat])
    names = tuple(f"X{j + 1}" for j in cols)
    kinds = tuple("categorical" if c else "numeric" for c in cat)
    levels = tuple(YN if c else None for c in cat)
    return Covariates(values, names, kinds, levels)


def generate_covariates(n: int, model: CovariateModel | None = None, seed: int = 0) -> Covariates:
    model = model or CovariateModel()
    z = _latent(n, model.p, model.rho, derive_rng(seed, 0xC0))
    return _covariates_from_latent(z, model)


def _col(X: Covariates, name: str, scenario: int) -> np.ndarray:
    want = REQUIRED[scenario][name]
    try:
        j = X.index(name)
    except ValueError:
        raise ValueError(f"scenario {scenario} needs column {name}") from None
    if X.kinds[j] != want:
        raise ValueError(f"scenario {scenario} needs {name} to be {want}")
    if want == "categorical" and tuple(X.levels[j]) != YN:
        raise ValueError(f"{name} must have levels {YN}")
    return X.values[:, j]


def _is(X, name, level, scenario) -> np.ndarray:
    return (_col(X, name, scenario) == YN.index(level)).astype(float)


def f_prog(X: Covariates, scenario: int) -> np.ndarray:
    """Prognostic part at unit scale (s = 1)."""
    if scenario == 1:
        return 0.5 * _is(X, "X1", "Y", 1) + _col(X, "X11", 1)
    if scenario == 2:
        return _col(X, "X14", 2) - _is(X, "X8", "N", 2)
    if scenario == 3:
        return _is(X, "X1", "N", 3) - 0.5 * _col(X, "X17", 3)
    if scenario == 4:
        return _col(X, "X11", 4) - _col(X, "X14", 4)
    raise ValueError(f"unknown scenario {scenario}")


def f_pred(X: Covariates, scenario: int) -> np.ndarray:
    if scenario == 1:
        return special.ndtr(20 * (_col(X, "X11", 1) - 0.5))
    if scenario == 2:
        return _col(X, "X14", 2).copy()
    if scenario == 3:
        return ((_col(X, "X14", 3) > 0.25) & (_is(X, "X1", "N", 3) == 1)).astype(float)
    if scenario == 4:
        return ((_col(X, "X14", 4) > 0.3) | (_is(X, "X4", "Y", 4) == 1)).astype(float)
    raise ValueError(f"unknown scenario {scenario}")


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    s: float
    beta0: float
    beta1: float
    n: int = 500
    outcome_kind: str = "continuous"
    seed: int = 0

    def __post_init__(self):
        if self.id not in TRUTH:
            raise ValueError(f"scenario id must be 1..4 (got {self.id})")
        if self.s < 0:
            raise ValueError("s must be nonnegative")
        if self.outcome_kind != "continuous":
            raise ValueError("only continuous outcomes are simulated")


def true_cate(X: Covariates, spec: ScenarioSpec) -> np.ndarray:
    return spec.beta0 + spec.beta1 * f_pred(X, spec.id)


def scenario_response(X: Covariates, A, spec: ScenarioSpec, seed: int = 0, noise: np.ndarray | None = None) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if noise is None:
        noise = derive_rng(seed, 0xE5).standard_normal(X.n)
    return spec.s * f_prog(X, spec.id) + A * true_cate(X, spec) + noise


def simulate_trial(spec: ScenarioSpec, seed: int, model: CovariateModel | None = None) -> tuple[TrialDataset, np.ndarray]:
    """Draw one trial with 1:1 Bernoulli randomization; returns data and the true CATE."""
    X = generate_covariates(spec.n, model, seed)
    rng = derive_rng(seed, 0xA7)
    while True:
        A = rng.binomial(1, 0.5, spec.n)
        if 0 < A.sum() < spec.n:
            break
    y = scenario_response(X, A, spec, seed)
    ids = tuple(f"s{i + 1}" for i in range(spec.n))
    return TrialDataset(X, A, y, "continuous", ids), true_cate(X, spec)


# ---------------------------------------------------------------------------
# calibration

def _needed_columns(scenario: int) -> int:
    return max(int(name[1:]) for name in REQUIRED[scenario])


def _used(scenario: int) -> list[int]:
    return [int(name[1:]) - 1 for name in REQUIRED[scenario]]


def calibrate_s(scenario: int, target_r2: float = 0.32, seed: int = 0, n: int = 100_000,
                model: CovariateModel | None = None) -> float:
    """Scale making var(s f_prog) / (var(s f_prog) + 1) equal the target control-arm R^2."""
    if not 0 <= target_r2 < 1:
        raise ValueError("target_r2 must lie in [0, 1)")
    if target_r2 == 0:
        return 0.0
    model = model or CovariateModel()
    p = _needed_columns(scenario)
    X = _covariates_from_latent(_latent(n, p, model.rho, derive_rng(seed, 0x5C)), model, _used(scenario))
    sd = float(np.std(f_prog(X, scenario)))
    return math.sqrt(target_r2 / (1 - target_r2)) / sd


def _draw_batches(scenario, n, reps, model, seed, chunk=1000):
    """Yield (f_prog, f_pred, A, eps) blocks shaped (reps_chunk, n)."""
    p = _needed_columns(scenario)
    for c, start in enumerate(range(0, reps, chunk)):
        r = min(chunk, reps - start)
        rng = derive_rng(seed, 0xBE, c)
        X = _covariates_from_latent(_latent(r * n, p, model.rho, rng), model, _used(scenario))
        fp, fd = f_prog(X, scenario).reshape(r, n), f_pred(X, scenario).reshape(r, n)
        A = rng.binomial(1, 0.5, (r, n)).astype(float)
        eps = rng.standard_normal((r, n))
        yield fp, fd, A, eps


@dataclass
class Calibration:
    scenario: int
    s: float
    beta1_star: float
    mean_f_pred: float
    n: int
    reps: int
    seed: int
    target_r2: float
    power_interaction: float = float("nan")
    # per-replicate sufficient statistics for the overall-effect test
    _gauss: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    Z_INTERACTION = float(stats.norm.ppf(0.95))  # two-sided 0.10
    Z_OVERALL = float(stats.norm.ppf(0.975))  # two-sided 0.05

    def overall_power(self, beta0: float, beta1: float) -> float:
        g = self._gauss
        m1u = (g["su"] + beta1 * g["sf"]) / g["n1"]
        ss1 = g["suu"] + 2 * beta1 * g["suf"] + beta1**2 * g["sff"]
        v1 = (ss1 - g["n1"] * m1u**2) / (g["n1"] - 1)
        z = (m1u + beta0 - g["m0"]) / np.sqrt(v1 / g["n1"] + g["v0"] / g["n0"])
        return float(np.mean(np.abs(z) > self.Z_OVERALL))

    def beta0(self, beta1: float) -> float:
        """beta0 giving overall-effect power 0.5 with a positive total effect."""
        key = round(float(beta1), 12)
        if key in self._cache:
            return self._cache[key]
        lo = -beta1 * self.mean_f_pred
        width = 0.5
        while self.overall_power(lo + width, beta1) < 0.5:
            width *= 2
            if width > 1e6:
                raise RuntimeError("overall power target unreachable")
        f = lambda b0: self.overall_power(b0, beta1) - 0.5
        b0 = float(optimize.brentq(f, lo, lo + width, xtol=1e-10))
        self._cache[key] = b0
        return b0

    def grid(self, multipliers: Sequence[float] = (0, 0.5, 1, 1.5, 2)) -> list[dict]:
        out = []
        for m in multipliers:
            b1 = float(m) * self.beta1_star
            out.append({"multiplier": float(m), "beta1": b1, "beta0": self.beta0(b1)})
        return out

    def spec(self, multiplier: float, n: int | None = None, seed: int = 0) -> ScenarioSpec:
        b1 = multiplier * self.beta1_star
        return ScenarioSpec(self.scenario, self.s, self.beta0(b1), b1, n or self.n, seed=seed)

    def record(self, multipliers: Sequence[float] = (0, 0.5, 1, 1.5, 2)) -> dict:
        return {
            "scenario": self.scenario,
            "s": self.s,
            "s_reference": REFERENCE_S[self.scenario],
            "beta1_star": self.beta1_star,
            "beta0_table": self.grid(multipliers),
            "mean_f_pred": self.mean_f_pred,
            "power_interaction_at_beta1_star": self.power_interaction,
            "monte_carlo": {
                "n": self.n, "replicates": self.reps, "seed": self.seed, "target_r2": self.target_r2,
                "interaction_test": "oracle OLS z-test, two-sided alpha 0.10, target power 0.80",
                "overall_test": "two-sample Gauss test, two-sided alpha 0.05, target power 0.50",
            },
            "note": "constants recalibrated for the Gaussian-copula covariate model; not comparable in absolute terms",
        }


def calibrate_beta(scenario: int, s: float, n: int = 500, seed: int = 0, reps: int = 20_000,
                   model: CovariateModel | None = None, target_r2: float = float("nan")) -> Calibration:
    """Monte Carlo calibration of beta1* and beta0(beta1) with common random numbers.

    In the correctly specified model y ~ 1 + f_prog + A + A f_pred the OLS
    error of the interaction coefficient and its standard error do not
    depend on (beta0, beta1), so one batch of null replicates yields the
    power curve for every beta1. The overall-effect test is handled the
    same way through per-replicate sufficient statistics.
    """
    model = model or CovariateModel()
    errs, ses = [], []
    g = {k: [] for k in ("n1", "n0", "su", "suu", "sf", "sff", "suf", "m0", "v0")}
    fsum, fcount = 0.0, 0
    for fp, fd, A, eps in _draw_batches(scenario, n, reps, model, seed):
        u = s * fp + eps
        D = np.stack([np.ones_like(fp), fp, A, A * fd], axis=-1)
        Dt = D.transpose(0, 2, 1)
        inv = np.linalg.inv(Dt @ D)
        b = (inv @ (Dt @ u[..., None]))[..., 0]
        resid = u - (D @ b[..., None])[..., 0]
        sigma2 = (resid**2).sum(axis=1) / (n - 4)
        errs.append(b[:, 3])
        ses.append(np.sqrt(sigma2 * inv[:, 3, 3]))
        n1 = A.sum(axis=1)
        n0 = n - n1
        g["n1"].append(n1)
        g["n0"].append(n0)
        g["su"].append((A * u).sum(axis=1))
        g["suu"].append((A * u * u).sum(axis=1))
        g["sf"].append((A * fd).sum(axis=1))
        g["sff"].append((A * fd * fd).sum(axis=1))
        g["suf"].append((A * u * fd).sum(axis=1))
        u0 = np.where(A == 0, u, 0.0)
        m0 = u0.sum(axis=1) / n0
        g["m0"].append(m0)
        g["v0"].append((((u - m0[:, None]) ** 2) * (1 - A)).sum(axis=1) / (n0 - 1))
        fsum += fd.sum()
        fcount += fd.size
    err, se = np.concatenate(errs), np.concatenate(ses)
    gauss = {k: np.concatenate(v) for k, v in g.items()}

    zc = Calibration.Z_INTERACTION
    power = lambda b1: float(np.mean(np.abs(b1 + err) / se > zc))
    hi = float(np.median(se))
    while power(hi) < 0.8:
        hi *= 2
        if hi > 1e8:
            raise RuntimeError("interaction power target unreachable")
    b1 = float(optimize.brentq(lambda v: power(v) - 0.8, 0.0, hi, xtol=1e-10))
    # the power curve is a step function; take the smallest beta1 attaining 0.8
    if power(b1) < 0.8:
        b1 = float(np.nextafter(b1, np.inf))
        while power(b1) < 0.8:
            b1 += 1e-10
    return Calibration(scenario, s, b1, fsum / fcount, n, reps, seed, target_r2, power(b1), gauss)


def calibrate(scenario: int, seed: int = 0, target_r2: float = 0.32, n: int = 500,
              calib_n: int = 100_000, reps: int = 20_000, model: CovariateModel | None = None) -> Calibration:
    s = calibrate_s(scenario, target_r2, derive_seed(seed, 1), calib_n, model)
    return calibrate_beta(scenario, s, n, derive_seed(seed, 2), reps, model, target_r2)


# ---------------------------------------------------------------------------
# benchmark

REPLICATE_FIELDS = (
    "scenario", "multiplier", "beta1", "beta0", "replicate", "method", "status",
    "global_p", "top_covariate", "top_in_truth", "mse", "error",
)


@dataclass
class BenchmarkReport:
    config: dict
    seed: int
    calibrations: dict[int, dict]
    rows: list[dict]
    aggregates: list[dict]

    def report_dict(self) -> dict:
        from .analysis import clean_json

        return clean_json({
            "schema_version": "1.0",
            "seed": self.seed,
            "config_hash": Config.from_dict(self.config).hash(),
            "calibration": {str(k): v for k, v in self.calibrations.items()},
            "truth_sets": {str(k): list(v) for k, v in TRUTH.items()},
            "aggregates": self.aggregates,
        })

    def aggregate(self, scenario: int, multiplier: float, method: str) -> dict:
        for a in self.aggregates:
            if a["scenario"] == scenario and a["multiplier"] == multiplier and a["method"] == method:
                return a
        raise KeyError((scenario, multiplier, method))

    def values(self, scenario: int, multiplier: float, method: str, key: str) -> np.ndarray:
        return np.array([
            r[key] for r in self.rows
            if r["scenario"] == scenario and r["multiplier"] == multiplier
            and r["method"] == method and r["status"] == "ok"
        ])


def _mse(tau_hat, tau) -> float:
    return float(np.mean((np.asarray(tau_hat) - tau) ** 2))


def _row(base: dict, method: str, truth, p=float("nan"), top="", mse=float("nan"), error="") -> dict:
    row = dict(base)
    row.update(
        method=method, status="failed" if error else "ok", global_p=p, top_covariate=top,
        top_in_truth=(top in truth) if top else "", mse=mse, error=error,
    )
    return row


def run_replicate(task: tuple) -> list[dict]:
    """Simulate one trial and run every configured method on it."""
    from .analysis import run_dr_pipeline
    from .baselines import multivariate_baseline, univariate_baseline

    config, spec, base, rep_seed = task
    sim: SimbenchConfig = config.simbench
    data, tau = simulate_trial(spec, derive_seed(rep_seed, 0))
    truth = TRUTH[spec.id]
    rows = []
    method_seed = derive_seed(rep_seed, 1)
    for method in sim.methods:
        if method == "dr_learner":
            variants = tuple(v for v in sim.cate_variants if v in ("ipw", "t"))
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    res = run_dr_pipeline(data, config, method_seed, learners=("dr",) + variants)
            except Exception as exc:  # recorded, not raised
                rows.append(_row(base, "dr_learner", truth, error=f"{type(exc).__name__}: {exc}"))
                continue
            rows.append(_row(base, "dr_learner", truth, res.test.p_value, res.ranking.top,
                             _mse(res.cate.tau_hat, tau)))
            if "oob" in sim.cate_variants:
                rows.append(_row(base, "dr_oob", truth, mse=_mse(res.cate_oob.tau_hat, tau)))
            for v in variants:
                name = {"ipw": "ipw_learner", "t": "t_learner"}[v]
                rows.append(_row(base, name, truth, mse=_mse(res.crossfit.cate[v].tau_hat, tau)))
        else:
            fn = univariate_baseline if method == "univariate" else multivariate_baseline
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    out = fn(data)
            except Exception as exc:
                rows.append(_row(base, method, truth, error=f"{type(exc).__name__}: {exc}"))
                continue
            rows.append(_row(base, method, truth, out.global_p, out.top_covariate, _mse(out.tau_hat, tau)))
    return rows


def _aggregate(rows: list[dict], alpha: float, p_cov: int, names: Sequence[str]) -> list[dict]:
    keys = []
    for r in rows:
        k = (r["scenario"], r["multiplier"], r["method"])
        if k not in keys:
            keys.append(k)
    out = []
    for scen, mult, method in keys:
        group = [r for r in rows if (r["scenario"], r["multiplier"], r["method"]) == (scen, mult, method)]
        ok = [r for r in group if r["status"] == "ok"]
        agg = {
            "scenario": scen, "multiplier": mult, "beta1": group[0]["beta1"], "beta0": group[0]["beta0"],
            "method": method, "n_ok": len(ok), "n_failed": len(group) - len(ok),
        }
        p = np.array([r["global_p"] for r in ok], dtype=float)
        p = p[np.isfinite(p)]
        if len(p):
            agg.update(
                rejection_rate=float(np.mean(p <= alpha)),
                mean_p=float(p.mean()),
                se_p=float(p.std(ddof=1) / math.sqrt(len(p))) if len(p) > 1 else float("nan"),
                ks_uniform_p=float(stats.kstest(p, "uniform").pvalue),
            )
        tops = [r["top_covariate"] for r in ok if r["top_covariate"]]
        if tops:
            counts = {name: tops.count(name) for name in names}
            agg.update(
                selection_counts=counts,
                selection_gof_p=float(stats.chisquare(list(counts.values())).pvalue),
                p_top_in_truth=float(np.mean([r["top_in_truth"] is True for r in ok if r["top_covariate"]])),
            )
        mse = np.array([r["mse"] for r in ok], dtype=float)
        mse = mse[np.isfinite(mse)]
        if len(mse):
            agg.update(
                mean_mse=float(mse.mean()),
                se_mse=float(mse.std(ddof=1) / math.sqrt(len(mse))) if len(mse) > 1 else float("nan"),
            )
        out.append(agg)
    return out


def run_benchmark(
    config: Config | None = None,
    seed: int = 0,
    workers: int = 1,
    calibrations: dict[int, Calibration] | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> BenchmarkReport:
    """Run every (scenario, beta1 multiplier, replicate) cell of the configured grid.

    Replicate r of cell (scenario, g) draws its data and method seeds from
    ``(seed, scenario, g, r)``, so results do not depend on ``workers``.
    """
    config = config or Config()
    sim = config.simbench
    calibrations = dict(calibrations or {})
    for scen in sim.scenarios:
        if scen not in calibrations:
            calibrations[scen] = calibrate(
                scen, derive_seed(seed, 0xCA, scen), sim.target_r2, sim.n, sim.calib_n, sim.calib_reps
            )
    tasks = []
    for scen in sim.scenarios:
        cal = calibrations[scen]
        for g, mult in enumerate(sim.multipliers):
            spec = cal.spec(float(mult), sim.n)
            for r in range(sim.replicates):
                base = {"scenario": scen, "multiplier": float(mult), "beta1": spec.beta1,
                        "beta0": spec.beta0, "replicate": r}
                tasks.append((config, spec, base, derive_seed(seed, scen, g, r)))
    rows: list[dict] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, part in enumerate(pool.map(run_replicate, tasks, chunksize=4)):
                rows.extend(part)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, task in enumerate(tasks):
            rows.extend(run_replicate(task))
            if progress:
                progress(i + 1, len(tasks))
    names = CovariateModel().names
    aggregates = _aggregate(rows, sim.alpha, len(names), names)
    records = {scen: calibrations[scen].record(sim.multipliers) for scen in sim.scenarios}
    return BenchmarkReport(config.to_dict(), seed, records, rows, aggregates)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_benchmark(report: BenchmarkReport, out: str | Path, extra_config: dict | None = None) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.report_dict(), indent=2, sort_keys=True) + "\n")
    with open(out / "replicates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATE_FIELDS)
        for r in report.rows:
            w.writerow([_fmt(r[k]) for k in REPLICATE_FIELDS])
    from .analysis import clean_json

    echo = {"config": report.config, "seed": report.seed, "calibration": {str(k): v for k, v in report.calibrations.items()}}
    echo.update(extra_config or {})
    (out / "config.json").write_text(json.dumps(clean_json(echo), indent=2, sort_keys=True) + "\n")
    return out
