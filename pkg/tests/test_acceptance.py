"""Acceptance gate: each test prints one PASS/FAIL line and then asserts.

The simulation criteria share a few benchmark runs (module fixtures). On a
single core the whole file takes roughly 20 minutes.
"""

import itertools
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import record_criterion
from tehdr.cli import cmd_analyze, cmd_benchmark
from tehdr.config import Config, LearnerConfig, RankingConfig, SimbenchConfig, TestConfig
from tehdr.data import Covariates
from tehdr.hettest import global_test
from tehdr.learners import fit_penalized_linear, fit_stacking
from tehdr.learners.penalized import lambda_sequence
from tehdr.metalearners import NuisanceFit, ate_aipw, ate_ipw, psi_dr1, psi_dr2, pseudo_outcome_dr, pseudo_outcome_ipw
from tehdr.simbench import calibrate, f_pred, f_prog, generate_covariates, run_benchmark

SEED = 20261016


def _check(number, title, passed, detail):
    record_criterion(number, title, bool(passed), detail)
    assert passed, detail


# --- shared simulation runs -------------------------------------------------

@pytest.fixture(scope="module")
def calibration():
    return calibrate(2, seed=SEED)


def _desk_config(**sim):
    return Config(
        learners=LearnerConfig(members=("lasso",)),
        test=TestConfig(B=999),
        ranking=RankingConfig(ntree=200),
        simbench=SimbenchConfig(scenarios=(2,), methods=("dr_learner",), cate_variants=(), **sim),
    )


@pytest.fixture(scope="module")
def null_run(calibration):
    """beta1 = 0, n = 300, 500 replicates (the first 200 serve the type-I check)."""
    cfg = _desk_config(multipliers=(0.0,), replicates=500, n=300)
    return run_benchmark(cfg, seed=SEED + 1, calibrations={2: calibration})


@pytest.fixture(scope="module")
def grid_run(calibration):
    cfg = _desk_config(multipliers=(0.0, 1.0, 2.0), replicates=200, n=500)
    return run_benchmark(cfg, seed=SEED + 2, calibrations={2: calibration})


@pytest.fixture(scope="module")
def cate_run(calibration):
    cfg = Config(
        learners=LearnerConfig(members=("lasso", "cforest"), forest_ntree=100),
        test=TestConfig(B=199),
        ranking=RankingConfig(ntree=200),
        simbench=SimbenchConfig(scenarios=(2,), multipliers=(1.0,), replicates=20, n=500,
                                methods=("dr_learner",), cate_variants=("oob", "ipw", "t")),
    )
    return run_benchmark(cfg, seed=SEED + 3, calibrations={2: calibration})


# --- 1 ---------------------------------------------------------------------

def test_criterion_01_pseudo_outcome_forms_agree():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    m = 10_000
    y = rng.normal(scale=3.0, size=m)
    a = rng.integers(0, 2, m)
    pi = rng.uniform(0.025, 0.975, m)
    mu0, mu1 = rng.normal(size=m), rng.normal(size=m)
    gap = float(np.max(np.abs(psi_dr1(y, a, pi, mu0, mu1) - psi_dr2(y, a, pi, mu0, mu1))))
    elapsed = time.perf_counter() - t0
    _check(1, "pseudo-outcome equivalence", gap < 1e-10 and elapsed < 1.0,
           f"max |dr1 - dr2| = {gap:.2e} over {m} tuples in {elapsed:.3f}s")


# --- 2 ---------------------------------------------------------------------

def test_criterion_02_ate_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 20)
    worst_dr = worst_ipw = 0.0
    for _ in range(100):
        n = 200
        a = rng.integers(0, 2, n)
        y = rng.normal(size=n) + a
        nuis = NuisanceFit.from_arrays(rng.uniform(0.1, 0.9, n), rng.normal(size=n), rng.normal(size=n))
        pi, mu0, mu1 = nuis.pi_hat, nuis.mu0_hat, nuis.mu1_hat
        # textbook forms, written independently of the package
        aipw = np.mean(mu1 - mu0 + a * (y - mu1) / pi - (1 - a) * (y - mu0) / (1 - pi))
        ipw = np.mean(a * y / pi - (1 - a) * y / (1 - pi))
        psi = pseudo_outcome_dr(y, a, nuis).psi
        worst_dr = max(worst_dr, abs(psi.mean() - ate_aipw(y, a, nuis)), abs(ate_aipw(y, a, nuis) - aipw))
        worst_ipw = max(worst_ipw, abs(pseudo_outcome_ipw(y, a, pi).psi.mean() - ate_ipw(y, a, pi)),
                        abs(ate_ipw(y, a, pi) - ipw))
    elapsed = time.perf_counter() - t0
    ok = worst_dr < 1e-12 and worst_ipw < 1e-12 and elapsed < 1.0
    _check(2, "ATE identities", ok,
           f"max DR gap {worst_dr:.1e}, max IPW gap {worst_ipw:.1e} over 100 datasets in {elapsed:.3f}s")


# --- 3 ---------------------------------------------------------------------

def _enumeration_p(g: np.ndarray, psi: np.ndarray, kind: str) -> float:
    """Permutation p-value by brute force, with moments taken over the orderings themselves."""
    perms = np.array(list(itertools.permutations(range(len(psi)))))
    T = np.stack([g.T @ psi[p] for p in perms])  # (n!, q)
    mu, sd = T.mean(axis=0), T.std(axis=0)
    z = (T - mu) / sd
    s = np.abs(z).max(axis=1) if kind == "max_type" else (z**2).sum(axis=1)
    obs = s[0]  # the identity ordering comes first
    return float(np.mean(s >= obs - 1e-10 * max(1.0, abs(obs))))


def test_criterion_03_exhaustive_permutation_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 30)
    details, ok = [], True
    cases = [
        ("numeric", 6, "max_type"),
        ("numeric_ties", 7, "max_type"),
        ("categorical", 7, "quadratic"),
        ("categorical", 5, "max_type"),
    ]
    for label, n, kind in cases:
        psi = rng.normal(size=n)
        if label.startswith("numeric"):
            x = rng.normal(size=n) if label == "numeric" else rng.integers(0, 3, n).astype(float)
            X = Covariates.numeric(x[:, None], ["x"])
            G = stats.rankdata(x)[:, None]
        else:
            x = np.array([0, 1, 2] * 3)[:n].astype(float)
            X = Covariates(x[:, None], ("c",), ("categorical",), (("u", "v", "w"),))
            G = np.column_stack([x == 1, x == 2]).astype(float)
        oracle = _enumeration_p(G, psi, kind)
        exact = global_test(X, psi, kind, method="exact").p_value
        mc = global_test(X, psi, kind, method="permutation_mc", B=9999, seed=n).p_value
        band = 3 * math.sqrt(oracle * (1 - oracle) / 9999)
        case_ok = abs(exact - oracle) < 1e-12 and abs(mc - oracle) <= band
        ok &= case_ok
        details.append(f"{label}(n={n},{kind}) oracle={oracle:.4f} exact={exact:.4f} mc={mc:.4f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10
    _check(3, "exhaustive permutation oracle", ok, "; ".join(details) + f"; {elapsed:.1f}s")


# --- 4 ---------------------------------------------------------------------

def test_criterion_04_type_one_error(null_run):
    p = null_run.values(2, 0.0, "dr_learner", "global_p")[:200]
    rate = float(np.mean(p <= 0.10))
    ks = float(stats.kstest(p, "uniform").pvalue)
    ok = len(p) == 200 and 0.04 <= rate <= 0.16 and ks > 0.01
    _check(4, "type-I error at beta1 = 0", ok, f"rejection rate {rate:.3f} (R={len(p)}), KS uniformity p={ks:.3f}")


# --- 5 ---------------------------------------------------------------------

def test_criterion_05_power_monotone(grid_run):
    means, ses = [], []
    for m in (0.0, 1.0, 2.0):
        p = grid_run.values(2, m, "dr_learner", "global_p")
        means.append(float(p.mean()))
        ses.append(float(p.std(ddof=1) / math.sqrt(len(p))))
    steps = [(means[i] - means[i + 1], math.hypot(ses[i], ses[i + 1])) for i in range(2)]
    ok = all(d > se for d, se in steps)
    _check(5, "power monotonicity", ok,
           "mean p at {0, b1*, 2 b1*} = " + ", ".join(f"{v:.3f}" for v in means)
           + "; drops " + ", ".join(f"{d:.3f} (se {se:.3f})" for d, se in steps))


# --- 6 ---------------------------------------------------------------------

def test_criterion_06_ranking_unbiased(null_run):
    agg = null_run.aggregate(2, 0.0, "dr_learner")
    counts = np.array(list(agg["selection_counts"].values()), dtype=float)
    total = counts.sum()
    gof = float(stats.chisquare(counts).pvalue)
    top_freq = float(counts.max() / total)
    ok = len(counts) == 30 and total == 500 and gof > 0.01 and top_freq < 2.5 / 30
    _check(6, "ranking unbiasedness at beta1 = 0", ok,
           f"chi-square GOF p={gof:.3f} over {int(total)} selections; max frequency {top_freq:.3f} (< {2.5 / 30:.3f})")


# --- 7 ---------------------------------------------------------------------

def test_criterion_07_ranking_power(grid_run):
    hit = grid_run.aggregate(2, 2.0, "dr_learner")["p_top_in_truth"]
    _check(7, "ranking power at 2 b1*", hit >= 0.33, f"P(top = X14) = {hit:.3f} (need >= 0.33)")


# --- 8 and 9 ---------------------------------------------------------------

def _paired(run, a: str, b: str):
    x = run.values(2, 1.0, a, "mse")
    y = run.values(2, 1.0, b, "mse")
    d = x - y
    return float(x.mean()), float(y.mean()), float(d.std(ddof=1) / math.sqrt(len(d)))


def test_criterion_08_crossfit_cate_vs_oob(cate_run):
    dr, oob, se = _paired(cate_run, "dr_learner", "dr_oob")
    _check(8, "cross-fitted CATE vs OOB forest CATE", dr <= oob + se,
           f"mean MSE dr_crossfit {dr:.4f} vs oob {oob:.4f} (paired MC se {se:.4f}, 20 seeds)")


def test_criterion_09_meta_learner_ordering(cate_run):
    dr, ipw, se_i = _paired(cate_run, "dr_learner", "ipw_learner")
    _, t, se_t = _paired(cate_run, "dr_learner", "t_learner")
    ok = dr <= ipw + se_i and dr <= t + se_t
    _check(9, "DR vs IPW and T learners", ok,
           f"mean MSE DR {dr:.4f}, IPW {ipw:.4f} (se {se_i:.4f}), T {t:.4f} (se {se_t:.4f}), 20 seeds")


# --- 10 --------------------------------------------------------------------

def test_criterion_10_calibration_replay(calibration):
    """Fresh 10^4-replicate replay through the public generator with plain numpy tests."""
    cal, n, reps, chunk = calibration, calibration.n, 10_000, 250
    grid = cal.grid()
    inter_hits = 0
    overall_hits = np.zeros(len(grid))
    b1s = cal.beta1_star
    for c in range(reps // chunk):
        X = generate_covariates(n * chunk, seed=SEED + 1000 + c)
        fp, fd = f_prog(X, 2).reshape(chunk, n), f_pred(X, 2).reshape(chunk, n)
        r = np.random.default_rng([SEED, 10, c])
        A = r.binomial(1, 0.5, (chunk, n)).astype(float)
        eps = r.standard_normal((chunk, n))
        for k, row in enumerate(grid):
            y = cal.s * fp + A * (row["beta0"] + row["beta1"] * fd) + eps
            n1 = A.sum(axis=1)
            m1 = (A * y).sum(axis=1) / n1
            m0 = ((1 - A) * y).sum(axis=1) / (n - n1)
            v1 = (A * (y - m1[:, None]) ** 2).sum(axis=1) / (n1 - 1)
            v0 = ((1 - A) * (y - m0[:, None]) ** 2).sum(axis=1) / (n - n1 - 1)
            z = (m1 - m0) / np.sqrt(v1 / n1 + v0 / (n - n1))
            overall_hits[k] += np.sum(np.abs(z) > stats.norm.ppf(0.975))
        y = cal.s * fp + A * (cal.beta0(b1s) + b1s * fd) + eps
        for i in range(chunk):
            D = np.column_stack([np.ones(n), fp[i], A[i], A[i] * fd[i]])
            coef, rss, *_ = np.linalg.lstsq(D, y[i], rcond=None)
            cov = rss[0] / (n - 4) * np.linalg.inv(D.T @ D)
            inter_hits += abs(coef[3] / math.sqrt(cov[3, 3])) > stats.norm.ppf(0.95)
    p_inter = inter_hits / reps
    p_overall = overall_hits / reps
    ok = abs(p_inter - 0.80) <= 0.02 and np.all(np.abs(p_overall - 0.50) <= 0.02)
    _check(10, "calibration self-consistency", ok,
           f"interaction power {p_inter:.4f} at b1*; overall power by grid point "
           + ", ".join(f"{v:.4f}" for v in p_overall))


# --- 11 --------------------------------------------------------------------

class _Fixed:
    def __init__(self, values):
        self.values = values

    def predict(self, X):
        return self.values[np.asarray(X.values[:, -1], dtype=int)]


class _Member:
    def __init__(self, name, values):
        self.name, self.values = name, values

    def fit(self, X, y, family, seed):
        return _Fixed(self.values)


def test_criterion_11_numerical_learner_checks():
    rng = np.random.default_rng(SEED + 110)
    n, q = 200, 30
    X = rng.normal(size=(n, q))
    beta = np.zeros(q)
    beta[:4] = [2.0, -1.5, 1.0, 0.5]
    y = X @ beta + rng.normal(size=n)
    model = fit_penalized_linear(X, y, seed=3)
    Xs = (X - X.mean(axis=0)) / X.std(axis=0)
    b = model.std_coefficients
    grad = Xs.T @ (y - y.mean() - Xs @ b) / n
    lam = model.lambda_
    kkt = np.where(b == 0, np.maximum(np.abs(grad) - lam, 0), np.abs(grad - lam * np.sign(b))).max()

    lam_max = lambda_sequence(Xs, y)[0]
    shrunk = fit_penalized_linear(X, y, lambda_grid=[lam_max * 1.0001])
    zero_slopes = bool(np.all(shrunk.coefficients == 0.0))

    truth = rng.normal(size=n)
    Xi = Covariates.numeric(np.column_stack([rng.normal(size=n), np.arange(n)]))
    stack = fit_stacking(Xi, truth, members=[_Member("oracle", truth), _Member("noise", rng.normal(size=n))], seed=1)
    w_err = float(np.max(np.abs(stack.weights - [1.0, 0.0])))
    ok = kkt < 1e-6 and zero_slopes and w_err < 1e-6
    _check(11, "numerical learner checks", ok,
           f"max KKT residual {kkt:.1e}; full shrinkage zero slopes={zero_slopes}; stacking weight error {w_err:.1e}")


# --- 12 --------------------------------------------------------------------

def _write_dataset(d):
    rng = np.random.default_rng(SEED + 120)
    n = 160
    x1, x2 = rng.uniform(size=n), rng.integers(0, 3, n)
    a = rng.integers(0, 2, n)
    y = x1 + a * (0.5 + (x2 == 2)) + rng.normal(size=n)
    lines = ["id,A,Y,x1,x2,x3"] + [
        f"p{i},{a[i]},{float(y[i])!r},{float(x1[i])!r},{'lmh'[x2[i]]},{float(rng.normal())!r}" for i in range(n)
    ]
    (d / "data.csv").write_text("\n".join(lines) + "\n")
    (d / "schema.json").write_text(json.dumps({
        "outcome": "Y", "treatment": "A", "id": "id",
        "covariates": [{"name": "x1", "kind": "numeric"}, {"name": "x2", "kind": "categorical"},
                       {"name": "x3", "kind": "numeric"}],
    }))
    (d / "config.json").write_text(json.dumps({
        "learners": {"members": ["lasso", "cforest"], "forest_ntree": 20, "cv_folds": 3},
        "test": {"B": 499}, "ranking": {"ntree": 60},
        "simbench": {"scenarios": [2], "multipliers": [0, 1], "replicates": 2, "n": 200,
                     "calib_reps": 1000, "calib_n": 5000, "cate_variants": ["oob", "t"]},
    }))


def test_criterion_12_determinism(tmp_path):
    _write_dataset(tmp_path)
    snapshots = {}
    for label, workers in (("a1", 1), ("b1", 1), ("a4", 4)):
        out = tmp_path / f"analyze_{label}"
        cmd_analyze(tmp_path / "data.csv", tmp_path / "schema.json", tmp_path / "config.json", out,
                    seed=9, workers=workers)
        snapshots[("analyze", label)] = {f.name: f.read_bytes() for f in sorted(out.iterdir())}
        out = tmp_path / f"bench_{label}"
        cmd_benchmark(tmp_path / "config.json", out, seed=9, workers=workers)
        snapshots[("benchmark", label)] = {f.name: f.read_bytes() for f in sorted(out.iterdir())}
    same = {
        cmd: snapshots[(cmd, "a1")] == snapshots[(cmd, "b1")] == snapshots[(cmd, "a4")]
        for cmd in ("analyze", "benchmark")
    }
    files = {cmd: sorted(snapshots[(cmd, "a1")]) for cmd in same}
    _check(12, "determinism across runs and worker counts", all(same.values()),
           "; ".join(f"{cmd}: identical={same[cmd]} ({', '.join(files[cmd])})" for cmd in same))
