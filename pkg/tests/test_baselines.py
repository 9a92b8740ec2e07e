import numpy as np
import pytest
from scipy import stats

from tehdr.baselines import IdentifiabilityError, fit_glm, multivariate_baseline, univariate_baseline
from tehdr.data import Covariates, TrialDataset

from conftest import mixed_covariates


def trial(rng, n=300, effect=None, p_num=4, p_cat=2):
    X = mixed_covariates(n, rng, p_num, p_cat)
    a = rng.binomial(1, 0.5, n)
    y = X.values[:, 0] + rng.normal(size=n)
    if effect is not None:
        y = y + a * effect(X.values)
    return TrialDataset(X, a, y)


def test_single_covariate_bonferroni_idle(rng):
    n = 200
    X = Covariates.numeric(rng.uniform(size=(n, 1)))
    a = rng.binomial(1, 0.5, n)
    res = univariate_baseline(TrialDataset(X, a, rng.normal(size=n)))
    assert res.global_p == res.per_covariate_p[0]


def test_strong_interaction_found(rng):
    data = trial(rng, effect=lambda v: 2 * v[:, 0])
    for fn in (univariate_baseline, multivariate_baseline):
        res = fn(data)
        assert res.top_covariate == "N1" and res.global_p < 1e-4


def test_top_is_argmin(rng):
    res = univariate_baseline(trial(rng))
    assert res.top_index == int(np.argmin(res.per_covariate_p))
    assert 0 <= res.global_p <= 1


def test_constant_covariate_gets_p_one(rng):
    n = 100
    X = Covariates.numeric(np.column_stack([np.ones(n), rng.uniform(size=n)]))
    res = univariate_baseline(TrialDataset(X, rng.binomial(1, 0.5, n), rng.normal(size=n)))
    assert res.per_covariate_p[0] == 1.0


def test_multivariate_identifiability(rng):
    data = trial(rng, n=14)
    with pytest.raises(IdentifiabilityError):
        multivariate_baseline(data)


def test_aliased_columns_dropped_with_warning(rng):
    n = 100
    u = rng.uniform(size=n)
    X = Covariates.numeric(np.column_stack([u, 2 * u, rng.uniform(size=n)]))
    data = TrialDataset(X, rng.binomial(1, 0.5, n), rng.normal(size=n))
    with pytest.warns(RuntimeWarning, match="aliased"):
        res = multivariate_baseline(data)
    assert 0 <= res.global_p <= 1


def test_gaussian_lrt_uses_exact_f_reference(rng):
    n = 500
    data = trial(rng, n=n, effect=lambda v: 0.2 * v[:, 1])
    x = data.covariates.values[:, 1]
    B = np.column_stack([np.ones(n), x, data.treatment])
    Z1 = np.column_stack([B, data.treatment * x])
    r0, r1 = fit_glm(B, data.outcome), fit_glm(Z1, data.outcome)
    F = (r0.deviance - r1.deviance) / (r1.deviance / (n - 4))
    p_f = stats.f.sf(F, 1, n - 4)
    res = univariate_baseline(data)
    assert abs(res.per_covariate_p[1] - p_f) < 1e-12
    p_chi2 = stats.chi2.sf(n * np.log(r0.deviance / r1.deviance), 1)
    assert abs(p_chi2 - p_f) < 5e-3


def test_binary_outcome_runs(rng):
    data = trial(rng, effect=lambda v: 2 * v[:, 2])
    yb = (data.outcome > np.median(data.outcome)).astype(float)
    bdata = TrialDataset(data.covariates, data.treatment, yb, "binary")
    u, m = univariate_baseline(bdata), multivariate_baseline(bdata)
    assert u.top_covariate == "N3"
    assert np.all((u.tau_hat >= -1) & (u.tau_hat <= 1))
    assert 0 <= m.global_p <= 1


def test_null_multivariate_uniform_univariate_conservative():
    rng = np.random.default_rng(3)
    pm, pu = [], []
    for _ in range(500):
        data = trial(rng, n=150)
        pm.append(multivariate_baseline(data).global_p)
        pu.append(univariate_baseline(data).global_p)
    assert stats.kstest(pm, "uniform").pvalue > 0.01
    assert np.mean(np.array(pu) <= 0.1) <= 0.1 + 3 * np.sqrt(0.09 / 500)


def test_homogeneous_effect_recovered(rng):
    data = trial(rng, n=600, effect=lambda v: np.full(len(v), 1.0))
    res = multivariate_baseline(data)
    assert abs(res.tau_hat.mean() - 1.0) < 0.3
