import itertools

import numpy as np
import pytest
from scipy import stats

from tehdr.data import Covariates
from tehdr.hettest import global_test, linear_statistic

from conftest import mixed_covariates


def test_linear_statistic_matches_exhaustive_moments():
    g, psi = np.array([0.0, 1, 0, 1]), np.array([1.0, 2, 3, 4])
    ls = linear_statistic(g, psi)
    perm_T = [g @ psi[list(p)] for p in itertools.permutations(range(4))]
    assert ls.T[0] == 6 and ls.mu[0] == 5
    assert ls.mu[0] == pytest.approx(np.mean(perm_T))
    assert ls.sigma[0] == pytest.approx(np.var(perm_T))


def test_linear_statistic_multi_column_moments(rng):
    G, psi = rng.normal(size=(6, 3)), rng.normal(size=6)
    T = np.array([G.T @ psi[list(p)] for p in itertools.permutations(range(6))])
    ls = linear_statistic(G, psi)
    np.testing.assert_allclose(ls.mu, T.mean(axis=0))
    np.testing.assert_allclose(ls.sigma, T.var(axis=0))


def test_constant_psi_is_degenerate(rng):
    X = mixed_covariates(50, rng)
    res = global_test(X, np.full(50, 3.0), B=99)
    assert res.degenerate and res.p_value == 1.0
    assert len(res.dropped_columns) == 6


def test_shift_and_transform_invariance(rng):
    X = mixed_covariates(80, rng)
    psi = rng.normal(size=80) + X.values[:, 0]
    for kind in ("max_type", "quadratic"):
        base = global_test(X, psi, kind, B=99, seed=1)
        shifted = global_test(X, psi + 17.0, kind, B=99, seed=1)
        vals = X.values.copy()
        vals[:, :4] = np.exp(3 * vals[:, :4])
        warped = global_test(X.with_values(vals), psi, kind, B=99, seed=1)
        order = [5, 3, 1, 0, 4, 2]
        reordered = Covariates(X.values[:, order], tuple(X.names[j] for j in order),
                               tuple(X.kinds[j] for j in order), tuple(X.levels[j] for j in order))
        swapped = global_test(reordered, psi, kind, B=99, seed=1)
        for other in (shifted, warped, swapped):
            assert other.observed == pytest.approx(base.observed, rel=1e-10)


def test_small_B_rejected(rng):
    with pytest.raises(ValueError):
        global_test(rng.normal(size=(30, 2)), rng.normal(size=30), B=50)


def test_strong_signal_hits_floor(rng):
    X = mixed_covariates(100, rng)
    psi = 5 * X.values[:, 1] + 0.1 * rng.normal(size=100)
    res = global_test(X, psi, B=999, seed=2)
    assert res.p_value == pytest.approx(1 / 1000)


def test_null_p_values_uniform():
    rng = np.random.default_rng(8)
    ps = []
    for r in range(500):
        X = mixed_covariates(60, rng)
        ps.append(global_test(X, rng.normal(size=60), B=99, seed=r).p_value)
    assert stats.kstest(ps, "uniform").pvalue > 0.01


def test_B_999_and_9999_agree(rng):
    X = mixed_covariates(100, rng)
    psi = rng.normal(size=100) + 0.25 * X.values[:, 0]
    for kind in ("max_type", "quadratic"):
        big = global_test(X, psi, kind, B=9999, seed=4).p_value
        small = global_test(X, psi, kind, B=999, seed=5).p_value
        assert abs(big - small) <= 3 * np.sqrt(max(big * (1 - big), 1e-4) / 999)


def test_asymptotic_methods_close_to_permutation(rng):
    X = mixed_covariates(300, rng)
    psi = rng.normal(size=300) + 0.15 * X.values[:, 2]
    for kind in ("max_type", "quadratic"):
        perm = global_test(X, psi, kind, B=9999, seed=1).p_value
        asym = global_test(X, psi, kind, method="asymptotic", seed=1).p_value
        assert abs(perm - asym) < 0.05


def test_asymptotic_quadratic_single_column_is_chi2_one(rng):
    X = Covariates.numeric(rng.normal(size=(200, 1)), ["x"])
    psi = rng.normal(size=200) + 0.1 * X.values[:, 0]
    res = global_test(X, psi, "quadratic", method="asymptotic", seed=2)
    ref = stats.chi2.sf(res.observed, 1)
    assert abs(res.p_value - ref) < 3 * np.sqrt(ref * (1 - ref) / 1e5) + 1e-5


def test_seed_determinism(rng):
    X = mixed_covariates(40, rng)
    psi = rng.normal(size=40)
    assert global_test(X, psi, B=199, seed=3) == global_test(X, psi, B=199, seed=3)
