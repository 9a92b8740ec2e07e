"""Coordinate-descent kernels for L1-penalized quadratic problems.

All solvers work on the quadratic form

    0.5 * b' G b - c' b + lam * sum_j pf_j |b_j|

so the gaussian lasso (covariance updates) and each IRLS step of the binomial
lasso share the same inner loop.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@numba.njit(cache=True)
def cd_quadratic(G, c, lam, pf, beta, tol, max_sweeps):
    """Minimise in place. Returns ``(sweeps, converged)``.

    Stops when a full sweep moves no coordinate by more than ``tol`` and the
    KKT conditions hold to ``tol``.
    """
    q = G.shape[0]
    grad = c - G @ beta
    for sweep in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in range(q):
            gjj = G[j, j]
            if gjj <= 1e-12:
                continue
            old = beta[j]
            new = _soft(grad[j] + gjj * old, lam * pf[j]) / gjj
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for k in range(q):
                    grad[k] -= G[k, j] * delta
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if max_delta < tol:
            # exact gradient refresh, then KKT check
            grad = c - G @ beta
            worst = 0.0
            for j in range(q):
                if G[j, j] <= 1e-12:
                    continue
                t = lam * pf[j]
                if beta[j] == 0.0:
                    v = abs(grad[j]) - t
                elif beta[j] > 0.0:
                    v = abs(grad[j] - t)
                else:
                    v = abs(grad[j] + t)
                if v > worst:
                    worst = v
            if worst < tol:
                return sweep, True
    return max_sweeps, False


@numba.njit(cache=True)
def gaussian_path(Xs, yc, lambdas, tol, max_sweeps, early_stop):
    """Lasso path on standardized ``Xs`` and centered ``yc`` with warm starts.

    With ``early_stop`` the path is truncated once the fraction of deviance
    explained stops moving (change < 1e-5) or exceeds 0.999; the number of
    lambdas actually fitted is returned.
    """
    n, q = Xs.shape
    G = Xs.T @ Xs / n
    c = Xs.T @ yc / n
    null_dev = yc @ yc / n
    pf = np.ones(q)
    beta = np.zeros(q)
    coefs = np.zeros((lambdas.shape[0], q))
    ok = True
    prev = 0.0
    for i in range(lambdas.shape[0]):
        _, conv = cd_quadratic(G, c, lambdas[i], pf, beta, tol, max_sweeps)
        ok = ok and conv
        coefs[i] = beta
        if early_stop and null_dev > 0:
            dev = null_dev - 2.0 * (c @ beta) + beta @ (G @ beta)
            ratio = 1.0 - dev / null_dev
            if i >= 5 and (ratio - prev < 1e-5 or ratio > 0.999):
                return coefs[: i + 1], ok
            prev = ratio
    return coefs, ok


@numba.njit(cache=True)
def _expit(eta):
    out = np.empty_like(eta)
    for i in range(eta.shape[0]):
        e = eta[i]
        if e >= 0:
            out[i] = 1.0 / (1.0 + np.exp(-e))
        else:
            z = np.exp(e)
            out[i] = z / (1.0 + z)
    return out


@numba.njit(cache=True)
def _weighted_gram(Xa, p, n):
    w = p * (1.0 - p)
    for k in range(n):
        if w[k] < 1e-5:
            w[k] = 1e-5
    return (Xa * w.reshape(-1, 1)).T @ Xa / n


@numba.njit(cache=True)
def binomial_path(Xs, y, lambdas, tol, max_sweeps, max_iter, early_stop):
    """Penalized logistic path by proximal Newton steps.

    Each step minimises the penalized quadratic model
    0.5 d'Hd - g'd around the current iterate. The Hessian H is refreshed at
    the start of every lambda and every few steps after that; in between only
    the gradient moves, which is enough along a warm-started path.
    Returns intercepts, coefficients and a convergence flag; ``early_stop`` as
    in :func:`gaussian_path`, on the binomial deviance.
    """
    n, q = Xs.shape
    Xa = np.ones((n, q + 1))
    Xa[:, 1:] = Xs
    pf = np.ones(q + 1)
    pf[0] = 0.0
    ybar = y.mean()
    b = np.zeros(q + 1)
    b[0] = np.log(ybar / (1.0 - ybar))
    n_lam = lambdas.shape[0]
    intercepts = np.zeros(n_lam)
    coefs = np.zeros((n_lam, q))
    ok = True
    null_dev = -2.0 * n * (ybar * np.log(ybar) + (1 - ybar) * np.log(1 - ybar))
    prev = 0.0
    for i in range(n_lam):
        conv_outer = False
        G = np.empty((q + 1, q + 1))
        for it in range(max_iter):
            p = _expit(Xa @ b)
            if it % 4 == 0:
                G = _weighted_gram(Xa, p, n)
            c = G @ b + Xa.T @ (y - p) / n
            old = b.copy()
            _, conv = cd_quadratic(G, c, lambdas[i], pf, b, tol, max_sweeps)
            ok = ok and conv
            if np.max(np.abs(b - old)) < tol:
                conv_outer = True
                break
        ok = ok and conv_outer
        intercepts[i] = b[0]
        coefs[i] = b[1:]
        if early_stop:
            p = _expit(Xa @ b)
            dev = 0.0
            for k in range(n):
                pk = min(max(p[k], 1e-12), 1 - 1e-12)
                dev -= 2.0 * (y[k] * np.log(pk) + (1 - y[k]) * np.log(1 - pk))
            ratio = 1.0 - dev / null_dev
            if i >= 5 and (ratio - prev < 1e-5 or ratio > 0.999):
                return intercepts[: i + 1], coefs[: i + 1], ok
            prev = ratio
    return intercepts, coefs, ok
