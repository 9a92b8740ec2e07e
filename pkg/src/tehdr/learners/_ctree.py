"""Numba kernels for conditional inference trees and forests.

Variable selection uses permutation-conditional linear statistics with an
identity influence function on the response:

* numeric covariate: midranks within the node, standardized statistic squared
  (chi-square, 1 df);
* categorical covariate: level indicators, quadratic form with the
  Moore-Penrose inverse of the conditional covariance (chi-square, L - 1 df),
  which reduces to ``(m - 1) / (m * V) * sum_l n_l (ybar_l - ybar)^2``.

Tree storage is flat: per node ``feature`` (-1 for leaves), ``threshold``
(numeric: go left iff ``x <= threshold``), ``right_mask`` (categorical: bit
``c`` set sends level ``c`` right; all other levels, including unseen ones,
go left), children, leaf value and the selection p-value.
"""

import math

import numba
import numpy as np

MAX_EXHAUSTIVE_LEVELS = 10


@numba.njit(cache=True)
def midranks(x):
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    r = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        for k in range(i, j + 1):
            r[order[k]] = avg
        i = j + 1
    return r


@numba.njit(cache=True)
def _gammainc_upper(a, x):
    """Regularized upper incomplete gamma Q(a, x)."""
    if x <= 0.0:
        return 1.0
    gln = math.lgamma(a)
    if x < a + 1.0:
        ap = a
        s = 1.0 / a
        d = s
        for _ in range(10000):
            ap += 1.0
            d *= x / ap
            s += d
            if abs(d) < abs(s) * 1e-15:
                break
        return max(0.0, 1.0 - s * math.exp(-x + a * math.log(x) - gln))
    b = x + 1.0 - a
    c = 1.0 / 1e-300
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < 1e-300:
            d = 1e-300
        c = b + an / c
        if abs(c) < 1e-300:
            c = 1e-300
        d = 1.0 / d
        de = d * c
        h *= de
        if abs(de - 1.0) < 1e-15:
            break
    return math.exp(-x + a * math.log(x) - gln) * h


@numba.njit(cache=True)
def chi2_sf(x, df):
    if df == 1:
        return math.erfc(math.sqrt(max(x, 0.0) / 2.0))
    if df == 2:
        return math.exp(-max(x, 0.0) / 2.0)
    return _gammainc_upper(df / 2.0, x / 2.0)


@numba.njit(cache=True)
def _covariate_test(x, is_cat, y, ybar, vy):
    """Returns (statistic, df, p_value); df = 0 marks an untestable covariate."""
    m = x.shape[0]
    if not is_cat:
        r = midranks(x)
        s1 = 0.0
        s2 = 0.0
        t = 0.0
        for i in range(m):
            s1 += r[i]
            s2 += r[i] * r[i]
            t += r[i] * y[i]
        sigma = vy * (m / (m - 1.0) * s2 - s1 * s1 / (m - 1.0))
        if sigma <= 1e-12 * max(1.0, vy * s2):
            return 0.0, 0, 1.0
        c = (t - s1 * ybar) ** 2 / sigma
        return c, 1, chi2_sf(c, 1)
    n_lev = int(x.max()) + 1
    cnt = np.zeros(n_lev)
    sm = np.zeros(n_lev)
    for i in range(m):
        c_ = int(x[i])
        cnt[c_] += 1.0
        sm[c_] += y[i]
    present = 0
    acc = 0.0
    for lv in range(n_lev):
        if cnt[lv] > 0:
            present += 1
            dev = sm[lv] / cnt[lv] - ybar
            acc += cnt[lv] * dev * dev
    if present < 2:
        return 0.0, 0, 1.0
    c = (m - 1.0) / (m * vy) * acc
    return c, present - 1, chi2_sf(c, present - 1)


@numba.njit(cache=True)
def _best_numeric_split(x, y, ybar, vy, min_leaf):
    m = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    best = -1.0
    thr = np.nan
    cum = 0.0
    for k in range(m - 1):
        cum += y[order[k]]
        n_left = k + 1
        if n_left < min_leaf:
            continue
        if m - n_left < min_leaf:
            break
        if x[order[k]] == x[order[k + 1]]:
            continue
        sigma = vy * n_left * (m - n_left) / (m - 1.0)
        stat = (cum - n_left * ybar) ** 2 / sigma
        if stat > best:
            best = stat
            thr = x[order[k]]
    return best, thr


@numba.njit(cache=True)
def _best_categorical_split(x, y, ybar, vy, min_leaf):
    """Binary partition of the node's levels. Returns (stat, right_mask)."""
    m = x.shape[0]
    n_lev = int(x.max()) + 1
    cnt = np.zeros(n_lev)
    sm = np.zeros(n_lev)
    for i in range(m):
        c_ = int(x[i])
        cnt[c_] += 1.0
        sm[c_] += y[i]
    levels = np.empty(n_lev, dtype=np.int64)
    L = 0
    for lv in range(n_lev):
        if cnt[lv] > 0:
            levels[L] = lv
            L += 1
    levels = levels[:L]
    best = -1.0
    best_mask = np.int64(0)
    if L < 2:
        return best, best_mask
    if L <= MAX_EXHAUSTIVE_LEVELS:
        # right sets that exclude the first present level; each partition once
        for code in range(1, 2 ** (L - 1)):
            n_right = 0.0
            s_right = 0.0
            mask = np.int64(0)
            for b in range(L - 1):
                if (code >> b) & 1:
                    lv = levels[b + 1]
                    n_right += cnt[lv]
                    s_right += sm[lv]
                    mask |= np.int64(1) << lv
            n_left = m - n_right
            if n_left < min_leaf or n_right < min_leaf:
                continue
            sigma = vy * n_left * n_right / (m - 1.0)
            stat = (s_right - n_right * ybar) ** 2 / sigma
            if stat > best:
                best = stat
                best_mask = mask
        return best, best_mask
    means = np.empty(L)
    for i in range(L):
        means[i] = sm[levels[i]] / cnt[levels[i]]
    order = np.argsort(means, kind="mergesort")
    n_right = 0.0
    s_right = 0.0
    mask = np.int64(0)
    # move levels to the right in decreasing order of mean
    for t in range(L - 1, 0, -1):
        lv = levels[order[t]]
        n_right += cnt[lv]
        s_right += sm[lv]
        mask |= np.int64(1) << lv
        n_left = m - n_right
        if n_left < min_leaf or n_right < min_leaf:
            continue
        sigma = vy * n_left * n_right / (m - 1.0)
        stat = (s_right - n_right * ybar) ** 2 / sigma
        if stat > best:
            best = stat
            best_mask = mask
    return best, best_mask


@numba.njit(cache=True)
def _goes_right(xv, feat_is_cat, thr, rmask):
    if feat_is_cat:
        return ((rmask >> np.int64(xv)) & 1) == 1
    return xv > thr


@numba.njit(cache=True)
def build_tree(X, is_cat, y, rows, mtry, alpha, min_node, min_leaf,
               feature, threshold, right_mask, left, right, value, pval, size, base):
    """Grow one tree on ``rows`` writing nodes from index ``base``. Returns node count.

    Uses numba's global RNG, which the caller seeds.
    """
    p = X.shape[1]
    idx = rows.copy()
    stack_node = np.empty(2 * rows.shape[0] + 2, dtype=np.int64)
    stack_lo = np.empty_like(stack_node)
    stack_hi = np.empty_like(stack_node)
    sp = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = idx.shape[0]
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        m = hi - lo
        g = base + node
        yn = np.empty(m)
        for i in range(m):
            yn[i] = y[idx[lo + i]]
        ybar = yn.mean()
        vy = 0.0
        for i in range(m):
            vy += (yn[i] - ybar) ** 2
        vy /= m
        feature[g] = -1
        threshold[g] = np.nan
        right_mask[g] = 0
        left[g] = -1
        right[g] = -1
        value[g] = ybar
        pval[g] = np.nan
        size[g] = m
        if m < min_node or m < 2 * min_leaf or vy <= 1e-14 * max(1.0, ybar * ybar):
            continue
        cand = np.random.permutation(p)[: min(mtry, p)]
        n_cand = cand.shape[0]
        best_j = -1
        best_p = 2.0
        best_c = -1.0
        xcol = np.empty(m)
        for ci in range(n_cand):
            j = cand[ci]
            for i in range(m):
                xcol[i] = X[idx[lo + i], j]
            c, df, pv = _covariate_test(xcol, is_cat[j], yn, ybar, vy)
            if df == 0:
                continue
            if pv < best_p or (pv == best_p and c > best_c):
                best_p = pv
                best_c = c
                best_j = j
        if best_j < 0:
            continue
        p_adj = min(1.0, best_p * n_cand)
        if p_adj > alpha:
            continue
        for i in range(m):
            xcol[i] = X[idx[lo + i], best_j]
        if is_cat[best_j]:
            stat, rmask = _best_categorical_split(xcol, yn, ybar, vy, min_leaf)
            thr = np.nan
        else:
            stat, thr = _best_numeric_split(xcol, yn, ybar, vy, min_leaf)
            rmask = np.int64(0)
        if stat < 0:
            continue
        # partition idx[lo:hi] in place: left block first
        a = lo
        b = hi - 1
        while a <= b:
            if _goes_right(X[idx[a], best_j], is_cat[best_j], thr, rmask):
                tmp = idx[a]
                idx[a] = idx[b]
                idx[b] = tmp
                b -= 1
            else:
                a += 1
        mid = a
        if mid == lo or mid == hi:
            continue
        feature[g] = best_j
        threshold[g] = thr
        right_mask[g] = rmask
        pval[g] = p_adj
        left[g] = n_nodes
        right[g] = n_nodes + 1
        stack_node[sp] = n_nodes + 1
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        sp += 1
        stack_node[sp] = n_nodes
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        sp += 1
        n_nodes += 2
    return n_nodes


@numba.njit(cache=True)
def build_forest(X, is_cat, y, ntree, n_in, mtry, alpha, min_node, min_leaf, seeds):
    n = X.shape[0]
    cap = 2 * n_in + 1
    total = ntree * cap
    feature = np.empty(total, dtype=np.int64)
    threshold = np.empty(total)
    right_mask = np.empty(total, dtype=np.int64)
    left = np.empty(total, dtype=np.int64)
    right = np.empty(total, dtype=np.int64)
    value = np.empty(total)
    pval = np.empty(total)
    size = np.empty(total, dtype=np.int64)
    offsets = np.zeros(ntree + 1, dtype=np.int64)
    inbag = np.zeros((ntree, n), dtype=np.bool_)
    base = 0
    for t in range(ntree):
        np.random.seed(seeds[t])
        rows = np.sort(np.random.permutation(n)[:n_in])
        for r in rows:
            inbag[t, r] = True
        cnt = build_tree(X, is_cat, y, rows, mtry, alpha, min_node, min_leaf,
                         feature, threshold, right_mask, left, right, value, pval, size, base)
        base += cnt
        offsets[t + 1] = base
    return (feature[:base].copy(), threshold[:base].copy(), right_mask[:base].copy(),
            left[:base].copy(), right[:base].copy(), value[:base].copy(), pval[:base].copy(),
            size[:base].copy(), offsets, inbag)


@numba.njit(cache=True)
def _leaf_value(xrow, is_cat, feature, threshold, right_mask, left, right, value, root):
    node = 0
    while True:
        g = root + node
        j = feature[g]
        if j < 0:
            return value[g]
        if _goes_right(xrow[j], is_cat[j], threshold[g], right_mask[g]):
            node = right[g]
        else:
            node = left[g]


@numba.njit(cache=True)
def tree_predictions(X, is_cat, feature, threshold, right_mask, left, right, value, offsets):
    """Matrix of per-tree predictions, shape (n, ntree)."""
    n = X.shape[0]
    ntree = offsets.shape[0] - 1
    out = np.empty((n, ntree))
    for t in range(ntree):
        root = offsets[t]
        for i in range(n):
            out[i, t] = _leaf_value(X[i], is_cat, feature, threshold, right_mask, left, right, value, root)
    return out


@numba.njit(cache=True)
def permutation_importance(X, is_cat, y, feature, threshold, right_mask, left, right, value,
                           offsets, inbag, n_rep, seeds):
    """Mean increase in OOB squared error after permuting each covariate.

    Averages over trees and repeats; a tree that never splits on a covariate
    contributes exactly zero for it.
    """
    n, p = X.shape
    ntree = offsets.shape[0] - 1
    scores = np.zeros(p)
    xrow = np.empty(p)
    for t in range(ntree):
        np.random.seed(seeds[t])
        root = offsets[t]
        oob = np.empty(n, dtype=np.int64)
        n_oob = 0
        for i in range(n):
            if not inbag[t, i]:
                oob[n_oob] = i
                n_oob += 1
        if n_oob == 0:
            continue
        oob = oob[:n_oob]
        base_err = 0.0
        for k in range(n_oob):
            i = oob[k]
            d = y[i] - _leaf_value(X[i], is_cat, feature, threshold, right_mask, left, right, value, root)
            base_err += d * d
        base_err /= n_oob
        used = np.zeros(p, dtype=np.bool_)
        for g in range(offsets[t], offsets[t + 1]):
            if feature[g] >= 0:
                used[feature[g]] = True
        for j in range(p):
            if not used[j]:
                continue
            for r in range(n_rep):
                perm = np.random.permutation(n_oob)
                err = 0.0
                for k in range(n_oob):
                    i = oob[k]
                    for jj in range(p):
                        xrow[jj] = X[i, jj]
                    xrow[j] = X[oob[perm[k]], j]
                    d = y[i] - _leaf_value(xrow, is_cat, feature, threshold, right_mask, left, right, value, root)
                    err += d * d
                scores[j] += err / n_oob - base_err
    return scores / (ntree * n_rep)
