"""Compiled EM kernels for one-dimensional Gaussian mixtures.

Everything here works on plain float64 arrays so the kernels can be batched
over cells with ``prange``. Initialization randomness is passed in as
pre-drawn uniforms, which keeps each fit a pure function of its inputs.
"""

import math
import os

import numba
import numpy as np
from numba import njit, prange

# OpenMP is thread-safe for concurrent callers and avoids numba's TBB
# version probe; honour an explicit user choice.
if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER = "omp"

LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def _kmeanspp_init(x, k, u, var_floor):
    """k-means++ seeding followed by one hard assignment pass.

    ``u`` holds ``k`` uniforms in [0, 1).
    """
    n = x.shape[0]
    means = np.empty(k)
    idx = min(int(u[0] * n), n - 1)
    means[0] = x[idx]
    d2 = np.empty(n)
    for i in range(n):
        d2[i] = (x[i] - means[0]) ** 2
    for c in range(1, k):
        total = 0.0
        for i in range(n):
            total += d2[i]
        if total <= 0.0:
            # every point coincides with a chosen center
            means[c] = means[0]
            continue
        target = u[c] * total
        acc = 0.0
        pick = n - 1
        for i in range(n):
            acc += d2[i]
            if acc > target:
                pick = i
                break
        means[c] = x[pick]
        for i in range(n):
            d = (x[i] - means[c]) ** 2
            if d < d2[i]:
                d2[i] = d

    counts = np.zeros(k)
    sums = np.zeros(k)
    sq = np.zeros(k)
    for i in range(n):
        best = 0
        bd = abs(x[i] - means[0])
        for c in range(1, k):
            d = abs(x[i] - means[c])
            if d < bd:
                bd = d
                best = c
        counts[best] += 1.0
        sums[best] += x[i]
        sq[best] += x[i] * x[i]

    mean_all = 0.0
    for i in range(n):
        mean_all += x[i]
    mean_all /= n
    var_all = 0.0
    for i in range(n):
        var_all += (x[i] - mean_all) ** 2
    var_all /= n

    weights = np.empty(k)
    variances = np.empty(k)
    for c in range(k):
        if counts[c] > 0.0:
            m = sums[c] / counts[c]
            v = sq[c] / counts[c] - m * m
            means[c] = m
            # singleton clusters get the pooled spread
            variances[c] = v if counts[c] > 1.0 else var_all
        else:
            variances[c] = var_all
        if variances[c] < var_floor:
            variances[c] = var_floor
        weights[c] = (counts[c] + 1.0) / (n + k)
    return weights, means, variances


@njit(cache=True)
def _em(x, weights, means, variances, var_floor, it, max_iter, tol, history, resume):
    """Run EM in place on (weights, means, variances), starting at iteration ``it``.

    Returns ``(loglik, it, min_delta, converged)`` where ``loglik`` is the mean
    per-sample log-likelihood of the returned parameters and ``min_delta`` the
    smallest step-to-step change seen (negative means a monotonicity breach).
    ``history[t]`` receives the log-likelihood at E-step ``t``. With ``resume``
    the first E-step repeats an already recorded one and is not logged again.
    """
    n = x.shape[0]
    k = weights.shape[0]
    logp = np.empty(k)
    resp = np.empty(k)
    nk = np.empty(k)
    sx = np.empty(k)
    sxx = np.empty(k)
    coef = np.empty(k)
    inv2v = np.empty(k)
    prev = history[it - 1] if resume else -np.inf
    min_delta = np.inf
    ll = prev
    converged = False
    skip_log = resume
    while True:
        for c in range(k):
            logw = math.log(weights[c]) if weights[c] > 0.0 else -np.inf
            coef[c] = logw - 0.5 * (LOG_2PI + math.log(variances[c]))
            inv2v[c] = 0.5 / variances[c]
            nk[c] = 0.0
            sx[c] = 0.0
            sxx[c] = 0.0
        total = 0.0
        for i in range(n):
            xi = x[i]
            mx = -np.inf
            for c in range(k):
                d = xi - means[c]
                logp[c] = coef[c] - d * d * inv2v[c]
                if logp[c] > mx:
                    mx = logp[c]
            s = 0.0
            for c in range(k):
                resp[c] = math.exp(logp[c] - mx)
                s += resp[c]
            total += mx + math.log(s)
            inv_s = 1.0 / s
            for c in range(k):
                r = resp[c] * inv_s
                d = xi - means[c]
                rd = r * d
                nk[c] += r
                sx[c] += rd
                sxx[c] += rd * d
        if skip_log:
            skip_log = False
        else:
            ll = total / n
            history[it] = ll
            it += 1
            if it > 1:
                delta = ll - prev
                if delta < min_delta:
                    min_delta = delta
                if delta < tol:
                    converged = True
                    break
            if it >= max_iter:
                break
            prev = ll

        # M-step; moments are taken about the old means for stability
        for c in range(k):
            weights[c] = nk[c] / n
            if nk[c] > 1e-300:
                shift = sx[c] / nk[c]
                v = sxx[c] / nk[c] - shift * shift
                means[c] = means[c] + shift
                variances[c] = v if v > var_floor else var_floor
    return ll, it, min_delta, converged


@njit(cache=True)
def fit_restarts(x, k, uniforms, var_floor, max_iter, tol, init_iter):
    """Best-of-restarts EM fit. ``uniforms`` has shape (n_restarts, k).

    Every restart runs at most ``init_iter`` iterations; the one with the
    highest likelihood then continues to convergence or ``max_iter``.
    Returns weights, means, variances, loglik, n_iter, min_delta and the
    winning history (NaN padded).
    """
    n_restarts = uniforms.shape[0]
    best_ll = -np.inf
    best_r = 0
    worst_delta = np.inf
    ws = np.empty((n_restarts, k))
    ms = np.empty((n_restarts, k))
    vs = np.empty((n_restarts, k))
    its = np.empty(n_restarts, dtype=np.int64)
    done = np.zeros(n_restarts, dtype=np.bool_)
    hists = np.full((n_restarts, max_iter), np.nan)
    short = min(init_iter, max_iter)
    for r in range(n_restarts):
        w, m, v = _kmeanspp_init(x, k, uniforms[r], var_floor)
        ll, it, md, conv = _em(x, w, m, v, var_floor, 0, short, tol, hists[r], False)
        ws[r] = w
        ms[r] = m
        vs[r] = v
        its[r] = it
        done[r] = conv
        if md < worst_delta:
            worst_delta = md
        if r == 0 or ll > best_ll:
            best_ll = ll
            best_r = r
    w = ws[best_r].copy()
    m = ms[best_r].copy()
    v = vs[best_r].copy()
    it = its[best_r]
    hist = hists[best_r].copy()
    if not done[best_r] and it < max_iter:
        best_ll, it, md, conv = _em(x, w, m, v, var_floor, it, max_iter, tol, hist, True)
        if md < worst_delta:
            worst_delta = md
    return w, m, v, best_ll, it, worst_delta, hist


@njit(cache=True)
def _select_one(x, k_hi, uniforms, var_floor, max_iter, tol, init_iter, out_w, out_m, out_v):
    n = x.shape[0]
    best_bic = np.inf
    best_k = 0
    worst_delta = np.inf
    for k in range(1, k_hi + 1):
        w, m, v, ll, it, md, hist = fit_restarts(
            x, k, uniforms[k - 1, :, :k], var_floor, max_iter, tol, init_iter
        )
        if md < worst_delta:
            worst_delta = md
        bic = -2.0 * ll * n + (3 * k - 1) * math.log(n)
        if bic < best_bic:
            best_bic = bic
            best_k = k
            out_w[:] = 0.0
            out_m[:] = 0.0
            out_v[:] = 1.0
            out_w[:k] = w
            out_m[:k] = m
            out_v[:k] = v
    return best_k, worst_delta


@njit(cache=True, parallel=True)
def select_batch(xs, k_hi, uniforms, var_floors, max_iter, tol, init_iter):
    """BIC selection for every row of ``xs`` (shape (B, n)).

    ``uniforms`` has shape (B, k_hi, n_restarts, k_hi). Rows are independent,
    so the result does not depend on thread scheduling.
    """
    b = xs.shape[0]
    out_k = np.zeros(b, dtype=np.int64)
    out_w = np.zeros((b, k_hi))
    out_m = np.zeros((b, k_hi))
    out_v = np.ones((b, k_hi))
    deltas = np.empty(b)
    for i in prange(b):
        kk, md = _select_one(
            xs[i], k_hi, uniforms[i], var_floors[i], max_iter, tol, init_iter,
            out_w[i], out_m[i], out_v[i],
        )
        out_k[i] = kk
        deltas[i] = md
    return out_k, out_w, out_m, out_v, deltas
