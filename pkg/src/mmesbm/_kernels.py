"""Compiled beta objective and Newton solver.

At desk-scale sizes (a few hundred actors, a handful of groups and
covariates) the per-call overhead of numpy dominates the damped Newton
iterations, so they run here as plain loops.
"""

import math

import numpy as np
from numba import njit

# reassociation for vectorised reductions; inf and nan keep their usual meaning
_FAST = {"reassoc", "contract", "arcp", "nsz"}

_PSI = (1.0 / 12.0, -1.0 / 120.0, 1.0 / 252.0, -1.0 / 240.0, 1.0 / 132.0,
        -691.0 / 32760.0, 1.0 / 12.0)
_TRI = (1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0,
        -691.0 / 2730.0, 7.0 / 6.0)


@njit(cache=True)
def _digamma(x):
    shift = 0.0
    while x < 10.0:
        shift += 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    s = 0.0
    for k in range(6, -1, -1):
        s = (s + _PSI[k]) * inv2
    return math.log(x) - 0.5 / x - s - shift


@njit(cache=True)
def _trigamma(x):
    shift = 0.0
    while x < 10.0:
        shift += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    s = 0.0
    for k in range(6, -1, -1):
        s = (s + _TRI[k]) * inv2
    return inv + 0.5 * inv2 + s * inv + shift


@njit(cache=True)
def _log_rising(a, d):
    # lgamma(a + d) - lgamma(a); Stirling differences once both arguments are large
    if d == 0.0:
        return 0.0
    lo = a if d > 0.0 else a + d
    s = abs(d)
    if lo < 10.0:
        val = math.lgamma(lo + s) - math.lgamma(lo)
    else:
        hi = lo + s
        val = (lo - 0.5) * math.log1p(s / lo) + s * math.log(hi) - s
        val += _stirling_tail(hi) - _stirling_tail(lo)
    return val if d > 0.0 else -val


@njit(cache=True)
def _stirling_tail(x):
    inv = 1.0 / x
    inv2 = inv * inv
    return inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (
        1.0 / 1680.0 - inv2 / 1188.0))))


@njit(cache=True)
def beta_increment(beta0, beta1, w, elog):
    """Objective at beta1 minus objective at beta0, without forming either.

    Returns (increment, ok); ok is False if exp(W beta) overflows.
    """
    n, p_n = w.shape
    g_n = beta0.shape[0]
    total = 0.0
    for a in range(n):
        tot0 = 0.0
        dtot = 0.0
        part = 0.0
        for g in range(g_n):
            e0 = 0.0
            e1 = 0.0
            for p in range(p_n):
                e0 += w[a, p] * beta0[g, p]
                e1 += w[a, p] * beta1[g, p]
            d0 = math.exp(e0)
            step = d0 * math.expm1(e1 - e0)
            if not (d0 > 0.0 and d0 < math.inf and abs(step) < math.inf):
                return -math.inf, False
            tot0 += d0
            dtot += step
            part += step * elog[a, g] - _log_rising(d0, step)
        total += part + _log_rising(tot0, dtot)
    return total, True


@njit(cache=True)
def beta_eval(beta, w, elog, order):
    """Objective (order 0), plus gradient (1), plus Hessian (2).

    Returns (value, gradient, hessian, ok); ``ok`` is False when
    exp(W beta) leaves the finite positive range.
    """
    n, p_n = w.shape
    g_n = beta.shape[0]
    dim = g_n * p_n
    grad = np.zeros(dim)
    hess = np.zeros((dim, dim))
    delta = np.empty(g_n)
    resid = np.empty(g_n)
    value = 0.0
    for a in range(n):
        tot = 0.0
        for g in range(g_n):
            eta = 0.0
            for p in range(p_n):
                eta += w[a, p] * beta[g, p]
            d = math.exp(eta)
            if not (d > 0.0 and d < math.inf):
                return -math.inf, grad, hess, False
            delta[g] = d
            tot += d
        value += math.lgamma(tot)
        for g in range(g_n):
            value += -math.lgamma(delta[g]) + (delta[g] - 1.0) * elog[a, g]
        # with one group the derivatives vanish identically; skip the roundoff
        if order < 1 or g_n == 1:
            continue
        psi_tot = _digamma(tot)
        for g in range(g_n):
            resid[g] = psi_tot - _digamma(delta[g]) + elog[a, g]
            c = delta[g] * resid[g]
            for p in range(p_n):
                grad[g * p_n + p] += c * w[a, p]
        if order < 2:
            continue
        tri_tot = _trigamma(tot)
        for g in range(g_n):
            own = delta[g] * resid[g] - delta[g] * delta[g] * _trigamma(delta[g])
            for h in range(g_n):
                c = tri_tot * delta[g] * delta[h]
                if g == h:
                    c += own
                for p in range(p_n):
                    wp = c * w[a, p]
                    for q in range(p_n):
                        hess[g * p_n + p, h * p_n + q] += wp * w[a, q]
    return value, grad, hess, True


@njit(cache=True)
def _cholesky(a):
    """Lower Cholesky factor of a; (factor, False) if a is not positive definite."""
    n = a.shape[0]
    low = np.zeros_like(a)
    for i in range(n):
        for j in range(i + 1):
            acc = a[i, j]
            for k in range(j):
                acc -= low[i, k] * low[j, k]
            if i == j:
                if not acc > 0.0:
                    return low, False
                low[i, i] = math.sqrt(acc)
            else:
                low[i, j] = acc / low[j, j]
    return low, True


@njit(cache=True)
def _chol_solve(low, b):
    n = b.shape[0]
    z = np.empty(n)
    for i in range(n):
        acc = b[i]
        for k in range(i):
            acc -= low[i, k] * z[k]
        z[i] = acc / low[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        acc = z[i]
        for k in range(i + 1, n):
            acc -= low[k, i] * x[k]
        x[i] = acc / low[i, i]
    return x


@njit(cache=True)
def damped_direction(hess, grad):
    """Ascent direction s solving -(H - lam I) s = grad for the smallest lam tried.

    lam runs over 0 and scale * 10^k, k = -8..6, where scale is the largest
    absolute diagonal entry of H (at least 1). Returns (s, lam, ok).
    """
    dim = hess.shape[0]
    scale = 1.0
    for i in range(dim):
        if abs(hess[i, i]) > scale:
            scale = abs(hess[i, i])
    m = np.empty_like(hess)
    for k in range(-9, 7):
        lam = 0.0 if k == -9 else scale * 10.0 ** k
        for i in range(dim):
            for j in range(dim):
                m[i, j] = -hess[i, j]
            m[i, i] += lam
        low, ok = _cholesky(m)
        if ok:
            return _chol_solve(low, grad), lam, True
    return np.zeros(dim), 0.0, False


@njit(cache=True)
def max_log_concentration(beta, w):
    n, p_n = w.shape
    top = -math.inf
    for a in range(n):
        for g in range(beta.shape[0]):
            eta = 0.0
            for p in range(p_n):
                eta += w[a, p] * beta[g, p]
            top = max(top, eta)
    return top


@njit(cache=True)
def newton(beta, w, elog, clip, eta_max, max_iter, tol, max_halvings):
    """Damped Newton ascent with step halving and clipping.

    Candidates with any entry of W beta above ``eta_max`` (or above its
    starting maximum, if that is larger) are treated like failed steps.

    Returns (beta, grad, iterations, max damping, halvings, status) with
    status 0 ok, 1 non-finite start, 2 overflow in a derivative, 3 damping
    failed.
    """
    g_n, p_n = beta.shape
    dim = g_n * p_n
    beta = np.minimum(np.maximum(beta.copy(), -clip), clip)
    f_cur, grad, hess, ok = beta_eval(beta, w, elog, 0)
    if not ok or not np.isfinite(f_cur):
        return beta, grad, 0, 0.0, 0, 1
    ceiling = max(eta_max, max_log_concentration(beta, w))
    iters = 0
    halvings = 0
    damping = 0.0
    cand = np.empty_like(beta)
    for _ in range(max_iter):
        _, grad, hess, ok = beta_eval(beta, w, elog, 2)
        if not ok:
            return beta, grad, iters, damping, halvings, 2
        gmax = 0.0
        for k in range(dim):
            if not np.isfinite(grad[k]):
                return beta, grad, iters, damping, halvings, 2
            gmax = max(gmax, abs(grad[k]))
        if gmax < tol:
            return beta, grad, iters, damping, halvings, 0
        hs = 0.5 * (hess + hess.T)
        for k in range(dim):
            for l in range(dim):
                if not np.isfinite(hs[k, l]):
                    return beta, grad, iters, damping, halvings, 2
        step, lam, ok = damped_direction(hs, grad)
        if not ok:
            return beta, grad, iters, damping, halvings, 3
        damping = max(damping, lam)
        t = 1.0
        accepted = False
        for _h in range(max_halvings + 1):
            for g in range(g_n):
                for p in range(p_n):
                    v = beta[g, p] + t * step[g * p_n + p]
                    cand[g, p] = min(max(v, -clip), clip)
            if max_log_concentration(cand, w) <= ceiling:
                inc, ok = beta_increment(beta, cand, w, elog)
            else:
                inc, ok = -math.inf, False
            if ok and np.isfinite(inc) and inc >= 0.0:
                accepted = True
                break
            t *= 0.5
            halvings += 1
        if not accepted:
            return beta, grad, iters, damping, halvings, 0
        same = True
        for g in range(g_n):
            for p in range(p_n):
                if cand[g, p] != beta[g, p]:
                    same = False
        if same:
            return beta, grad, iters, damping, halvings, 0
        iters += 1
        beta[:, :] = cand
    _, grad, hess, ok = beta_eval(beta, w, elog, 1)
    return beta, grad, iters, damping, halvings, 0


@njit(cache=True, fastmath=_FAST)
def role_logits(prior, base, diff, other, y, sender, out):
    """Shifted logits of the sender (or receiver) role update, written to ``out``.

    For a sender update ``out[g, i, j] = prior[i, g] + sum_h T_ij[g, h] other[h, i, j]``
    with ``T_ij = base + y_ij * diff``; a receiver update uses the transposed
    tables and ``prior[j, g]``. Each dyad's logits are shifted so their
    maximum is zero, ready for exponentiation.
    """
    g_n, n, _ = other.shape
    top = np.empty(n)
    for i in range(n):
        for g in range(g_n):
            for j in range(n):
                out[g, i, j] = prior[i, g] if sender else prior[j, g]
            for h in range(g_n):
                if sender:
                    b, d = base[g, h], diff[g, h]
                else:
                    b, d = base[h, g], diff[h, g]
                for j in range(n):
                    out[g, i, j] += (b + y[i, j] * d) * other[h, i, j]
        top[:] = out[0, i]
        for g in range(1, g_n):
            for j in range(n):
                top[j] = max(top[j], out[g, i, j])
        for g in range(g_n):
            for j in range(n):
                out[g, i, j] -= top[j]


@njit(cache=True, fastmath=_FAST)
def normalize_roles(p):
    """Scale every dyad's role weights (axis 0) to sum to one, in place."""
    g_n, n, _ = p.shape
    tot = np.empty(n)
    for i in range(n):
        tot[:] = p[0, i]
        for g in range(1, g_n):
            for j in range(n):
                tot[j] += p[g, i, j]
        for j in range(n):
            tot[j] = 1.0 / tot[j]
        for g in range(g_n):
            for j in range(n):
                p[g, i, j] *= tot[j]


@njit(cache=True, fastmath=_FAST)
def role_statistics(p1, p2, logp1, logp2, y, mask):
    """Sums over observed dyads; unobserved dyads are reset to uniform.

    Returns (sent N x G, received N x G, link counts G x G, non-link
    counts G x G, sum of p log p).
    """
    g_n, n, _ = p1.shape
    sent = np.zeros((n, g_n))
    received = np.zeros((n, g_n))
    links = np.zeros((g_n, g_n))
    nonlinks = np.zeros((g_n, g_n))
    ent = 0.0
    obs = np.empty(n)
    link = np.empty(n)
    for i in range(n):
        for j in range(n):
            obs[j] = 1.0 if mask[i, j] else 0.0
            link[j] = obs[j] * y[i, j]
        for g in range(g_n):
            s = 0.0
            e = 0.0
            for j in range(n):
                s += p1[g, i, j] * obs[j]
                e += obs[j] * (p1[g, i, j] * logp1[g, i, j] + p2[g, i, j] * logp2[g, i, j])
                received[j, g] += p2[g, i, j] * obs[j]
            sent[i, g] += s
            ent += e
            for h in range(g_n):
                a = 0.0
                b = 0.0
                for j in range(n):
                    q = p1[g, i, j] * p2[h, i, j]
                    a += q * link[j]
                    b += q * (obs[j] - link[j])
                links[g, h] += a
                nonlinks[g, h] += b
        for j in range(n):
            if not mask[i, j]:
                for g in range(g_n):
                    p1[g, i, j] = 1.0 / g_n
                    p2[g, i, j] = 1.0 / g_n
    return sent, received, links, nonlinks, ent
