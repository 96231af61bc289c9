"""Special functions and log-domain helpers.

Trigamma uses the upward recurrence followed by the asymptotic series;
digamma and log-gamma defer to scipy. Everything accepts scalars or arrays and returns the
same shape (scalars come back as Python floats).
"""

import math

import numpy as np
from scipy.special import gammaln, psi, xlogy

_SHIFT_TO = 10.0

# B_2k for the trigamma series.
_TRI_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
)


def _as_positive(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.size and not (arr.min() > 0 and arr.max() < math.inf):
        raise ValueError(f"{name} is defined here only for finite x > 0")
    return arr


def _out(arr, like):
    if np.ndim(like) == 0:
        return float(arr)
    return arr


def digamma(x):
    """Digamma function Psi(x) for x > 0.

    Raises
    ------
    ValueError
        If any argument is non-positive or non-finite.
    """
    arr = _as_positive(x, "digamma")
    return _out(psi(arr), arr)


def trigamma(x):
    """Trigamma function Psi'(x) for x > 0."""
    arr = _as_positive(x, "trigamma")
    x = arr + _SHIFT_TO
    inv = 1.0 / x
    inv2 = inv * inv
    # sum_k B_2k / x^(2k+1)
    series = np.zeros_like(x)
    for c in reversed(_TRI_COEF):
        series = (series + c) * inv2
    res = inv + 0.5 * inv2 + series * inv
    for k in (9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0, 0.0):
        t = arr + k
        res = res + 1.0 / (t * t)
    return _out(res, arr)


def log_gamma(x):
    """Natural log of the gamma function for x > 0."""
    arr = _as_positive(x, "log_gamma")
    return _out(gammaln(arr), arr)


def _stirling_tail(x):
    inv = 1.0 / x
    inv2 = inv * inv
    return inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (
        1.0 / 1680.0 - inv2 / 1188.0))))


def log_rising(a, d):
    """``log_gamma(a + d) - log_gamma(a)`` without cancellation when a is large.

    ``d`` may be negative as long as ``a + d > 0``. Once both arguments
    are at least 10 the difference is taken term by term in Stirling's
    series.
    """
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    lo = np.where(d >= 0, a, a + d)
    s = np.abs(d)
    hi = lo + s
    big = lo >= 10.0
    lo_big = np.where(big, lo, 10.0)
    hi_big = np.where(big, hi, 10.0)
    stirling = ((lo_big - 0.5) * np.log1p(s / lo_big) + s * np.log(hi_big) - s
                + _stirling_tail(hi_big) - _stirling_tail(lo_big))
    small = gammaln(np.where(big, 1.0, hi)) - gammaln(np.where(big, 1.0, lo))
    val = np.where(s == 0, 0.0, np.where(big, stirling, small))
    out = np.where(d >= 0, val, -val)
    return float(out) if out.ndim == 0 else out


def log_sum_exp(v, axis=None):
    """Stable ``log(sum(exp(v)))``.

    Works along ``axis`` for arrays; ``-inf`` entries contribute zero.
    An all ``-inf`` slice returns ``-inf``.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    if axis is None:
        m = np.max(v)
        if m == -math.inf:
            return -math.inf
        return float(m + np.log(np.sum(np.exp(v - m))))
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True))
    return np.squeeze(s + m_safe, axis=axis)


def normalize_log(logw, axis=-1):
    """Exponentiate and normalise log-weights along ``axis``."""
    lse = log_sum_exp(logw, axis=axis)
    return np.exp(logw - np.expand_dims(lse, axis))


def xlogx(p):
    """Elementwise p*log(p) with 0*log(0) = 0."""
    p = np.asarray(p, dtype=float)
    if p.size and p.min() >= 0:
        # fast path; exact zeros give 0 * log(tiny) = 0
        return p * np.log(np.maximum(p, np.finfo(float).tiny))
    return xlogy(p, p)


def dirichlet_expected_log(gamma):
    """E[log tau] under Dirichlet(gamma), row-wise along the last axis."""
    gamma = np.asarray(gamma, dtype=float)
    return digamma(gamma) - digamma(gamma.sum(axis=-1, keepdims=True))
