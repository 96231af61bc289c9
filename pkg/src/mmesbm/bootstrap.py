"""Parametric bootstrap of the covariate coefficients."""

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import linear_sum_assignment

from .beta import NumericalError, approximate_standard_errors
from .generator import sample_network, spec_from_fit
from .vb import fit as fit_model

log = logging.getLogger(__name__)


class BootstrapError(NumericalError):
    """Too many bootstrap refits failed to converge."""


@dataclass
class BootstrapSample:
    replicate: int
    beta: np.ndarray          # aligned to the reference labelling
    permutation: np.ndarray
    converged: bool
    elbo: float = float("nan")


def align_groups(reference_tau, candidate):
    """Group permutation that best matches ``candidate`` to the reference.

    ``candidate`` is an N x G membership matrix or a fitted result.

    Minimises ``sum_i |tau_ref[i] - tau_cand[i, perm]|_1`` exactly with the
    Hungarian method. Apply as ``candidate[:, perm]`` (or
    ``FitResult.permuted(perm)``).
    """
    ref = np.asarray(reference_tau, dtype=float)
    cand = np.asarray(getattr(candidate, "tau_hat", candidate), dtype=float)
    if ref.shape != cand.shape:
        raise ValueError("reference and candidate memberships differ in shape")
    cost = np.abs(ref[:, :, None] - cand[:, None, :]).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(ref.shape[1], dtype=int)
    perm[rows] = cols
    return perm


def quantiles(samples, q):
    """Linear interpolation between closest ranks (1-based position q(n-1)+1)."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("quantile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    return float(np.quantile(s, q, method="linear"))


def _replicate(fit, covariates, r, seed, config, draw_theta):
    spec = spec_from_fit(fit, covariates, seed=int(seed) + r, draw_theta=draw_theta)
    net, _ = sample_network(spec)
    cfg = config.replace(seed=int(seed) + r)
    try:
        res = fit_model(net, covariates, fit.beta, cfg, tau_init=fit.tau_hat)
    except NumericalError as exc:
        log.warning("bootstrap replicate %d failed: %s", r, exc)
        nan = np.full_like(fit.beta, np.nan)
        return BootstrapSample(r, nan, np.arange(fit.n_groups), False)
    perm = align_groups(fit.tau_hat, res.tau_hat)
    return BootstrapSample(r, res.beta[perm], perm, bool(res.converged), res.elbo)


def bootstrap_beta(fit, covariates, n_replicates, config=None, seed=0, draw_theta=False,
                   n_jobs=1, max_failure_rate=0.2):
    """Simulate from the fitted model, refit, and align each replicate.

    Replicate r simulates and refits with seed ``seed + r``, warm-started at
    the reference beta and memberships. Replicates that do not converge are
    kept but flagged; more than ``max_failure_rate`` of them raises
    :class:`BootstrapError`.
    """
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    config = fit.config if config is None else config
    if not fit.converged:
        warnings.warn("reference fit did not converge", RuntimeWarning, stacklevel=2)
    samples = Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(fit, covariates, r, seed, config, draw_theta)
        for r in range(1, n_replicates + 1)
    )
    bad = sum(not s.converged for s in samples)
    if bad > max_failure_rate * n_replicates:
        raise BootstrapError(
            f"{bad} of {n_replicates} bootstrap refits did not converge"
        )
    if bad:
        warnings.warn(
            f"{bad} of {n_replicates} bootstrap refits did not converge; "
            "they are excluded from the quantiles",
            RuntimeWarning,
            stacklevel=2,
        )
    return samples


def summarize(samples, estimate, column_names=None, levels=(0.025, 0.975)):
    """Per-coefficient quantile intervals over converged replicates.

    Returns a list of dicts with keys group, covariate, estimate, lower,
    upper, significant (interval excludes zero).
    """
    kept = [s.beta for s in samples if s.converged]
    if len(kept) < 2:
        raise ValueError("bootstrap intervals need at least two converged replicates")
    stack = np.stack(kept)
    estimate = np.asarray(estimate)
    n_groups, n_cov = estimate.shape
    names = column_names or [f"x{p}" for p in range(n_cov)]
    rows = []
    for g in range(n_groups):
        for p in range(n_cov):
            lo = quantiles(stack[:, g, p], levels[0])
            hi = quantiles(stack[:, g, p], levels[1])
            rows.append({
                "group": g + 1,
                "covariate": names[p],
                "estimate": float(estimate[g, p]),
                "lower": lo,
                "upper": hi,
                "significant": bool(lo > 0 or hi < 0),
            })
    return rows


def write_samples_csv(samples, column_names, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["replicate", "group", "covariate", "beta_value", "converged"])
    for s in samples:
        for g in range(s.beta.shape[0]):
            for p, name in enumerate(column_names):
                w.writerow([s.replicate, g + 1, name, repr(float(s.beta[g, p])), int(s.converged)])


def write_summary_csv(rows, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["group", "covariate", "estimate", "q2.5", "q97.5", "significant"])
    for r in rows:
        w.writerow([r["group"], r["covariate"], repr(r["estimate"]), repr(r["lower"]),
                    repr(r["upper"]), int(r["significant"])])


def curvature_report(fit, covariates):
    """Approximate standard errors of beta from the inverse damped Hessian.

    Rough: the Hessian is of the lower bound, not the log-posterior, and
    ignores coupling with every other variational parameter.
    """
    se, damping = approximate_standard_errors(fit.beta, covariates, fit.gamma)
    return {"standard_errors": se, "damping": damping, "approximate": True}
