"""Covariate coefficients of the membership prior.

The prior concentration of actor n for group g is
``delta[n, g] = exp(W[n] @ beta[g])``. Given the variational Dirichlet
parameters ``gamma``, the only part of the lower bound that depends on
``beta`` is

    sum_n  lgamma(sum_g delta_ng) - sum_g lgamma(delta_ng)
           + sum_g (delta_ng - 1) * E[log tau_ng]

which is what the Newton iterations below maximise. Gradients and Hessians
are flattened group-major: index ``g * P + p`` refers to ``beta[g, p]``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import beta_eval, damped_direction, newton
from ._kernels import max_log_concentration as max_log_concentration_of
from .network import CovariateMatrix
from .numerics import dirichlet_expected_log

log = logging.getLogger(__name__)

DEFAULT_CLIP = 30.0
# exp(15) ~ 3.3e6: beyond this, gamma = delta + counts no longer resolves the counts
DEFAULT_MAX_LOG_CONCENTRATION = 15.0


class NumericalError(ArithmeticError):
    """A fit produced non-finite values or could not make progress."""


def _design(covariates):
    if isinstance(covariates, CovariateMatrix):
        return (np.ascontiguousarray(covariates.values), covariates.intercept_index,
                covariates.column_names)
    w = np.ascontiguousarray(covariates, dtype=float)
    return w, 0, tuple(f"x{p}" for p in range(w.shape[1]))


def prior_concentration(beta, covariates):
    """delta = exp(W beta^T), shape N x G."""
    w, _, _ = _design(covariates)
    with np.errstate(over="ignore"):
        return np.exp(w @ np.asarray(beta, dtype=float).T)


def _eval(beta, w, elog, order):
    value, grad, hess, ok = beta_eval(
        np.ascontiguousarray(beta, dtype=float), w, np.ascontiguousarray(elog), order
    )
    if not ok and order > 0:
        raise NumericalError(
            "exp(W beta) overflowed; coefficients are diverging (separability)"
        )
    return value, grad, hess


def _objective(beta, w, elog):
    return _eval(beta, w, elog, 0)[0]


def _gradient(beta, w, elog):
    return _eval(beta, w, elog, 1)[1]


def _hessian(beta, w, elog):
    return _derivatives(beta, w, elog)[1]


def _derivatives(beta, w, elog):
    _, grad, hess = _eval(beta, w, elog, 2)
    return grad, 0.5 * (hess + hess.T)


def beta_objective(beta, covariates, gamma):
    """Beta-dependent part of the lower bound, summed over actors."""
    w, _, _ = _design(covariates)
    return _objective(np.asarray(beta, dtype=float), w, dirichlet_expected_log(gamma))


def beta_gradient(beta, covariates, gamma):
    """Analytic gradient, length G*P, group-major."""
    w, _, _ = _design(covariates)
    return _gradient(np.asarray(beta, dtype=float), w, dirichlet_expected_log(gamma))


def beta_hessian(beta, covariates, gamma):
    """Analytic Hessian, GP x GP, group-major."""
    w, _, _ = _design(covariates)
    return _hessian(np.asarray(beta, dtype=float), w, dirichlet_expected_log(gamma))


def init_beta_mom(gamma, covariates, clip_bound=DEFAULT_CLIP, average_components=False):
    """Method-of-moments starting point for beta.

    Covariate effects start at zero; intercepts are set from the moments of
    the variational membership means so that exp(intercept_g) matches a
    Dirichlet with the same mean and (component-1) precision.
    """
    w, icol, _ = _design(covariates)
    gamma = np.asarray(gamma, dtype=float)
    n_groups = gamma.shape[1]
    tau = gamma / gamma.sum(axis=1, keepdims=True)
    mean = tau.mean(axis=0)
    second = (tau * tau).mean(axis=0)
    var = second - mean * mean
    tiny = 1e-12
    if average_components:
        ok = var > tiny
        precision = float(np.mean((mean[ok] - mean[ok] ** 2) / var[ok])) if ok.any() else None
    else:
        precision = float((mean[0] - mean[0] ** 2) / var[0]) if var[0] > tiny else None
    if precision is None or not np.isfinite(precision) or precision <= 0:
        precision = float(n_groups)
        mean = np.full(n_groups, 1.0 / n_groups)
    beta = np.zeros((n_groups, w.shape[1]))
    with np.errstate(divide="ignore"):
        intercepts = np.log(mean * precision)
    beta[:, icol] = np.clip(intercepts, -clip_bound, clip_bound)
    return beta


@dataclass
class BetaDiagnostics:
    iterations: int = 0
    gradient_norm: float = 0.0
    damping: float = 0.0
    step_halvings: int = 0
    separability: list = field(default_factory=list)
    concentration_capped: bool = False

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "damping": self.damping,
            "step_halvings": self.step_halvings,
            "separability": list(self.separability),
            "concentration_capped": self.concentration_capped,
        }


def _damped_step(hess, grad):
    """Ascent step for the damped system; returns (step, damping)."""
    step, lam, ok = damped_direction(np.ascontiguousarray(hess, dtype=float),
                                     np.ascontiguousarray(grad, dtype=float))
    if not ok:
        raise NumericalError("Hessian could not be damped to negative definite")
    return step, lam


def estimate_beta(
    beta_in,
    covariates,
    gamma,
    clip_bound=DEFAULT_CLIP,
    max_iterations=50,
    gradient_tolerance=1e-6,
    max_halvings=20,
    max_log_concentration=DEFAULT_MAX_LOG_CONCENTRATION,
):
    """Damped Newton-Raphson with step halving on the beta objective.

    Returns ``(beta, diagnostics)``. The objective never decreases across
    accepted steps. Coefficients are kept inside ``[-clip_bound,
    clip_bound]``; covariates whose coefficients end on that bound are
    listed in ``diagnostics.separability``. Steps that would push any
    entry of W beta above ``max_log_concentration`` are refused, and
    ``diagnostics.concentration_capped`` records when the result sits on
    that ceiling.
    """
    w, _, names = _design(covariates)
    beta = np.array(beta_in, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise NumericalError("initial beta is not finite")
    elog = np.ascontiguousarray(dirichlet_expected_log(gamma))
    beta, grad, iters, damping, halvings, status = newton(
        beta, w, elog, float(clip_bound), float(max_log_concentration), int(max_iterations),
        float(gradient_tolerance), int(max_halvings),
    )
    if status == 1:
        raise NumericalError("beta objective is not finite at the starting point")
    if status == 2:
        raise NumericalError("exp(W beta) overflowed or the derivatives are not finite")
    if status == 3:
        raise NumericalError("Hessian could not be damped to negative definite")
    diag = BetaDiagnostics(
        iterations=int(iters),
        gradient_norm=float(np.max(np.abs(grad), initial=0.0)),
        damping=float(damping),
        step_halvings=int(halvings),
        concentration_capped=bool(max_log_concentration_of(beta, w) >= max_log_concentration - 1e-3),
    )
    on_bound = np.isclose(np.abs(beta), clip_bound, rtol=0.0, atol=1e-9)
    for p in np.nonzero(on_bound.any(axis=0))[0]:
        diag.separability.append(names[p])
    return beta, diag


def warn_if_degenerate(diag, clip_bound=DEFAULT_CLIP):
    for name in diag.separability:
        log.warning(
            "coefficient for covariate %r reached the clip bound %g; "
            "estimates are diverging (separability)", name, clip_bound
        )
    if diag.concentration_capped:
        log.warning(
            "exp(W beta) reached its ceiling: some memberships are pinned to the "
            "prior mean and beta is not identified along that direction"
        )


def approximate_standard_errors(beta, covariates, gamma):
    """Curvature-based standard errors from the inverse (damped) Hessian.

    Only the beta block is used and the lower bound stands in for the
    log-posterior, so treat these as rough.
    """
    hess = beta_hessian(beta, covariates, gamma)
    n = hess.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(hess)))))
    for lam in [0.0] + [scale * 10.0**k for k in range(-8, 7)]:
        m = -(hess - lam * np.eye(n))
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            continue
        cov = np.linalg.inv(m)
        return np.sqrt(np.diag(cov)).reshape(np.shape(beta)), lam
    raise NumericalError("Hessian could not be damped to negative definite")
