"""Choosing the number of groups by cross-validated hold-out likelihood."""

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata

from .beta import NumericalError
from .network import make_folds, mask_fold
from .vb import fit

log = logging.getLogger(__name__)


def link_probability(theta_hat, tau_i, tau_j):
    """p(Y_ij = 1) = sum_gh tau_i[g] tau_j[h] theta[g, h]."""
    return float(np.asarray(tau_i) @ np.asarray(theta_hat) @ np.asarray(tau_j))


def link_probabilities(theta_hat, tau_hat):
    """All pairwise link probabilities, N x N (diagonal included)."""
    tau_hat = np.asarray(tau_hat)
    return tau_hat @ np.asarray(theta_hat) @ tau_hat.T


def holdout_loglik(theta_hat, tau_i, tau_j, y):
    """Log predictive probability of a held-out dyad value ``y``."""
    theta = np.asarray(theta_hat, dtype=float)
    cell = theta if y else 1.0 - theta
    return float(np.log(np.asarray(tau_i) @ cell @ np.asarray(tau_j)))


def roc_auc(scores, labels):
    """Area under the ROC curve and the curve itself.

    AUC is the Mann-Whitney rank statistic, ties counting one half. The
    curve has one point per distinct score threshold (predict positive when
    score >= threshold), preceded by (0, 0).

    Returns
    -------
    auc : float
    points : ndarray, shape (m, 3)
        Columns fpr, tpr, threshold; the leading point has threshold +inf.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d vectors")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC/AUC needs at least one positive and one negative label")
    ranks = rankdata(s)
    auc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    thresholds = np.unique(s)[::-1]
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    last = np.searchsorted(-s_sorted, -thresholds, side="right") - 1
    pts = np.column_stack([fp[last] / n_neg, tp[last] / n_pos, thresholds])
    pts = np.vstack([[0.0, 0.0, np.inf], pts])
    return float(auc), pts


def one_standard_error_choice(g_values, means, stderrs):
    """Smallest G whose mean is within one standard error of the best."""
    means = np.asarray(means, dtype=float)
    ok = np.isfinite(means)
    if not ok.any():
        raise NumericalError("no model produced a finite cross-validation score")
    best = int(np.nanargmax(np.where(ok, means, -np.inf)))
    se = stderrs[best] if np.isfinite(stderrs[best]) else 0.0
    threshold = means[best] - se
    for g, m in zip(g_values, means):
        if np.isfinite(m) and m >= threshold:
            return int(g)
    return int(g_values[best])


@dataclass
class CvReport:
    g_values: list
    n_folds: int
    fold_scores: dict          # G -> array of per-fold mean log-lik (nan if excluded)
    fold_sizes: list
    means: list
    stderrs: list
    chosen_G: int
    predictions: dict = field(default_factory=dict)   # G -> (fold, i, j, y, p) array
    failures: list = field(default_factory=list)

    def pooled_auc(self, g):
        pred = self.predictions[g]
        return roc_auc(pred[:, 4], pred[:, 3])

    def fold_aucs(self, g):
        pred = self.predictions[g]
        out = []
        for f in range(1, self.n_folds + 1):
            sel = pred[:, 0] == f
            y = pred[sel, 3]
            if sel.any() and 0 < y.sum() < len(y):
                out.append(roc_auc(pred[sel, 4], y)[0])
            else:
                out.append(np.nan)
        return out

    def write_scores_csv(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["G", "fold", "mean_loglik", "fold_size"])
        for g in self.g_values:
            for f, v in enumerate(self.fold_scores[g], start=1):
                w.writerow([g, f, repr(float(v)), self.fold_sizes[f - 1]])

    def write_summary_csv(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["G", "mean", "stderr"])
        for g, m, s in zip(self.g_values, self.means, self.stderrs):
            w.writerow([g, repr(float(m)), repr(float(s))])


def _score_fold(network, covariates, folds, drop, config):
    train = mask_fold(network, folds, drop)
    res = fit(train, covariates, None, config)
    ii, jj = folds.dyads(drop)
    p = link_probabilities(res.theta_hat, res.tau_hat)[ii, jj]
    y = network.adjacency[ii, jj]
    ll = np.where(y == 1, np.log(p), np.log1p(-p))
    return ll, np.column_stack([np.full(len(ii), drop), ii, jj, y, p])


def _job(network, covariates, folds, g, drop, config):
    try:
        return _score_fold(network, covariates, folds, drop, config)
    except NumericalError as exc:
        return exc


def cross_validate(network, covariates, g_values, k, config, seed=None, folds=None, n_jobs=1):
    """k-fold hold-out likelihood over candidate numbers of groups.

    The same dyad folds are used for every G. Each (G, fold) fit uses
    ``config`` with ``n_groups`` replaced and a seed derived from ``seed``,
    G and the fold index. Folds whose fit fails numerically are excluded
    with a warning.
    """
    g_values = [int(g) for g in g_values]
    if not g_values:
        raise ValueError("g_values must be non-empty")
    if folds is None:
        folds = make_folds(network, k, seed)
    k = folds.n_folds
    base = 0 if seed is None else seed
    jobs = [
        (g, f, config.replace(n_groups=g, seed=[int(base), g, f]))
        for g in g_values
        for f in range(1, k + 1)
    ]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_job)(network, covariates, folds, g, f, cfg) for g, f, cfg in jobs
    )
    fold_scores = {g: np.full(k, np.nan) for g in g_values}
    predictions = {g: [] for g in g_values}
    failures = []
    for (g, f, _), out in zip(jobs, results):
        if isinstance(out, Exception):
            msg = f"G={g} fold={f}: fit failed ({out}); fold excluded"
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            failures.append((g, f, str(out)))
            continue
        ll, pred = out
        fold_scores[g][f - 1] = ll.mean() if len(ll) else np.nan
        predictions[g].append(pred)
    means, stderrs = [], []
    for g in g_values:
        v = fold_scores[g][np.isfinite(fold_scores[g])]
        means.append(float(v.mean()) if len(v) else np.nan)
        stderrs.append(float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else np.nan)
    chosen = one_standard_error_choice(g_values, means, stderrs)
    preds = {
        g: (np.vstack(p) if p else np.empty((0, 5))) for g, p in predictions.items()
    }
    return CvReport(g_values, k, fold_scores, list(folds.sizes), means, stderrs, chosen, preds, failures)
