"""Goodness-of-fit statistics and simulation envelopes."""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .generator import sample_network, spec_from_fit
from .numerics import xlogx
from .selection import link_probabilities

UNREACHABLE = math.inf


def eom_scores(tau_hat):
    """Extent of membership: exp of the entropy of each row of ``tau_hat``."""
    tau = np.asarray(tau_hat, dtype=float)
    if tau.ndim != 2:
        raise ValueError("tau_hat must be N x G")
    ent = -xlogx(tau).sum(axis=1)
    return np.clip(np.exp(ent), 1.0, tau.shape[1])


def _require_full(network):
    if not network.is_fully_observed():
        raise ValueError("statistic needs a fully observed network")


def degree_distributions(network):
    """(in-degree counts, out-degree counts), each of length N (degrees 0..N-1)."""
    _require_full(network)
    n = network.n_actors
    y = network.adjacency.astype(int)
    return (
        np.bincount(y.sum(axis=0), minlength=n)[:n],
        np.bincount(y.sum(axis=1), minlength=n)[:n],
    )


def geodesic_distribution(network):
    """Counts of ordered pairs by shortest directed path length.

    Returns a dict ``{distance: count}`` with ``math.inf`` for unreachable
    pairs; only distances that occur are present.
    """
    _require_full(network)
    n = network.n_actors
    if n < 2:
        return {}
    dist = shortest_path(
        csr_matrix(network.adjacency.astype(float)), directed=True, unweighted=True
    )
    off = dist[~np.eye(n, dtype=bool)]
    out = {}
    finite = off[np.isfinite(off)].astype(int)
    for d, c in zip(*np.unique(finite, return_counts=True)):
        out[int(d)] = int(c)
    unreachable = int(np.sum(~np.isfinite(off)))
    if unreachable:
        out[UNREACHABLE] = unreachable
    return out


def link_probability_separation(fit, network):
    """Fitted link probabilities at observed links and at observed non-links."""
    tau = fit.tau_hat
    if tau.shape[0] != network.n_actors:
        raise ValueError("fit and network have different numbers of actors")
    p = link_probabilities(fit.theta_hat, tau)
    obs = network.mask
    y = network.adjacency.astype(bool)
    return p[obs & y], p[obs & ~y]


def write_separation_csv(fit, network, stream):
    p = link_probabilities(fit.theta_hat, fit.tau_hat)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["i", "j", "y_observed", "p_hat"])
    for i, j in zip(*np.nonzero(network.mask)):
        w.writerow([i + 1, j + 1, int(network.adjacency[i, j]), repr(float(p[i, j]))])


def write_eom_csv(scores, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["actor", "score"])
    for i, s in enumerate(scores):
        w.writerow([i + 1, repr(float(s))])


def _statistics(network):
    indeg, outdeg = degree_distributions(network)
    return {
        "in_degree": dict(enumerate(int(c) for c in indeg)),
        "out_degree": dict(enumerate(int(c) for c in outdeg)),
        "geodesic": geodesic_distribution(network),
    }


def _sort_key(v):
    return (math.isinf(v), v)


@dataclass
class GofReport:
    """Observed statistics with five-number envelopes over simulations.

    ``envelopes[stat]`` is a list of rows ``(support, observed, min, q25,
    median, q75, max)``; support points are the union of the observed and
    simulated supports, with absent points counted as zero.
    """

    observed: dict
    simulated: list
    envelopes: dict

    @property
    def n_simulations(self):
        return len(self.simulated)

    def band_coverage(self, stat, lower="q25", upper="q75"):
        """Fraction of support points where the observed value lies in the band."""
        cols = {"min": 2, "q25": 3, "median": 4, "q75": 5, "max": 6}
        rows = self.envelopes[stat]
        inside = [r[cols[lower]] <= r[1] <= r[cols[upper]] for r in rows]
        return float(np.mean(inside)) if inside else 1.0

    def write_csv(self, stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["statistic", "support_point", "observed", "sim_min", "sim_q25",
                    "sim_median", "sim_q75", "sim_max"])
        for stat, rows in self.envelopes.items():
            for r in rows:
                support = "inf" if math.isinf(r[0]) else int(r[0])
                w.writerow([stat, support, r[1]] + [repr(float(v)) for v in r[2:]])


def _envelope(observed, simulated):
    support = set(observed)
    for s in simulated:
        support |= set(s)
    rows = []
    for k in sorted(support, key=_sort_key):
        vals = np.array([s.get(k, 0) for s in simulated], dtype=float)
        q = np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0])
        rows.append((k, observed.get(k, 0), *[float(v) for v in q]))
    return rows


def gof_compare(fit, network, covariates, n_simulations=100, seed=None, draw_theta=False):
    """Simulate from the fitted model and compare degree and geodesic statistics.

    Simulation r uses seed ``seed + r``; the output is deterministic for a
    fixed seed.
    """
    if n_simulations < 1:
        raise ValueError("need at least one simulation")
    observed = _statistics(network)
    base = 0 if seed is None else seed
    simulated = []
    for r in range(1, n_simulations + 1):
        spec = spec_from_fit(fit, covariates, seed=int(base) + r, draw_theta=draw_theta)
        net, _ = sample_network(spec)
        simulated.append(_statistics(net))
    envelopes = {
        stat: _envelope(observed[stat], [s[stat] for s in simulated]) for stat in observed
    }
    return GofReport(observed, simulated, envelopes)
