"""Brute-force reference computations for tiny networks."""

import itertools

import numpy as np
from scipy.special import betaln, gammaln, logsumexp


def exact_log_marginal(y, delta, alpha1=1.0, alpha2=1.0):
    """log p(Y | delta) by summing over every role assignment.

    Given the roles, tau integrates to a Dirichlet-multinomial per actor and
    each block probability to a beta-binomial term.
    """
    n, g = delta.shape
    dyads = [(i, j) for i in range(n) for j in range(n) if i != j]
    total = []
    for roles in itertools.product(range(g * g), repeat=len(dyads)):
        counts = np.zeros((n, g))
        links = np.zeros((g, g))
        nonlinks = np.zeros((g, g))
        for (i, j), r in zip(dyads, roles):
            a, b = divmod(r, g)
            counts[i, a] += 1
            counts[j, b] += 1
            if y[i, j]:
                links[a, b] += 1
            else:
                nonlinks[a, b] += 1
        lp = np.sum(gammaln(delta.sum(axis=1)) - gammaln((delta + counts).sum(axis=1))
                    + (gammaln(delta + counts) - gammaln(delta)).sum(axis=1))
        lp += np.sum(betaln(alpha1 + links, alpha2 + nonlinks) - betaln(alpha1, alpha2))
        total.append(lp)
    return float(logsumexp(total))
