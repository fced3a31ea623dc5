"""Shared test oracles and random-instance generators.

Everything here is deliberately independent of the package's solver paths:
dense KKT systems, brute-force loops and hand enumeration only.
"""

import numpy as np

from ctrec.hierarchy import (
    build_cross_sectional,
    build_cross_temporal,
    build_temporal,
)


def kkt_reconcile(yhat, constraints, cov):
    """Equality-constrained weighted least squares via a dense KKT system.

    Minimises (y - yhat)' inv(cov) (y - yhat) subject to constraints @ y = 0
    by solving the bordered system directly.
    """
    yhat = np.asarray(yhat, dtype=float)
    C = np.asarray(constraints, dtype=float)
    W = np.asarray(cov, dtype=float)
    winv = np.linalg.inv(W)
    k = C.shape[0]
    kkt = np.block([[winv, C.T], [C, np.zeros((k, k))]])
    rhs = np.concatenate([winv @ yhat, np.zeros(k)])
    sol = np.linalg.solve(kkt, rhs)
    return sol[: yhat.size]


def random_hierarchy(rng, max_bottom=7, grouped=True):
    """A random 1- or 2-level strict hierarchy with n <= max_bottom + 3."""
    n_b = int(rng.integers(2, max_bottom + 1))
    rows = [np.ones(n_b)]
    if grouped and n_b >= 4 and rng.random() < 0.7:
        split = int(rng.integers(2, n_b - 1))
        r1 = np.zeros(n_b)
        r1[:split] = 1
        r2 = np.zeros(n_b)
        r2[split:] = 1
        rows += [r1, r2]
    return build_cross_sectional(np.array(rows))


def random_temporal(rng, max_m=12):
    """A random temporal structure with m <= max_m."""
    m = int(rng.choice([k for k in (2, 3, 4, 6, 8, 12) if k <= max_m]))
    divisors = [k for k in range(2, m) if m % k == 0]
    keep = [k for k in divisors if rng.random() < 0.7]
    return build_temporal(m, [m, 1] + keep)


def random_instance(rng, max_bottom=7, max_m=12):
    cs = random_hierarchy(rng)
    te = random_temporal(rng, max_m)
    return build_cross_temporal(cs, te)


def random_forecasts(rng, ct, scale=5.0):
    return rng.normal(scale, 2.0, (ct.cs.n, ct.te.width))


def pv324_aggregation():
    """The 324-series benchmark hierarchy: one total row over 318 plants
    plus five zone rows of sizes 27, 73, 101, 86, 31."""
    sizes = (27, 73, 101, 86, 31)
    n_b = sum(sizes)
    rows = [np.ones(n_b)]
    off = 0
    for z in sizes:
        row = np.zeros(n_b)
        row[off:off + z] = 1
        rows.append(row)
        off += z
    return np.array(rows)
