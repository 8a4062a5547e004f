"""Independent reference computations used across the test suite.

These deliberately avoid the code paths they check: the projection oracle
enumerates KKT candidates instead of running the cumulative threshold scan,
and the small-instance variant enumerates every support subset outright.
"""

from __future__ import annotations

import itertools

import numpy as np


def qp_simplex_projection_active_set(y: np.ndarray, total: float) -> np.ndarray:
    """Solve min ||x - y||^2 s.t. x >= 0, sum(x) = total by checking the KKT
    system on every sorted-prefix support.

    For each candidate support size s (taken from the descending sort of y),
    the equality multiplier is fixed by the mass constraint; the candidate is
    accepted only if it satisfies primal feasibility on the support and dual
    feasibility off it.  Exactly one support size passes (up to ties).
    """
    n = y.size
    order = np.argsort(-y)
    u = y[order]
    for s in range(n, 0, -1):
        theta = (u[:s].sum() - total) / s
        x_support = u[:s] - theta
        if x_support[-1] < 0:
            continue
        if s < n and u[s] - theta > 1e-15 * max(1.0, abs(theta)):
            continue
        x = np.zeros(n)
        x[order[:s]] = x_support
        return x
    raise AssertionError("no KKT-consistent support found")


def qp_simplex_projection_subsets(y: np.ndarray, total: float) -> np.ndarray:
    """Same QP solved by full enumeration of 2^n - 1 supports (small n only)."""
    n = y.size
    best = None
    best_val = np.inf
    for r in range(1, n + 1):
        for support in itertools.combinations(range(n), r):
            idx = list(support)
            theta = (y[idx].sum() - total) / r
            x = np.zeros(n)
            x[idx] = y[idx] - theta
            if np.any(x[idx] < -1e-12):
                continue
            val = np.sum((x - y) ** 2)
            if val < best_val - 1e-15:
                best_val = val
                best = x
    assert best is not None
    return best


def brute_force_inner(f_rates: np.ndarray, g_rates: np.ndarray, dt: float) -> float:
    """Triple-loop summation of the discretized scalar product."""
    acc = 0.0
    for p in range(f_rates.shape[0]):
        for k in range(f_rates.shape[1]):
            acc += f_rates[p, k] * g_rates[p, k] * dt
    return acc
