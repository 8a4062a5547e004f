"""Delay operators consumed by the solvers.

The loading-backed operator wraps one network and grid; synthetic operators
over the same kind of feasible set (per-O-D simplex blocks) provide instances
with known solutions and known Lipschitz constants for solver verification.
All operators count their evaluations, one tick per call; the loading-backed
operator additionally memoizes recent results, so repeated evaluation at the
same profile does not rerun the loading.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ValidationError
from .loading import _Engine, effective_delay
from .network import Network
from .space import (
    DelayProfile,
    PathFlowProfile,
    TimeGrid,
    TripTable,
    norm,
    residual_norm,
)

__all__ = [
    "DelayOperator",
    "DNLDelayOperator",
    "SyntheticVI",
    "dnl_operator",
    "affine_operator",
    "scaled_pseudo_monotone",
    "power_iteration_norm",
    "monotonicity_violation_witness",
    "pseudo_monotone_audit",
]


class DelayOperator:
    """Deterministic map from flow profiles to delay profiles.

    Subclasses implement `_compute`.  `evaluate` increments the call counter
    by exactly one per invocation regardless of caching.
    """

    def __init__(self, lipschitz: float | None = None):
        self.lipschitz = lipschitz
        self._calls = 0

    @property
    def eval_count(self) -> int:
        return self._calls

    def reset_count(self) -> None:
        self._calls = 0

    def evaluate(self, h: PathFlowProfile) -> DelayProfile:
        self._calls += 1
        return self._compute(h)

    def _compute(self, h: PathFlowProfile) -> DelayProfile:
        raise NotImplementedError


class DNLDelayOperator(DelayOperator):
    """Effective delays from dynamic network loading plus arrival penalty.

    Solver iterates may carry negative rates; loading is undefined for them,
    so the operator clamps negative entries to zero before loading (the
    minimal continuous extension) and leaves the profile otherwise untouched.
    """

    def __init__(self, net: Network, grid: TimeGrid, gamma: float = 1.0,
                 buffer: float | None = None, cache_size: int = 4):
        super().__init__(lipschitz=None)
        self.net = net
        self.grid = grid
        self.gamma = gamma
        self._engine = _Engine(net, grid, buffer)
        self._od_by_path = net.od_by_path()
        self._cache: dict[bytes, DelayProfile] = {}
        self._cache_size = cache_size
        self.dnl_runs = 0

    def _compute(self, h: PathFlowProfile) -> DelayProfile:
        clamped = np.maximum(h.rates, 0.0)
        key = hashlib.sha1(clamped.tobytes()).digest()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        result = self._engine.run(clamped)
        self.dnl_runs += 1
        delays = result.path_delays()
        profile = effective_delay(delays, self.grid, self.net.trips,
                                  self._od_by_path, self.gamma)
        if len(self._cache) >= self._cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = profile
        return profile


def dnl_operator(net: Network, grid: TimeGrid, gamma: float = 1.0,
                 buffer: float | None = None) -> DNLDelayOperator:
    return DNLDelayOperator(net, grid, gamma=gamma, buffer=buffer)


class _CallableOperator(DelayOperator):
    def __init__(self, fn: Callable[[PathFlowProfile], np.ndarray],
                 lipschitz: float | None = None):
        super().__init__(lipschitz=lipschitz)
        self._fn = fn

    def _compute(self, h: PathFlowProfile) -> DelayProfile:
        return DelayProfile(h.grid, self._fn(h))


@dataclass
class SyntheticVI:
    """A test problem: operator, feasible set, and (optionally) its solution."""

    operator: DelayOperator
    grid: TimeGrid
    trips: TripTable
    paths_by_od: Mapping[str, np.ndarray]
    solution: PathFlowProfile | None = None
    lipschitz: float | None = None

    @property
    def num_paths(self) -> int:
        return sum(len(rows) for rows in self.paths_by_od.values())

    def certify_solution(self, tol: float = 1e-10) -> float:
        """Residual of the stored solution; raises if it is not a solution."""
        if self.solution is None:
            raise ValidationError("no stored solution to certify")
        ah = self.operator.evaluate(self.solution)
        r = residual_norm(self.solution, 1.0, ah, self.trips, self.paths_by_od)
        if r > tol:
            raise ValidationError(f"stored solution has residual {r} > {tol}")
        return r


def power_iteration_norm(m: np.ndarray, iters: int = 5000, tol: float = 1e-14) -> float:
    """Spectral norm of m via power iteration on m^T m."""
    m = np.asarray(m, dtype=float)
    gram = m.T @ m
    n = gram.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    v[0] += 1e-3  # break symmetry against adversarial starts
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v_next = w / nw
        lam_next = float(v_next @ gram @ v_next)
        if abs(lam_next - lam) <= tol * max(1.0, lam_next):
            lam = lam_next
            break
        v, lam = v_next, lam_next
    return float(np.sqrt(max(lam, 0.0)))


def _default_simplex_setup(n: int, total: float = 2.0):
    grid = TimeGrid(0.0, 1.0, 1)
    trips = TripTable({"w": total}, {"w": 1.0})
    paths_by_od = {"w": np.arange(n)}
    return grid, trips, paths_by_od


def affine_operator(
    m: np.ndarray,
    q: np.ndarray,
    trips: TripTable | None = None,
    paths_by_od: Mapping[str, np.ndarray] | None = None,
    grid: TimeGrid | None = None,
    solution: np.ndarray | None = None,
) -> SyntheticVI:
    """A(x) = M x + q over per-O-D simplex blocks (single block by default).

    Profiles are flattened row-major into the vector the matrix acts on.
    """
    m = np.asarray(m, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    n = q.size
    if m.shape != (n, n):
        raise ValidationError(f"matrix shape {m.shape} does not match q of size {n}")
    if grid is None or trips is None or paths_by_od is None:
        grid, trips, paths_by_od = _default_simplex_setup(n)
    cols = grid.num_intervals

    def apply(h: PathFlowProfile) -> np.ndarray:
        x = h.rates.ravel()
        return (m @ x + q).reshape(-1, cols)

    lip = power_iteration_norm(m)
    op = _CallableOperator(apply, lipschitz=lip)
    sol = None
    if solution is not None:
        sol = PathFlowProfile(grid, np.asarray(solution, dtype=float).reshape(-1, cols))
    vi = SyntheticVI(operator=op, grid=grid, trips=trips, paths_by_od=paths_by_od,
                     solution=sol, lipschitz=lip)
    if sol is not None:
        vi.certify_solution()
        op.reset_count()
    return vi


def scaled_pseudo_monotone(
    base: SyntheticVI,
    theta: Callable[[PathFlowProfile], float] | None = None,
) -> SyntheticVI:
    """Positive pointwise rescaling A'(x) = theta(x) A(x).

    Preserves the solution set; turns monotone instances into genuinely
    non-monotone (but pseudo-monotone) ones.
    """
    if theta is None:
        theta = lambda h: 1.0 / (1.0 + norm(h))
    inner_op = base.operator

    def apply(h: PathFlowProfile) -> np.ndarray:
        scale = theta(h)
        if not scale > 0:
            raise ValidationError(f"scaling field must stay positive, got {scale}")
        return scale * inner_op._compute(h).delays

    op = _CallableOperator(apply, lipschitz=None)
    vi = SyntheticVI(operator=op, grid=base.grid, trips=base.trips,
                     paths_by_od=base.paths_by_od, solution=base.solution,
                     lipschitz=None)
    if vi.solution is not None:
        vi.certify_solution()
        op.reset_count()
    return vi


def monotonicity_violation_witness(
    vi: SyntheticVI, radius: float = 3.0, samples: int = 2000, seed: int = 0
) -> tuple[PathFlowProfile, PathFlowProfile, float] | None:
    """Search for x, y with <A(x) - A(y), x - y> < 0; None if not found.

    Random pairs are drawn from a ball around the feasible region.  The
    returned witness certifies that the operator is not monotone.
    """
    rng = np.random.default_rng(seed)
    op = vi.operator
    shape = (vi.num_paths, vi.grid.num_intervals)
    best = None
    best_val = 0.0
    for _ in range(samples):
        # monotonicity is a whole-space property: sample the symmetric box
        x = PathFlowProfile(vi.grid, rng.uniform(-radius, radius, size=shape))
        y = PathFlowProfile(vi.grid, rng.uniform(-radius, radius, size=shape))
        ax = op._compute(x).delays
        ay = op._compute(y).delays
        val = float(((ax - ay) * (x.rates - y.rates)).sum()) * vi.grid.dt
        if val < best_val:
            best_val = val
            best = (x, y, val)
    return best


def pseudo_monotone_audit(
    vi: SyntheticVI, pairs: int = 10_000, radius: float = 3.0, seed: int = 1
) -> float:
    """Sampling check of pseudo-monotonicity over a symmetric box.

    Over random pairs with <A(x), y - x> >= 0, returns the most negative
    observed <A(y), y - x> (zero if the property held everywhere).
    """
    rng = np.random.default_rng(seed)
    op = vi.operator
    shape = (vi.num_paths, vi.grid.num_intervals)
    worst = 0.0
    for _ in range(pairs):
        x = PathFlowProfile(vi.grid, rng.uniform(-radius, radius, size=shape))
        y = PathFlowProfile(vi.grid, rng.uniform(-radius, radius, size=shape))
        ax = op._compute(x).delays
        fwd = float((ax * (y.rates - x.rates)).sum()) * vi.grid.dt
        if fwd < 0:
            continue
        ay = op._compute(y).delays
        rev = float((ay * (y.rates - x.rates)).sum()) * vi.grid.dt
        worst = min(worst, rev)
    return worst
