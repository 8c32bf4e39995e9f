"""Dense bounded-variable primal simplex.

Each row ``a.x (sense) b`` gets a slack ``s`` with ``a.x + s = b`` and bounds
``[0, inf)`` for ``<=``, ``(-inf, 0]`` for ``>=`` and ``[0, 0]`` for ``=``.
Rows that the starting point cannot satisfy through their slack receive an
artificial variable; phase 1 drives those to zero, then the artificials are
fixed at zero for phase 2.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import MipProblem, Sense, validate

log = logging.getLogger(__name__)

PRICE_TOL = 1e-9
PIVOT_TOL = 1e-9
PHASE1_TOL = 1e-7
REFACTOR_EVERY = 64

_LOWER, _UPPER, _FREE, _BASIC = 0, 1, 2, 3


class IterationLimit(RuntimeError):
    pass


@dataclass
class LpResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray
    objective: float
    basis: tuple[int, ...]
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0


class _Tableau:
    """Revised simplex state over structural, slack and artificial columns."""

    def __init__(self, A, b, senses, lo, hi, cost):
        m, n = A.shape
        self.m, self.n = m, n
        self.b = b
        slack_lo = np.array([0.0 if s is not Sense.GE else -np.inf for s in senses])
        slack_hi = np.array([np.inf if s is Sense.LE else 0.0 for s in senses])

        x_struct = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        resid = b - A @ x_struct
        in_range = (resid >= slack_lo) & (resid <= slack_hi)
        art_sign = np.where(resid >= 0, 1.0, -1.0)

        self.A = np.hstack([A, np.eye(m), np.diag(art_sign)]) if m else np.zeros((0, n))
        self.lo = np.concatenate([lo, slack_lo, np.zeros(m)])
        self.hi = np.concatenate([hi, slack_hi, np.where(in_range, 0.0, np.inf)])
        self.x = np.concatenate([x_struct, np.zeros(2 * m)])
        self.cost = np.concatenate([cost, np.zeros(2 * m)])

        self.state = np.where(np.isfinite(lo), _LOWER, np.where(np.isfinite(hi), _UPPER, _FREE))
        slack_state = np.where(np.isfinite(slack_lo), _LOWER, _UPPER)
        self.state = np.concatenate([self.state, slack_state, np.full(m, _LOWER)])
        self.basis = np.empty(m, dtype=int)
        for i in range(m):
            j = n + i if in_range[i] else n + m + i
            self.basis[i] = j
            self.state[j] = _BASIC
            self.x[j] = resid[i] if in_range[i] else abs(resid[i])
        self.needs_phase1 = not bool(np.all(in_range))
        self.Binv = np.eye(m)
        if m:
            self.refactor()

        self.pivots = 0
        self.degenerate = 0
        self.bland = False
        self.limit = 50 * (n + m)
        self.bland_after = 3 * (n + m)

    def refactor(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        nonbasic = self.state != _BASIC
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs

    def run(self, cost) -> str:
        """Iterate to optimality for ``cost``; returns 'optimal' or 'unbounded'."""
        while True:
            y = cost[self.basis] @ self.Binv if self.m else np.zeros(0)
            d = cost - self.A.T @ y if self.m else cost.copy()
            movable = (self.state != _BASIC) & (self.lo < self.hi)
            improving = movable & (
                ((self.state == _LOWER) & (d < -PRICE_TOL))
                | ((self.state == _UPPER) & (d > PRICE_TOL))
                | ((self.state == _FREE) & (np.abs(d) > PRICE_TOL))
            )
            candidates = np.flatnonzero(improving)
            if candidates.size == 0:
                self.y, self.d = y, d
                return "optimal"
            if self.bland:
                j = int(candidates[0])
            else:
                j = int(candidates[np.argmax(np.abs(d[candidates]))])
            direction = 1.0 if d[j] < 0 else -1.0
            alpha = self.Binv @ self.A[:, j] if self.m else np.zeros(0)
            if not self._step(j, direction, alpha):
                self.y, self.d = y, d
                return "unbounded"

    def _step(self, j, direction, alpha) -> bool:
        delta = direction * alpha
        basics = self.basis
        xb = self.x[basics]
        ratios = np.full(self.m, np.inf)
        # Relative threshold keeps near-singular pivots out of the basis.
        tol = PIVOT_TOL * max(1.0, float(np.abs(delta).max(initial=0.0)))
        dec = delta > tol
        inc = delta < -tol
        with np.errstate(invalid="ignore"):
            ratios[dec] = (xb[dec] - self.lo[basics][dec]) / delta[dec]
            ratios[inc] = (self.hi[basics][inc] - xb[inc]) / -delta[inc]
        ratios = np.where(np.isnan(ratios), np.inf, np.maximum(ratios, 0.0))
        t_basic = float(ratios.min()) if self.m else np.inf
        t_flip = self.hi[j] - self.lo[j]
        t = min(t_basic, t_flip)
        if not np.isfinite(t):
            return False

        self.pivots += 1
        if self.pivots > self.limit:
            raise IterationLimit(f"simplex exceeded {self.limit} pivots")
        if t <= 1e-12:
            self.degenerate += 1
            if not self.bland and self.degenerate >= self.bland_after:
                log.debug("switching to Bland's rule after %d degenerate pivots", self.degenerate)
                self.bland = True

        self.x[basics] = xb - t * delta
        if t_flip <= t_basic:
            self.state[j] = _UPPER if self.state[j] == _LOWER else _LOWER
            self.x[j] = self.hi[j] if self.state[j] == _UPPER else self.lo[j]
            return True

        tied = np.flatnonzero(ratios <= t_basic + 1e-12 * max(1.0, abs(t_basic)))
        # Ties go to the largest pivot magnitude, then the lowest variable index.
        best = np.abs(alpha[tied]).max()
        tied = tied[np.abs(alpha[tied]) >= 0.5 * best]
        r = int(tied[np.argmin(basics[tied])])
        leaving = basics[r]
        self.x[j] = self.x[j] + direction * t
        if delta[r] > 0:
            self.state[leaving] = _LOWER
            self.x[leaving] = self.lo[leaving]
        else:
            self.state[leaving] = _UPPER
            self.x[leaving] = self.hi[leaving]
        self.basis[r] = j
        self.state[j] = _BASIC

        row = self.Binv[r] / alpha[r]
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        if self.pivots % REFACTOR_EVERY == 0 or abs(alpha[r]) < 1e-6:
            self.refactor()
        return True


def solve_lp(problem: MipProblem) -> LpResult:
    """Solve a continuous problem; the objective is reported in its declared sense."""
    issues = validate(problem)
    if issues:
        raise ValueError("invalid problem: " + "; ".join(issues))
    if not problem.is_continuous():
        raise ValueError("solve_lp needs a continuous problem; call relax() first")
    return _solve(problem.matrix(), problem.rhs(), problem.senses(),
                  problem.lower, problem.upper, problem.min_costs(), problem.maximize)


def solve_arrays(A, b, senses, lo, hi, cost) -> LpResult:
    """Minimize ``cost.x`` with rows given as arrays; used by internal callers."""
    senses = [Sense(s) for s in senses]
    cost = np.asarray(cost, float)
    A = np.asarray(A, float).reshape(len(senses), cost.size)
    return _solve(A, np.asarray(b, float), senses,
                  np.asarray(lo, float), np.asarray(hi, float), cost, False)


def _solve(A, b, senses, lo, hi, cost, maximize) -> LpResult:
    n = cost.size
    if np.any(lo > hi):
        return LpResult("infeasible", np.full(n, np.nan), np.nan, ())
    tab = _Tableau(A, b, senses, lo.astype(float), hi.astype(float), cost)
    sign = -1.0 if maximize else 1.0
    m = tab.m

    if tab.needs_phase1:
        phase1 = np.zeros(n + 2 * m)
        phase1[n + m:] = 1.0
        tab.run(phase1)
        tab.refactor()
        infeasibility = float(tab.x[n + m:].sum())
        if infeasibility > PHASE1_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpResult("infeasible", tab.x[:n].copy(), np.nan, tuple(int(i) for i in tab.basis),
                            iterations=tab.pivots)
        tab.hi[n + m:] = 0.0
        tab.x[n + m:] = np.where(tab.state[n + m:] == _BASIC, tab.x[n + m:], 0.0)

    status = tab.run(tab.cost)
    if m:
        tab.refactor()
    x = tab.x[:n].copy()
    if status == "unbounded":
        return LpResult("unbounded", x, -sign * np.inf, tuple(int(i) for i in tab.basis),
                        iterations=tab.pivots)
    return LpResult(
        "optimal",
        x,
        sign * float(cost @ x),
        tuple(int(i) for i in tab.basis),
        duals=tab.y,
        reduced_costs=tab.d[: n + m],
        iterations=tab.pivots,
    )
