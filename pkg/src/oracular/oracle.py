"""First-order oracles: convex test functions and Lagrangian duals.

An oracle is any object with a ``dim`` attribute and a ``query(y)`` method
returning an :class:`OracleReply`. Replies either carry a function value and
a subgradient, or a half-space ``normal . z <= rhs`` that separates the query
point from the feasible region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import MipProblem, Sense
from .simplex import solve_arrays


class OracleFailure(RuntimeError):
    """Raised by an oracle that cannot answer a query."""


@dataclass(frozen=True, eq=False)
class OracleReply:
    kind: str  # "optimality" | "feasibility"
    value: float | None = None
    subgradient: np.ndarray | None = None
    normal: np.ndarray | None = None
    rhs: float | None = None
    note: str = ""

    @classmethod
    def optimality(cls, value, subgradient, note: str = "") -> "OracleReply":
        return cls("optimality", value=float(value),
                   subgradient=np.asarray(subgradient, float).reshape(-1), note=note)

    @classmethod
    def feasibility(cls, normal, rhs, note: str = "") -> "OracleReply":
        return cls("feasibility", normal=np.asarray(normal, float).reshape(-1),
                   rhs=float(rhs), note=note)

    @property
    def is_optimality(self) -> bool:
        return self.kind == "optimality"

    def is_finite(self) -> bool:
        if self.is_optimality:
            return bool(np.isfinite(self.value) and np.all(np.isfinite(self.subgradient)))
        return bool(np.isfinite(self.rhs) and np.all(np.isfinite(self.normal)))


class Oracle:
    dim: int

    def query(self, y) -> OracleReply:
        raise NotImplementedError

    def __call__(self, y) -> OracleReply:
        return self.query(y)

    def _point(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.dim:
            raise ValueError(f"query point has {y.size} entries, oracle dimension is {self.dim}")
        if not np.all(np.isfinite(y)):
            raise ValueError("query point has nonfinite entries")
        return y


class QuadraticOracle(Oracle):
    """``f(x) = sum_i d_i (x_i - c_i)^2`` with positive ``d``."""

    def __init__(self, dim: int, center=None, scale=None):
        self.dim = dim
        self.center = np.zeros(dim) if center is None else np.asarray(center, float)
        self.scale = np.ones(dim) if scale is None else np.asarray(scale, float)

    def query(self, y):
        y = self._point(y)
        r = y - self.center
        return OracleReply.optimality(float(self.scale @ (r * r)), 2 * self.scale * r)


class MaxAbsOracle(Oracle):
    """``f(x) = max_i |x_i - c_i|``; ties resolve to the lowest index, sign(0) to +1."""

    def __init__(self, dim: int, center=None):
        self.dim = dim
        self.center = np.zeros(dim) if center is None else np.asarray(center, float)

    def query(self, y):
        r = self._point(y) - self.center
        k = int(np.argmax(np.abs(r)))
        g = np.zeros(self.dim)
        g[k] = 1.0 if r[k] >= 0 else -1.0
        return OracleReply.optimality(abs(r[k]), g)


class PiecewiseMaxOracle(Oracle):
    """``f(x) = max_k (a_k . x + b_k)``, the gradient of the first active piece."""

    def __init__(self, slopes, offsets):
        self.slopes = np.atleast_2d(np.asarray(slopes, float))
        self.offsets = np.asarray(offsets, float).reshape(-1)
        self.dim = self.slopes.shape[1]

    def query(self, y):
        y = self._point(y)
        vals = self.slopes @ y + self.offsets
        k = int(np.argmax(vals))
        return OracleReply.optimality(vals[k], self.slopes[k])


class ConstantOracle(Oracle):
    def __init__(self, dim: int, value: float):
        self.dim = dim
        self.value = float(value)

    def query(self, y):
        self._point(y)
        return OracleReply.optimality(self.value, np.zeros(self.dim))


class FunctionOracle(Oracle):
    """Wrap plain callables ``f(x) -> float`` and ``grad(x) -> array``."""

    def __init__(self, dim: int, f, grad):
        self.dim = dim
        self.f = f
        self.grad = grad

    def query(self, y):
        y = self._point(y)
        return OracleReply.optimality(self.f(y), self.grad(y))


class ConstrainedOracle(Oracle):
    """Objective oracle restricted to ``{x : constraint(x) <= 0}``.

    Where the constraint is violated the reply is the linearization cut
    ``g(y) + dg . (z - y) <= 0``, which the query point violates.
    """

    def __init__(self, objective: Oracle, constraint: Oracle):
        if objective.dim != constraint.dim:
            raise ValueError("objective and constraint dimensions differ")
        self.dim = objective.dim
        self.objective = objective
        self.constraint = constraint

    def query(self, y):
        y = self._point(y)
        c = self.constraint.query(y)
        if c.value > 0:
            return OracleReply.feasibility(c.subgradient, c.subgradient @ y - c.value,
                                           note="constraint violated")
        return self.objective.query(y)


class NegatedOracle(Oracle):
    """Turn a concave function's reply (value, supergradient) into a convex one."""

    def __init__(self, inner: Oracle):
        self.inner = inner
        self.dim = inner.dim

    def query(self, y):
        r = self.inner.query(y)
        if not r.is_optimality:
            return r
        return OracleReply.optimality(-r.value, -r.subgradient, note=r.note)

    def box(self):
        return self.inner.box()


class KnapsackDualOracle(Oracle):
    """Capacity-row Lagrangian of a bounded knapsack, a convex function of one multiplier.

    ``L(lam) = lam * cap + sum_i max over x_i in [lo_i, hi_i] of (p_i - lam w_i) x_i``.
    With the default item bounds ``[0, m_i]`` this is
    ``lam * cap + sum_i m_i max(0, p_i - lam w_i)``. Every value is an upper
    bound on the best profit.
    """

    dim = 1

    def __init__(self, instance, lower=None, upper=None):
        self.p = np.asarray(instance.p, float)
        self.w = np.asarray(instance.w, float)
        self.cap = float(instance.cap)
        self.lower = np.zeros_like(self.p) if lower is None else np.asarray(lower, float)
        self.upper = np.asarray(instance.m, float) if upper is None else np.asarray(upper, float)

    def inner_solution(self, lam: float) -> np.ndarray:
        return np.where(self.p > lam * self.w, self.upper, self.lower)

    def value(self, lam: float) -> float:
        reduced = self.p - lam * self.w
        return lam * self.cap + float(reduced @ self.inner_solution(lam))

    def query(self, y):
        lam = float(self._point(y)[0])
        if lam < 0:
            raise OracleFailure(f"knapsack multiplier must be nonnegative, got {lam}")
        x = self.inner_solution(lam)
        reduced = self.p - lam * self.w
        return OracleReply.optimality(lam * self.cap + float(reduced @ x),
                                      [self.cap - float(self.w @ x)])

    def multiplier_bound(self) -> float:
        return 2.0 * max(1.0, float(np.max(self.p / self.w)))

    def box(self):
        return np.array([0.0]), np.array([self.multiplier_bound()])


class SetPartitionDualOracle(Oracle):
    """Lagrangian of ``min c.x, Ax = 1, x binary`` with all partitioning rows relaxed.

    ``L(lam) = sum(lam) + sum_j min(0, c_j - lam . A_j)`` is concave; every value
    is a lower bound on the optimal cost. The reply carries ``L`` and the
    supergradient ``1 - A x(lam)``; wrap in :class:`NegatedOracle` to minimize.
    """

    def __init__(self, instance):
        self.cost = np.asarray(instance.cost, float)
        self.A = instance.matrix()
        self.dim = self.A.shape[0]

    def inner_solution(self, lam) -> np.ndarray:
        reduced = self.cost - lam @ self.A
        return (reduced < 0).astype(float)

    def query(self, y):
        lam = self._point(y)
        x = self.inner_solution(lam)
        reduced = self.cost - lam @ self.A
        value = float(lam.sum() + reduced @ x)
        return OracleReply.optimality(value, 1.0 - self.A @ x)

    def multiplier_bound(self) -> float:
        return 2.0 * float(np.max(np.abs(self.cost), initial=0.0))

    def box(self):
        bound = max(self.multiplier_bound(), 1.0)
        return np.full(self.dim, -bound), np.full(self.dim, bound)


@dataclass
class LagrangianDual(Oracle):
    """Dual function of a minimization MIP with the rows ``relaxed`` priced out.

    ``L(lam) = min_x c.x + sum_r lam_r (a_r . x - b_r)`` over the remaining
    rows and the variable bounds. Multipliers are nonnegative for ``<=`` rows,
    nonpositive for ``>=`` rows and free for equalities. When every row is
    relaxed the inner problem is separable and solved exactly at the bounds;
    otherwise its LP relaxation is used, which still yields a valid (weaker)
    lower bound. ``L`` is concave; the reply carries ``L`` and a supergradient.
    """

    problem: MipProblem
    relaxed: tuple[int, ...] | None = None
    dim: int = field(init=False)

    def __post_init__(self):
        m = self.problem.m
        rows = tuple(range(m)) if self.relaxed is None else tuple(self.relaxed)
        if any(not 0 <= r < m for r in rows) or len(set(rows)) != len(rows):
            raise ValueError(f"relaxed row indices {rows} invalid for {m} constraints")
        if not np.all(np.isfinite(self.problem.lower)) or not np.all(np.isfinite(self.problem.upper)):
            raise ValueError("Lagrangian duals need finite variable bounds")
        self.relaxed = rows
        self.dim = len(rows)
        self._A = self.problem.matrix()[list(rows)] if rows else np.zeros((0, self.problem.n))
        self._b = self.problem.rhs()[list(rows)] if rows else np.zeros(0)
        self._kept = [r for r in range(m) if r not in set(rows)]

    def signs(self) -> list[str]:
        """'+' for nonnegative, '-' for nonpositive, 'free' multipliers."""
        out = []
        for r in self.relaxed:
            sense = self.problem.constraints[r].sense
            out.append({Sense.LE: "+", Sense.GE: "-", Sense.EQ: "free"}[sense])
        return out

    def box(self, bound: float):
        lo, hi = [], []
        for s in self.signs():
            lo.append(0.0 if s == "+" else -bound)
            hi.append(0.0 if s == "-" else bound)
        return np.array(lo), np.array(hi)

    def inner_solution(self, lam) -> np.ndarray:
        c = self.problem.min_costs() + lam @ self._A
        lo, hi = self.problem.lower, self.problem.upper
        if not self._kept:
            return np.where(c < 0, hi, lo)
        P = self.problem
        A = P.matrix()[self._kept]
        res = solve_arrays(A, P.rhs()[self._kept], [P.constraints[r].sense for r in self._kept],
                           lo, hi, c)
        if res.status != "optimal":
            raise OracleFailure(f"inner Lagrangian problem is {res.status}")
        return res.x

    def query(self, y):
        lam = self._point(y)
        for s, v in zip(self.signs(), lam):
            if (s == "+" and v < 0) or (s == "-" and v > 0):
                raise OracleFailure(f"multiplier {v} violates its sign restriction")
        x = self.inner_solution(lam)
        viol = self._A @ x - self._b
        value = float(self.problem.min_costs() @ x + lam @ viol)
        return OracleReply.optimality(value, viol)
