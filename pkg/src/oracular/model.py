"""Linear and mixed-integer problem representation shared by every solver.

All engines minimize; a maximization problem keeps its declared sense and
exposes :meth:`MipProblem.min_costs`, the cost vector negated as needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

FEAS_TOL = 1e-7
INT_TOL = 1e-6


class Sense(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class VarType(str, Enum):
    CONTINUOUS = "continuous"
    INTEGER = "integer"
    BINARY = "binary"


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """One row ``coefficients . x  (sense)  rhs``."""

    coefficients: np.ndarray
    sense: Sense
    rhs: float

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _frozen(self.coefficients))
        object.__setattr__(self, "sense", Sense(self.sense))
        object.__setattr__(self, "rhs", float(self.rhs))

    def violation(self, x: np.ndarray) -> float:
        """Signed violation; positive means the row is violated."""
        lhs = float(self.coefficients @ x)
        if self.sense is Sense.LE:
            return lhs - self.rhs
        if self.sense is Sense.GE:
            return self.rhs - lhs
        return abs(lhs - self.rhs)

    def __eq__(self, other):
        if not isinstance(other, LinearConstraint):
            return NotImplemented
        return (
            self.sense is other.sense
            and self.rhs == other.rhs
            and np.array_equal(self.coefficients, other.coefficients)
        )

    def __hash__(self):
        return hash((self.sense, self.rhs, self.coefficients.tobytes()))


@dataclass(frozen=True, eq=False)
class MipProblem:
    """``min/max c.x`` subject to linear rows, bounds and integrality marks.

    Instances are immutable; the array fields are read-only views so that a
    problem can be shared between solver threads.
    """

    c: np.ndarray
    constraints: tuple[LinearConstraint, ...] = ()
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    integrality: tuple[VarType, ...] | None = None
    objective_sense: str = "minimize"
    name: str = ""

    def __post_init__(self):
        c = _frozen(self.c)
        n = c.size
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        lower = np.zeros(n) if self.lower is None else self.lower
        upper = np.full(n, np.inf) if self.upper is None else self.upper
        object.__setattr__(self, "lower", _frozen(lower))
        object.__setattr__(self, "upper", _frozen(upper))
        marks = (VarType.CONTINUOUS,) * n if self.integrality is None else self.integrality
        object.__setattr__(self, "integrality", tuple(VarType(m) for m in marks))
        if self.objective_sense not in ("minimize", "maximize"):
            raise ValueError(f"unknown objective sense {self.objective_sense!r}")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def maximize(self) -> bool:
        return self.objective_sense == "maximize"

    def min_costs(self) -> np.ndarray:
        return -self.c if self.maximize else self.c

    def matrix(self) -> np.ndarray:
        if not self.constraints:
            return np.zeros((0, self.n))
        return np.vstack([row.coefficients for row in self.constraints])

    def rhs(self) -> np.ndarray:
        return np.array([row.rhs for row in self.constraints], dtype=float)

    def senses(self) -> list[Sense]:
        return [row.sense for row in self.constraints]

    def integer_mask(self) -> np.ndarray:
        return np.array([m is not VarType.CONTINUOUS for m in self.integrality], dtype=bool)

    def is_continuous(self) -> bool:
        return not self.integer_mask().any()

    def with_bounds(self, lower, upper) -> "MipProblem":
        return replace(self, lower=np.asarray(lower, float), upper=np.asarray(upper, float))

    def with_constraints(self, extra: Sequence[LinearConstraint]) -> "MipProblem":
        if not extra:
            return self
        return replace(self, constraints=self.constraints + tuple(extra))


@dataclass
class Solution:
    x: np.ndarray
    objective: float
    status: str  # optimal | feasible | infeasible | unbounded | gap_limit


@dataclass(frozen=True)
class Evaluation:
    objective: float
    max_violation: float
    integral: bool


def validate(problem: MipProblem) -> list[str]:
    """Return one diagnostic string per violated invariant; empty when well formed."""
    issues = []
    n = problem.n
    if not np.all(np.isfinite(problem.c)):
        bad = int(np.flatnonzero(~np.isfinite(problem.c))[0])
        issues.append(f"nonfinite cost coefficient at index {bad}")
    for name, vec in (("lower", problem.lower), ("upper", problem.upper)):
        if vec.size != n:
            issues.append(f"dimension mismatch: {name} bounds have length {vec.size}, expected {n}")
    if len(problem.integrality) != n:
        issues.append(
            f"dimension mismatch: integrality has length {len(problem.integrality)}, expected {n}"
        )
    if problem.lower.size == n and problem.upper.size == n:
        for i in range(n):
            lo, hi = problem.lower[i], problem.upper[i]
            if np.isnan(lo) or np.isnan(hi):
                issues.append(f"NaN bound at index {i}")
            elif lo > hi:
                issues.append(f"bound inversion at index {i}: lower {lo} > upper {hi}")
            elif i < len(problem.integrality) and problem.integrality[i] is VarType.BINARY:
                if lo < 0 or hi > 1:
                    issues.append(f"binary variable {i} has bounds [{lo}, {hi}] outside [0, 1]")
    for k, row in enumerate(problem.constraints):
        if row.coefficients.size != n:
            issues.append(
                f"dimension mismatch: constraint {k} has {row.coefficients.size} coefficients, expected {n}"
            )
        elif not np.all(np.isfinite(row.coefficients)):
            issues.append(f"nonfinite coefficient in constraint {k}")
        if not np.isfinite(row.rhs):
            issues.append(f"nonfinite rhs in constraint {k}")
    return issues


def relax(problem: MipProblem) -> MipProblem:
    """Drop integrality; binary variables keep (or gain) the [0, 1] box."""
    lower = problem.lower.copy()
    upper = problem.upper.copy()
    for i, mark in enumerate(problem.integrality):
        if mark is VarType.BINARY:
            lower[i] = max(lower[i], 0.0)
            upper[i] = min(upper[i], 1.0)
    return replace(
        problem,
        lower=lower,
        upper=upper,
        integrality=(VarType.CONTINUOUS,) * problem.n,
    )


def evaluate(problem: MipProblem, x, int_tol: float = INT_TOL) -> Evaluation:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, expected ({problem.n},)")
    worst = 0.0
    for row in problem.constraints:
        worst = max(worst, row.violation(x))
    with np.errstate(invalid="ignore"):
        worst = max(worst, float(np.max(problem.lower - x, initial=0.0)))
        worst = max(worst, float(np.max(x - problem.upper, initial=0.0)))
    mask = problem.integer_mask()
    frac = np.abs(x[mask] - np.round(x[mask]))
    return Evaluation(
        objective=float(problem.c @ x),
        max_violation=worst,
        integral=bool(np.all(frac <= int_tol)),
    )


def is_feasible(problem: MipProblem, x, feas_tol: float = FEAS_TOL, int_tol: float = INT_TOL) -> bool:
    ev = evaluate(problem, x, int_tol)
    return ev.max_violation <= feas_tol and ev.integral
