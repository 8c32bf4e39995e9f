"""Knapsack, travelling salesman and set-partitioning instances.

Each instance type has a MIP encoding (:func:`to_mip`), an exhaustive
reference solver (:func:`brute_force`) and a seeded generator
(:func:`generate`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .model import LinearConstraint, MipProblem, Sense, VarType

KNAPSACK_LIMIT = 2 ** 20
TSP_LIMIT = 9
SP_LIMIT = 22
DISCONNECTED_FACTOR = 1e6
SP_DENSITY = 0.4


class InstanceTooLarge(ValueError):
    pass


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class KnapsackInstance:
    """Bounded knapsack: at most ``m[i]`` copies of item ``i``."""

    p: np.ndarray
    w: np.ndarray
    m: np.ndarray
    cap: float

    def __post_init__(self):
        object.__setattr__(self, "p", _readonly(self.p).reshape(-1))
        object.__setattr__(self, "w", _readonly(self.w).reshape(-1))
        object.__setattr__(self, "m", _readonly(self.m, np.int64).reshape(-1))
        object.__setattr__(self, "cap", float(self.cap))
        n = self.p.size
        if self.w.size != n or self.m.size != n:
            raise ValueError(f"profits, weights and multiplicities differ in length "
                             f"({n}, {self.w.size}, {self.m.size})")
        if np.any(self.p <= 0) or np.any(self.w <= 0):
            raise ValueError("profits and weights must be positive")
        if np.any(self.m < 1):
            raise ValueError("multiplicities must be positive integers")
        if not self.cap > 0:
            raise ValueError("capacity must be positive")

    @property
    def n(self) -> int:
        return self.p.size


@dataclass(frozen=True, eq=False)
class TspInstance:
    """Directed TSP on ``n`` cities with a square nonnegative cost matrix."""

    cost: np.ndarray
    points: np.ndarray | None = None  # set for Euclidean instances

    def __post_init__(self):
        cost = _readonly(self.cost)
        object.__setattr__(self, "cost", cost)
        if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
        if cost.shape[0] < 3:
            raise ValueError("a tour needs at least 3 cities")
        if not np.all(np.isfinite(cost)) or np.any(cost < 0):
            raise ValueError("costs must be finite and nonnegative")
        if np.any(np.diag(cost) != 0):
            raise ValueError("cost matrix must have a zero diagonal")
        if self.points is not None:
            object.__setattr__(self, "points", _readonly(self.points).reshape(-1, 2))

    @property
    def n(self) -> int:
        return self.cost.shape[0]

    @classmethod
    def with_missing_arcs(cls, cost, connected) -> "TspInstance":
        """Replace arcs where ``connected`` is False by a large finite penalty."""
        cost = np.array(cost, dtype=float)
        connected = np.asarray(connected, dtype=bool)
        off = ~np.eye(cost.shape[0], dtype=bool)
        top = float(np.max(cost[off & connected], initial=1.0))
        cost[off & ~connected] = DISCONNECTED_FACTOR * max(top, 1.0)
        return cls(cost)

    def arcs(self) -> list[tuple[int, int]]:
        """Variable order of the MIP encoding: all ordered pairs ``i != j``."""
        return [(i, j) for i in range(self.n) for j in range(self.n) if i != j]

    def tour_cost(self, tour) -> float:
        tour = list(tour)
        return float(sum(self.cost[a, b] for a, b in zip(tour, tour[1:] + tour[:1])))


@dataclass(frozen=True, eq=False)
class SetPartitionInstance:
    """Flights ``0..m_flights-1`` and pairings given as flight sets with costs."""

    m_flights: int
    cost: np.ndarray
    columns: tuple[frozenset, ...]

    def __post_init__(self):
        object.__setattr__(self, "cost", _readonly(self.cost).reshape(-1))
        cols = tuple(frozenset(int(f) for f in c) for c in self.columns)
        object.__setattr__(self, "columns", cols)
        if self.cost.size != len(cols):
            raise ValueError(f"{self.cost.size} costs for {len(cols)} columns")
        if not np.all(np.isfinite(self.cost)):
            raise ValueError("costs must be finite")
        for k, c in enumerate(cols):
            if not c:
                raise ValueError(f"column {k} covers no flight")
            if min(c) < 0 or max(c) >= self.m_flights:
                raise ValueError(f"column {k} names a flight outside 0..{self.m_flights - 1}")

    @property
    def n_pairings(self) -> int:
        return len(self.columns)

    def matrix(self) -> np.ndarray:
        A = np.zeros((self.m_flights, self.n_pairings))
        for j, col in enumerate(self.columns):
            A[sorted(col), j] = 1.0
        return A

    def uncovered_flights(self) -> list[int]:
        covered = set().union(*self.columns) if self.columns else set()
        return [f for f in range(self.m_flights) if f not in covered]


def to_mip(instance) -> MipProblem:
    if isinstance(instance, KnapsackInstance):
        return MipProblem(
            c=instance.p,
            constraints=(LinearConstraint(instance.w, Sense.LE, instance.cap),),
            lower=np.zeros(instance.n),
            upper=instance.m.astype(float),
            integrality=(VarType.INTEGER,) * instance.n,
            objective_sense="maximize",
            name="knapsack",
        )
    if isinstance(instance, TspInstance):
        arcs = instance.arcs()
        n = instance.n
        rows = []
        for i in range(n):
            rows.append(LinearConstraint([1.0 if a == i else 0.0 for a, _ in arcs], Sense.EQ, 1.0))
        for j in range(n):
            rows.append(LinearConstraint([1.0 if b == j else 0.0 for _, b in arcs], Sense.EQ, 1.0))
        k = len(arcs)
        return MipProblem(
            c=[instance.cost[a, b] for a, b in arcs],
            constraints=tuple(rows),
            lower=np.zeros(k),
            upper=np.ones(k),
            integrality=(VarType.BINARY,) * k,
            name="tsp",
        )
    if isinstance(instance, SetPartitionInstance):
        A = instance.matrix()
        k = instance.n_pairings
        return MipProblem(
            c=instance.cost,
            constraints=tuple(LinearConstraint(row, Sense.EQ, 1.0) for row in A),
            lower=np.zeros(k),
            upper=np.ones(k),
            integrality=(VarType.BINARY,) * k,
            name="set-partitioning",
        )
    raise TypeError(f"no MIP encoding for {type(instance).__name__}")


@dataclass(frozen=True)
class BruteForceResult:
    """Exact optimum in the instance's natural sense; ``value`` is None when infeasible."""

    value: float | None
    witness: tuple | None


def brute_force(instance) -> BruteForceResult:
    if isinstance(instance, KnapsackInstance):
        return _brute_knapsack(instance)
    if isinstance(instance, TspInstance):
        return _brute_tsp(instance)
    if isinstance(instance, SetPartitionInstance):
        return _brute_sp(instance)
    raise TypeError(f"no enumerator for {type(instance).__name__}")


def _brute_knapsack(inst: KnapsackInstance) -> BruteForceResult:
    radix = tuple(int(m) + 1 for m in inst.m)
    total = math.prod(radix)
    if total > KNAPSACK_LIMIT:
        raise InstanceTooLarge(f"{total} assignments exceed the limit of {KNAPSACK_LIMIT}")
    # C order of unravel_index enumerates assignments lexicographically
    X = np.stack(np.unravel_index(np.arange(total), radix), axis=1).astype(float)
    profit = X @ inst.p
    profit[X @ inst.w > inst.cap] = -np.inf
    k = int(np.argmax(profit))  # first maximum is the lexicographically smallest
    return BruteForceResult(float(profit[k]), tuple(int(v) for v in X[k]))


def _brute_tsp(inst: TspInstance) -> BruteForceResult:
    n = inst.n
    if n > TSP_LIMIT:
        raise InstanceTooLarge(f"{n} cities exceed the limit of {TSP_LIMIT}")
    rest = np.array(list(permutations(range(1, n))), dtype=int)
    tours = np.hstack([np.zeros((rest.shape[0], 1), dtype=int), rest])
    costs = inst.cost[tours, np.roll(tours, -1, axis=1)].sum(axis=1)
    k = int(np.argmin(costs))
    return BruteForceResult(float(costs[k]), tuple(int(v) for v in tours[k]))


def _brute_sp(inst: SetPartitionInstance, chunk: int = 1 << 16) -> BruteForceResult:
    n = inst.n_pairings
    if n > SP_LIMIT:
        raise InstanceTooLarge(f"{n} columns exceed the limit of {SP_LIMIT}")
    A = inst.matrix()
    # integer code with column 0 as the most significant bit, so numeric order is lexicographic
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    best, best_code = np.inf, None
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        bits = ((codes[:, None] >> shifts) & 1).astype(float)
        ok = np.all(bits @ A.T == 1.0, axis=1)
        if not ok.any():
            continue
        costs = np.where(ok, bits @ inst.cost, np.inf)
        k = int(np.argmin(costs))
        if costs[k] < best:
            best, best_code = float(costs[k]), int(codes[k])
    if best_code is None:
        return BruteForceResult(None, None)
    return BruteForceResult(best, tuple(int((best_code >> int(s)) & 1) for s in shifts))


def generate(kind: str, size: int, seed: int = 0):
    """Seeded random instance; ``size`` is items, cities or columns."""
    rng = np.random.default_rng(seed)
    if kind in ("kp", "knapsack"):
        if size < 1:
            raise ValueError("knapsack needs at least one item")
        p = rng.integers(1, 101, size)
        w = rng.integers(1, 101, size)
        return KnapsackInstance(p, w, np.ones(size, dtype=int), math.ceil(0.5 * int(w.sum())))
    if kind in ("tsp", "tsp-euc"):
        pts = rng.uniform(0.0, 1000.0, size=(size, 2))
        return TspInstance(euclidean_costs(pts), points=pts)
    if kind in ("sp", "set-partitioning"):
        return _generate_sp(rng, size)
    raise ValueError(f"unknown instance kind {kind!r}")


def euclidean_costs(points) -> np.ndarray:
    """Rounded Euclidean distances, ``floor(d + 0.5)``."""
    pts = np.asarray(points, dtype=float)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    return np.floor(d + 0.5)


def _generate_sp(rng, n_cols: int) -> SetPartitionInstance:
    if n_cols < 2:
        raise ValueError("set partitioning needs at least two columns")
    m = max(2, n_cols // 2)
    # plant one partition so that every instance is feasible
    labels = rng.integers(0, max(1, round(1 / SP_DENSITY)), m)
    planted = [frozenset(np.flatnonzero(labels == g).tolist()) for g in np.unique(labels)]
    planted = planted[:n_cols]
    if len(planted) < len(np.unique(labels)):
        planted = [frozenset(range(m))]
    columns = list(planted)
    while len(columns) < n_cols:
        members = np.flatnonzero(rng.random(m) < SP_DENSITY)
        if members.size:
            columns.append(frozenset(members.tolist()))
    order = rng.permutation(n_cols)
    columns = [columns[k] for k in order]
    cost = np.array([10 * len(c) + int(rng.integers(0, 21)) for c in columns], dtype=float)
    return SetPartitionInstance(m, cost, tuple(columns))
