"""Branch-and-bound for bounded MIPs, serial or with work-stealing threads.

Nodes carry bound tightenings (fixings) and, for the TSP, the subtour cuts
found on the path from the root. A node is bounded by a relaxation, pruned
when its bound cannot beat the incumbent, accepted when the relaxation is
integral and otherwise split on one fractional variable.

All internal values use minimization; results also report the objective and
bound in the problem's declared sense.
"""

from __future__ import annotations

import heapq
import logging
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Callable

import numpy as np

from . import accpm
from .model import INT_TOL, LinearConstraint, MipProblem, Sense, is_feasible, validate
from .oracle import KnapsackDualOracle
from .problems import TspInstance, to_mip
from .simplex import solve_arrays

log = logging.getLogger(__name__)

PRUNE_TOL = 1e-9


@dataclass
class Node:
    depth: int
    fixings: list = field(default_factory=list)  # (index, lower, upper)
    parent_bound: float = -math.inf
    local_cuts: list = field(default_factory=list)  # LinearConstraint rows

    def __lt__(self, other):  # heap order for best-first search
        return (self.parent_bound, self.depth) < (other.parent_bound, other.depth)


@dataclass
class Incumbent:
    x: np.ndarray
    value: float  # minimization sense
    found_at: int


@dataclass
class BnbStats:
    nodes_explored: int = 0
    nodes_pruned: int = 0
    nodes_branched: int = 0
    leaves_solved: int = 0
    cuts_added: int = 0
    per_worker_nodes: list = field(default_factory=lambda: [0])
    peak_pool_size: int = 0
    steals: int = 0


@dataclass
class ProgressEvent:
    nodes: int
    incumbent: float
    bound: float
    elapsed: float
    per_worker_nodes: list
    workers_active: int
    cuts: int = 0


@dataclass
class BnbConfig:
    node_limit: int | None = None
    time_limit: float | None = None
    strategy: str = "depth"  # depth | best (best-first is serial only)
    bounder: str = "lp"  # lp | lagrangian
    progress: Callable[[ProgressEvent], None] | None = None
    progress_interval: int = 100
    record: bool = False


@dataclass
class NodeRecord:
    node: int
    depth: int
    fixings: tuple
    bound: float
    outcome: str  # pruned | infeasible | branched | leaf
    incumbent: float


@dataclass
class BnbResult:
    incumbent: Incumbent | None
    lower_bound: float  # minimization sense
    status: str  # optimal | infeasible | unbounded | node_limit | time_limit
    stats: BnbStats
    maximize: bool = False
    records: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def objective(self) -> float:
        if self.incumbent is None:
            return math.nan
        return -self.incumbent.value if self.maximize else self.incumbent.value

    @property
    def bound(self) -> float:
        return -self.lower_bound if self.maximize else self.lower_bound

    @property
    def gap(self) -> float:
        if self.incumbent is None:
            return math.inf
        return max(0.0, self.incumbent.value - self.lower_bound)

    @property
    def x(self):
        return None if self.incumbent is None else self.incumbent.x


class BranchingError(ValueError):
    pass


def branch(node: Node, lp_solution, integer_mask=None, bound: float | None = None,
           lower=None, upper=None) -> tuple[Node, Node]:
    """Split on the variable whose fractional part is closest to 0.5.

    Returns ``(down, up)`` children with ``x_i <= floor(v)`` and
    ``x_i >= ceil(v)``. Ties go to the lowest index.
    """
    x = np.asarray(lp_solution, dtype=float)
    mask = np.ones(x.size, bool) if integer_mask is None else np.asarray(integer_mask, bool)
    frac = x - np.floor(x)
    fractional = mask & (frac > INT_TOL) & (frac < 1 - INT_TOL)
    if not fractional.any():
        raise BranchingError("branch() needs a fractional integer variable")
    dist = np.where(fractional, np.abs(frac - 0.5), np.inf)
    i = int(np.flatnonzero(dist <= dist.min() + 1e-12)[0])
    v = x[i]
    lo_i, hi_i = _current_bounds(node, i, lower, upper)
    parent = node.parent_bound if bound is None else bound
    down = Node(node.depth + 1, node.fixings + [(i, lo_i, float(math.floor(v)))], parent,
                list(node.local_cuts))
    up = Node(node.depth + 1, node.fixings + [(i, float(math.ceil(v)), hi_i)], parent,
              list(node.local_cuts))
    return down, up


def _current_bounds(node, i, lower, upper):
    lo = -math.inf if lower is None else float(lower[i])
    hi = math.inf if upper is None else float(upper[i])
    for j, a, b in node.fixings:
        if j == i:
            lo, hi = a, b
    return lo, hi


def apply_fixings(lower, upper, fixings):
    lo = np.array(lower, dtype=float)
    hi = np.array(upper, dtype=float)
    for i, a, b in fixings:
        lo[i], hi[i] = max(lo[i], a), min(hi[i], b)
    return lo, hi


def separate_subtours(instance: TspInstance, x) -> list[LinearConstraint]:
    """Subtour cuts ``sum_{i,j in S} x_ij <= |S| - 1`` for every short cycle of ``x``.

    ``x`` is either an ``n x n`` 0/1 matrix or a vector over ``instance.arcs()``.
    """
    n = instance.n
    arcs = instance.arcs()
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != len(arcs):
            raise ValueError(f"expected {len(arcs)} arc values, got {x.size}")
        X = np.zeros((n, n))
        for (a, b), v in zip(arcs, x):
            X[a, b] = v
    else:
        X = x
    if X.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got {X.shape}")
    if np.any(np.abs(X - np.round(X)) > INT_TOL):
        raise ValueError("subtour separation needs an integral solution")
    X = np.round(X)
    if np.any(np.diag(X) != 0) or np.any(X.sum(axis=1) != 1) or np.any(X.sum(axis=0) != 1):
        raise ValueError("solution violates the degree constraints")
    succ = np.argmax(X, axis=1)
    seen = np.zeros(n, bool)
    cycles = []
    for start in range(n):
        if seen[start]:
            continue
        cyc = []
        k = start
        while not seen[k]:
            seen[k] = True
            cyc.append(k)
            k = int(succ[k])
        cycles.append(cyc)
    if len(cycles) == 1:
        return []
    cuts = []
    for cyc in cycles:
        members = set(cyc)
        coeffs = [1.0 if a in members and b in members else 0.0 for a, b in arcs]
        cuts.append(LinearConstraint(coeffs, Sense.LE, len(cyc) - 1))
    return cuts


def successor_tour(instance: TspInstance, x) -> list[int]:
    """City order starting at 0 for an arc vector encoding one Hamiltonian cycle."""
    succ = {}
    for (a, b), v in zip(instance.arcs(), np.asarray(x, float)):
        if v > 0.5:
            succ[a] = b
    tour = [0]
    while len(tour) < instance.n:
        tour.append(succ[tour[-1]])
    return tour


@dataclass
class Bound:
    status: str  # optimal | infeasible | unbounded
    value: float  # minimization sense
    x: np.ndarray | None


class LpBounder:
    """LP relaxation with the node's fixings and cuts."""

    def __init__(self, problem: MipProblem):
        self.problem = problem
        self.A = problem.matrix()
        self.b = problem.rhs()
        self.senses = problem.senses()
        self.cost = problem.min_costs()

    def __call__(self, lo, hi, cuts) -> Bound:
        A, b, senses = self.A, self.b, self.senses
        if cuts:
            A = np.vstack([A] + [c.coefficients[None, :] for c in cuts])
            b = np.concatenate([b, [c.rhs for c in cuts]])
            senses = senses + [c.sense for c in cuts]
        res = solve_arrays(A, b, senses, lo, hi, self.cost)
        if res.status == "optimal":
            return Bound("optimal", res.objective, res.x)
        return Bound(res.status, math.inf if res.status == "infeasible" else -math.inf, None)


class LagrangianKnapsackBounder:
    """Bound a one-row knapsack node by its Lagrangian dual, minimized with ACCPM.

    Any dual value is a valid upper bound on the profit, so the best value the
    engine found is used directly. Branching uses the greedy LP solution under
    the same fixings.
    """

    def __init__(self, problem: MipProblem, tol: float = 1e-9):
        if problem.m != 1 or problem.constraints[0].sense is not Sense.LE or not problem.maximize:
            raise ValueError("the Lagrangian bounder handles single-row maximization knapsacks")
        self.p = np.asarray(problem.c, float)
        self.w = np.asarray(problem.constraints[0].coefficients, float)
        if np.any(self.p <= 0) or np.any(self.w <= 0):
            raise ValueError("the Lagrangian bounder needs positive profits and weights")
        self.cap = problem.constraints[0].rhs
        self.order = np.lexsort((np.arange(self.p.size), -self.p / self.w))
        self.tol = tol
        self.engine_calls = 0

    def greedy(self, lo, hi):
        x = np.array(lo, dtype=float)
        room = self.cap - float(self.w @ x)
        if room < -1e-9:
            return None
        for i in self.order:
            take = min(hi[i] - lo[i], room / self.w[i])
            if take <= 0:
                continue
            x[i] += take
            room -= take * self.w[i]
            if room <= 1e-12:
                break
        return x

    def __call__(self, lo, hi, cuts) -> Bound:
        if cuts:
            raise ValueError("the Lagrangian bounder does not take cuts")
        x = self.greedy(lo, hi)
        if x is None:
            return Bound("infeasible", math.inf, None)
        inst = SimpleNamespace(p=self.p, w=self.w, m=hi, cap=self.cap)
        oracle = KnapsackDualOracle(inst, lower=lo, upper=hi)
        self.engine_calls += 1
        res = accpm.solve(oracle, oracle.box(), tol=self.tol)
        if not np.isfinite(res.best_value):
            raise RuntimeError(f"Lagrangian dual failed: {res.reason.value} {res.message}")
        return Bound("optimal", -res.best_value, x)


def _make_bounder(problem, config):
    if config.bounder == "lp":
        return LpBounder(problem)
    if config.bounder == "lagrangian":
        return LagrangianKnapsackBounder(problem)
    raise ValueError(f"unknown bounder {config.bounder!r}")


class _Search:
    """State shared by every worker of one branch-and-bound run."""

    def __init__(self, problem: MipProblem, config: BnbConfig, workers: int, separator=None):
        issues = validate(problem)
        if issues:
            raise ValueError("invalid problem: " + "; ".join(issues))
        if not (np.all(np.isfinite(problem.lower)) and np.all(np.isfinite(problem.upper))):
            raise ValueError("branch-and-bound needs finite bounds on every variable")
        self.problem = problem
        self.config = config
        self.workers = workers
        self.separator = separator
        self.mask = problem.integer_mask()
        self.bounders = [_make_bounder(problem, config) for _ in range(workers)]
        self.stats = BnbStats(per_worker_nodes=[0] * workers)
        self.records: list[NodeRecord] = []
        self.incumbent: Incumbent | None = None
        self.inc_lock = threading.Lock()
        self.lock = threading.Lock()  # counters, records and the termination barrier
        self.start = time.perf_counter()
        self.stop_reason: str | None = None
        self.unbounded = False
        self.pending_bounds: list[float] = []  # bounds of nodes abandoned on a limit

    # incumbent -----------------------------------------------------------
    def incumbent_value(self) -> float:
        inc = self.incumbent  # a single reference read; never blocks
        return math.inf if inc is None else inc.value

    def offer(self, x, value: float, node_count: int) -> bool:
        with self.inc_lock:
            if self.incumbent is not None and not value < self.incumbent.value:
                return False
            self.incumbent = Incumbent(np.array(x, dtype=float), float(value), node_count)
            log.debug("incumbent %.6g at node %d", value, node_count)
            return True

    # limits --------------------------------------------------------------
    def claim_node(self, worker: int) -> int | None:
        """Reserve a node number, or None once a limit has been hit."""
        cfg = self.config
        with self.lock:
            if self.stop_reason is not None:
                return None
            if cfg.node_limit is not None and self.stats.nodes_explored >= cfg.node_limit:
                self.stop_reason = "node_limit"
                return None
            if cfg.time_limit is not None and time.perf_counter() - self.start > cfg.time_limit:
                self.stop_reason = "time_limit"
                return None
            self.stats.nodes_explored += 1
            self.stats.per_worker_nodes[worker] += 1
            return self.stats.nodes_explored

    # node processing -----------------------------------------------------
    def process(self, node: Node, worker: int, number: int) -> list[Node]:
        """Bound, prune, accept or branch one node; returns its children."""
        P = self.problem
        if node.parent_bound >= self.incumbent_value() - PRUNE_TOL:
            self._prune(node, number, node.parent_bound)
            return []
        lo, hi = apply_fixings(P.lower, P.upper, node.fixings)
        if np.any(lo > hi):
            self._finish(node, number, math.inf, "infeasible")
            return []
        bounder = self.bounders[worker]
        while True:
            res = bounder(lo, hi, node.local_cuts)
            if res.status == "unbounded":
                self.unbounded = True
                self._finish(node, number, -math.inf, "unbounded")
                return []
            if res.status != "optimal":
                self._finish(node, number, math.inf, "infeasible")
                return []
            bound = max(res.value, node.parent_bound)
            if bound >= self.incumbent_value() - PRUNE_TOL:
                self._prune(node, number, bound)
                return []
            x = res.x
            frac = np.abs(x - np.round(x))
            if np.any(frac[self.mask] > INT_TOL):
                down, up = branch(node, x, self.mask, bound, P.lower, P.upper)
                self._finish(node, number, bound, "branched")
                return [down, up]
            xi = np.where(self.mask, np.round(x), x)
            if self.separator is not None:
                cuts = self.separator(xi)
                if cuts:
                    node.local_cuts = node.local_cuts + list(cuts)
                    with self.lock:
                        self.stats.cuts_added += len(cuts)
                    continue
            if is_feasible(P, xi):
                self.offer(xi, float(P.min_costs() @ xi), number)
            self._finish(node, number, bound, "leaf")
            return []

    def _prune(self, node, number, bound):
        # pruning safety: the bound cannot beat the incumbent seen at this instant
        assert bound >= self.incumbent_value() - PRUNE_TOL
        self._finish(node, number, bound, "pruned")

    def _finish(self, node, number, bound, outcome):
        with self.lock:
            st = self.stats
            if outcome in ("pruned", "infeasible", "unbounded"):
                st.nodes_pruned += 1
            elif outcome == "branched":
                st.nodes_branched += 1
            else:
                st.leaves_solved += 1
            if self.config.record:
                self.records.append(NodeRecord(number, node.depth, tuple(node.fixings), bound,
                                               outcome, self.incumbent_value()))

    def maybe_progress(self, number: int, open_bounds, active: int):
        cfg = self.config
        if cfg.progress is None or number % max(1, cfg.progress_interval):
            return
        inc = self.incumbent_value()
        bound = min(list(open_bounds) + [inc]) if open_bounds else inc
        cfg.progress(ProgressEvent(number, inc, bound, time.perf_counter() - self.start,
                                   list(self.stats.per_worker_nodes), active, self.stats.cuts_added))

    def result(self) -> BnbResult:
        inc = self.incumbent
        if self.unbounded:
            status, lb = "unbounded", -math.inf
        elif self.stop_reason is not None:
            status = self.stop_reason
            lb = min(self.pending_bounds + [self.incumbent_value()])
        elif inc is None:
            status, lb = "infeasible", math.inf
        else:
            status, lb = "optimal", inc.value
        return BnbResult(inc, lb, status, self.stats, self.problem.maximize, self.records,
                         time.perf_counter() - self.start)


def _run_serial(search: _Search) -> BnbResult:
    best_first = search.config.strategy == "best"
    if search.config.strategy not in ("depth", "best"):
        raise ValueError(f"unknown strategy {search.config.strategy!r}")
    pool: list[Node] = [Node(0)]
    while pool:
        search.stats.peak_pool_size = max(search.stats.peak_pool_size, len(pool))
        number = search.claim_node(0)
        if number is None:
            search.pending_bounds.extend(n.parent_bound for n in pool)
            break
        node = heapq.heappop(pool) if best_first else pool.pop()
        children = search.process(node, 0, number)
        if search.unbounded:
            break
        for child in children:
            if best_first:
                heapq.heappush(pool, child)
            else:
                pool.append(child)
        search.maybe_progress(number, [n.parent_bound for n in pool], 1)
    return search.result()


class _Worker:
    def __init__(self, index: int):
        self.index = index
        self.deque: deque[Node] = deque()
        self.lock = threading.Lock()
        self.current: Node | None = None


def _run_threads(search: _Search) -> BnbResult:
    k = search.workers
    workers = [_Worker(i) for i in range(k)]
    workers[0].deque.append(Node(0))
    barrier = threading.Condition(search.lock)
    state = {"idle": 0, "done": False}

    def pool_size():
        return sum(len(w.deque) for w in workers)

    def steal(me: _Worker) -> Node | None:
        for off in range(1, k):
            victim = workers[(me.index + off) % k]
            with victim.lock:
                if victim.deque:
                    node = victim.deque.popleft()  # oldest entry, closest to the root
                    with search.lock:
                        search.stats.steals += 1
                    return node
        return None

    def take(me: _Worker) -> Node | None:
        with me.lock:
            if me.deque:
                return me.deque.pop()  # newest entry: local depth-first order
        return steal(me)

    def loop(me: _Worker):
        while True:
            node = take(me)
            if node is None:
                with barrier:
                    state["idle"] += 1
                    while True:
                        if state["done"]:
                            return
                        if search.stop_reason is not None or search.unbounded:
                            state["done"] = True
                            barrier.notify_all()
                            return
                        if pool_size() > 0:
                            # leave the idle set before trying to steal
                            state["idle"] -= 1
                            break
                        if state["idle"] == k:
                            state["done"] = True
                            barrier.notify_all()
                            return
                        barrier.wait(0.01)
                continue
            number = search.claim_node(me.index)
            if number is None:
                with search.lock:
                    search.pending_bounds.append(node.parent_bound)
                with barrier:
                    state["idle"] += 1
                    state["done"] = True
                    barrier.notify_all()
                return
            me.current = node
            children = search.process(node, me.index, number)
            me.current = None
            if children:
                with me.lock:
                    me.deque.extend(children)
                with barrier:
                    search.stats.peak_pool_size = max(search.stats.peak_pool_size, pool_size())
                    barrier.notify_all()
            if search.config.progress is not None:
                search.maybe_progress(number, [n.parent_bound for w in workers for n in list(w.deque)],
                                      k - state["idle"])

    errors: list[BaseException] = []

    def guarded(me):
        try:
            loop(me)
        except BaseException as exc:  # surface worker failures to the caller
            errors.append(exc)
            with barrier:
                state["done"] = True
                barrier.notify_all()

    threads = [threading.Thread(target=guarded, args=(w,), name=f"bnb-{w.index}") for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    for w in workers:
        search.pending_bounds.extend(n.parent_bound for n in w.deque)
    return search.result()


def solve_mip(problem: MipProblem, config: BnbConfig | None = None, separator=None) -> BnbResult:
    """Single-worker branch-and-bound; deterministic for a given problem and config."""
    config = config or BnbConfig()
    return _run_serial(_Search(problem, config, 1, separator))


def run_parallel(problem: MipProblem, workers: int, config: BnbConfig | None = None,
                 separator=None) -> BnbResult:
    """Branch-and-bound on ``workers`` threads; ``workers == 1`` is exactly :func:`solve_mip`."""
    if workers < 1:
        raise ValueError("workers must be at least 1")
    config = config or BnbConfig()
    if workers == 1:
        return solve_mip(problem, config, separator)
    if config.strategy != "depth":
        raise ValueError("best-first search is available with one worker only")
    return _run_threads(_Search(problem, config, workers, separator))


@dataclass
class TspResult:
    tour: list | None
    cost: float
    status: str
    stats: BnbStats
    bound: float


def solve_tsp(instance: TspInstance, config: BnbConfig | None = None, workers: int = 1) -> TspResult:
    """Branch-and-cut on the assignment relaxation with lazy subtour cuts."""
    problem = to_mip(instance)
    res = run_parallel(problem, workers, config, separator=lambda x: separate_subtours(instance, x))
    tour = None if res.incumbent is None else successor_tour(instance, res.incumbent.x)
    return TspResult(tour, res.objective, res.status, res.stats, res.bound)
