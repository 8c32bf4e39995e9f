"""Analytic-center cutting-plane engine.

Each iteration queries the oracle at the analytic center of the localization
set (box plus accumulated cuts), appends the returned cut, tightens the best
value and the Kelley lower bound, optionally prunes or merges cuts, and
recenters with a damped Newton method on the weighted log-barrier.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import linalg
from .oracle import OracleReply
from .simplex import IterationLimit, solve_arrays

log = logging.getLogger(__name__)

HISTORY = 5
ACTIVE_TOL = 1e-6
MAX_WEIGHT = 100.0


class TerminationReason(str, Enum):
    GAP_CONVERGED = "GapConverged"
    MAX_ITERATIONS = "MaxIterations"
    NULL_SUBGRADIENT = "NullSubgradient"
    INCOHERENT_ORACLE = "IncoherentOracle"
    CRITICAL_FAILURE = "CriticalFailure"


class CenterNotFound(RuntimeError):
    pass


class EmptyLocalization(RuntimeError):
    pass


@dataclass(eq=False)
class Cut:
    """Half-space ``normal . z <= rhs``.

    ``offset`` is set for cuts that also serve as Kelley model pieces
    ``normal . z + offset``, i.e. optimality cuts and their aggregates.
    """

    normal: np.ndarray
    rhs: float
    origin: str = "optimality"  # optimality | feasibility | box | aggregate
    weight: float = 1.0
    birth_iteration: int = 0
    offset: float | None = None
    slack_history: deque = field(default_factory=lambda: deque(maxlen=HISTORY))

    def __post_init__(self):
        self.normal = np.asarray(self.normal, float).reshape(-1)
        if not np.any(self.normal):
            raise ValueError("cut normal must be nonzero")
        if not self.weight > 0:
            raise ValueError("cut weight must be positive")

    def slack(self, x) -> float:
        return self.rhs - float(self.normal @ x)

    def normalized_slack(self, x) -> float:
        return self.slack(x) / float(np.linalg.norm(self.normal))


class LocalizationSet:
    """Box ``[lo, hi]`` intersected with an ordered list of cuts.

    Box faces behave as permanent weight-one cuts; they are never dropped,
    aggregated or reweighted.
    """

    def __init__(self, lo, hi, cuts=None):
        self.lo = np.asarray(lo, float).reshape(-1)
        self.hi = np.asarray(hi, float).reshape(-1)
        if self.lo.shape != self.hi.shape:
            raise ValueError("box bounds differ in length")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("box must be finite")
        if np.any(self.lo >= self.hi):
            raise ValueError("box must satisfy lo < hi in every coordinate")
        self.cuts: list[Cut] = list(cuts or [])
        self.medians: deque = deque(maxlen=HISTORY)

    @property
    def n(self) -> int:
        return self.lo.size

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def system(self):
        """Rows, right-hand sides and weights for the cuts followed by the 2n box faces."""
        eye = np.eye(self.n)
        rows = [c.normal for c in self.cuts]
        A = np.vstack(rows + [eye, -eye]) if rows else np.vstack([eye, -eye])
        b = np.concatenate([[c.rhs for c in self.cuts], self.hi, -self.lo])
        w = np.concatenate([[c.weight for c in self.cuts], np.ones(2 * self.n)])
        return A, b, w

    def slacks(self, x) -> np.ndarray:
        A, b, _ = self.system()
        return b - A @ x

    def contains(self, x, strict: bool = False) -> bool:
        s = self.slacks(x)
        return bool(np.all(s > 0)) if strict else bool(np.all(s >= 0))

    def record_center(self, x):
        """Append the normalized slack at the new center to every cut's history."""
        values = [c.normalized_slack(x) for c in self.cuts]
        for c, v in zip(self.cuts, values):
            c.slack_history.append(v)
        self.medians.append(float(np.median(values)) if values else 0.0)

    def model_pieces(self):
        pieces = [c for c in self.cuts if c.offset is not None]
        if not pieces:
            return np.zeros((0, self.n)), np.zeros(0)
        return np.vstack([c.normal for c in pieces]), np.array([c.offset for c in pieces])

    def feasibility_rows(self):
        rows = [c for c in self.cuts if c.offset is None]
        if not rows:
            return np.zeros((0, self.n)), np.zeros(0)
        return np.vstack([c.normal for c in rows]), np.array([c.rhs for c in rows])

    def interior_point(self) -> np.ndarray:
        """Chebyshev center; raises EmptyLocalization if there is no interior."""
        A, b, _ = self.system()
        norms = np.linalg.norm(A, axis=1)
        n = self.n
        # maximize r s.t. A x + r |a_i| <= b, with x inside the box via its face rows
        cost = np.zeros(n + 1)
        cost[-1] = -1.0
        lo = np.concatenate([self.lo, [0.0]])
        hi = np.concatenate([self.hi, [np.inf]])
        res = solve_arrays(np.hstack([A, norms[:, None]]), b, ["<="] * len(b), lo, hi, cost)
        if res.status != "optimal" or res.x[-1] <= 1e-12:
            raise EmptyLocalization("localization set has no interior")
        return res.x[:n]


@dataclass
class HessianFactor:
    """Cholesky factor of ``D H D`` with ``D = diag(H)^(-1/2)``.

    Barrier Hessians mix entries of wildly different size once some slacks
    get small; the symmetric scaling keeps every pivot comparable to one.
    """

    chol: linalg.CholeskyFactor
    d: np.ndarray

    @classmethod
    def of(cls, H) -> "HessianFactor":
        d = 1.0 / np.sqrt(np.diag(H))
        return cls(linalg.cholesky(H * np.outer(d, d)), d)

    def solve(self, b) -> np.ndarray:
        return self.d * linalg.solve(self.chol, self.d * np.asarray(b, float))

    def updated(self, v, sigma: float) -> "HessianFactor":
        """Factor of ``H + sigma v v^T`` under the same scaling."""
        return HessianFactor(linalg.rank_one_update(self.chol, self.d * np.asarray(v, float), sigma),
                             self.d)

    def condition(self) -> float:
        return linalg.condition_estimate(self.chol)


@dataclass
class CenterResult:
    x: np.ndarray
    slacks: np.ndarray
    factor: HessianFactor
    steps: int
    decrements: list


def _barrier(s, w) -> float:
    return -float(w @ np.log(s))


def _polish(A, b, w, x, s, dx, extra: int = 2):
    # full Newton steps past the stopping test land within rounding of the exact center
    for k in range(extra):
        if k:
            g = A.T @ (w / s)
            dx = -HessianFactor.of(linalg.form_normal_matrix(A, s, w)).solve(g)
        x_new = x + dx
        s_new = b - A @ x_new
        if not np.all(s_new > 0):
            break
        x, s = x_new, s_new
    return x, s


def analytic_center(loc: LocalizationSet, x0, tol: float = 1e-8, max_steps: int = 200,
                    first_factor: HessianFactor | None = None) -> CenterResult:
    """Minimize ``-sum_i w_i log s_i(x)`` from a strictly interior ``x0``.

    ``first_factor``, when supplied, stands in for the exact Hessian at ``x0``
    on the first step only (the incremental path after a cut append). Only
    exact-Hessian decrements are recorded and used for the stopping test.
    """
    A, b, w = loc.system()
    x = np.array(x0, dtype=float)
    s = b - A @ x
    if not np.all(s > 0):
        raise ValueError("starting point is not strictly inside the localization set")
    decrements = []
    factor = first_factor
    for step in range(max_steps):
        g = A.T @ (w / s)
        exact = not (step == 0 and first_factor is not None)
        if exact:
            factor = HessianFactor.of(linalg.form_normal_matrix(A, s, w))
        dx = -factor.solve(g)
        dec = float(np.sqrt(max(-(g @ dx), 0.0)))
        if exact:
            decrements.append(dec)
            if dec <= tol:
                x, s = _polish(A, b, w, x, s, dx)
                return CenterResult(x, s, factor, step, decrements)
        # weights >= 1 keep the barrier self-concordant, so the damped step
        # decreases it; only slack positivity needs safeguarding
        t = 1.0 if dec < 0.25 else 1.0 / (1.0 + dec)
        phi = _barrier(s, w)
        while True:
            x_new = x + t * dx
            s_new = b - A @ x_new
            if np.all(s_new > 0) and (exact or _barrier(s_new, w) < phi):
                break
            t *= 0.5
            if t < 1e-14:
                if not exact:
                    x_new, s_new = x, s
                    break
                raise CenterNotFound("Newton step cannot keep slacks positive")
        x, s = x_new, s_new
    raise CenterNotFound(f"no analytic center after {max_steps} Newton steps")


def kelley_bound(G, offsets, feas_A, feas_b, lo, hi) -> float:
    """Minimum over the box (and feasibility cuts) of ``max_j G_j . z + offsets_j``.

    Solved through the LP dual, which has ``n + 1`` rows regardless of how
    many pieces are recorded:
    ``max sum mu_j offset_j - sum nu_l b_l + sum_i (lo_i rho_i - hi_i sigma_i)``
    subject to ``G^T mu + A^T nu - rho + sigma = 0``, ``sum mu = 1`` and all
    variables nonnegative. Returns ``inf`` if the primal is infeasible.
    """
    G = np.atleast_2d(np.asarray(G, float))
    offsets = np.asarray(offsets, float).reshape(-1)
    lo = np.asarray(lo, float).reshape(-1)
    hi = np.asarray(hi, float).reshape(-1)
    k, n = G.shape
    if k == 0:
        return -np.inf
    feas_A = np.asarray(feas_A, float).reshape(-1, n)
    p = feas_A.shape[0]
    eye = np.eye(n)
    top = np.hstack([G.T, feas_A.T, -eye, eye])
    bottom = np.concatenate([np.ones(k), np.zeros(p + 2 * n)])[None, :]
    Aeq = np.vstack([top, bottom])
    beq = np.concatenate([np.zeros(n), [1.0]])
    cost = -np.concatenate([offsets, -np.asarray(feas_b, float), lo, -hi])
    ncols = cost.size
    res = solve_arrays(Aeq, beq, ["="] * (n + 1), np.zeros(ncols), np.full(ncols, np.inf), cost)
    if res.status == "unbounded":
        return np.inf
    if res.status != "optimal":
        raise RuntimeError(f"Kelley dual LP is {res.status}")
    return -res.objective


def manage_cuts(loc: LocalizationSet, policy: str, x, budget: int | None = None) -> bool:
    """Apply a cut-management policy at the current center ``x``.

    ``budget`` is a trigger: nothing happens until the number of cuts exceeds
    it. Returns True when the cut list or weights changed, which invalidates
    any incrementally maintained factor.
    """
    if policy not in ("keep_all", "drop_redundant", "aggregate", "weighted"):
        raise ValueError(f"unknown cut policy {policy!r}")
    if policy == "keep_all" or not loc.cuts:
        return False
    if budget is not None and len(loc.cuts) <= budget:
        return False
    changed = False
    if policy == "weighted":
        slacks = np.array([c.normalized_slack(x) for c in loc.cuts])
        med = float(np.median(slacks))
        for c, s in zip(loc.cuts, slacks):
            if s < med and c.weight < MAX_WEIGHT:
                c.weight = min(MAX_WEIGHT, c.weight * 1.5)
                changed = True
    selected = select_for_removal(loc, x, aggregating=(policy == "aggregate"))
    if not selected:
        return changed
    keep = [c for i, c in enumerate(loc.cuts) if i not in selected]
    if policy == "aggregate":
        merged = aggregate([loc.cuts[i] for i in sorted(selected)], x)
        if merged is not None:
            keep.append(merged)
    loc.cuts = keep
    return True


def select_for_removal(loc: LocalizationSet, x, aggregating: bool = False) -> set:
    """Indices of cuts that can go: dominated parallel duplicates and persistently loose cuts.

    Cuts active at ``x`` are never chosen and at least ``n + 1`` cuts remain.
    """
    n = loc.n
    cuts = loc.cuts
    floor = n + 1
    slacks = np.array([c.normalized_slack(x) for c in cuts])
    protected = slacks <= ACTIVE_TOL
    chosen: list[int] = []

    def room() -> bool:
        remaining = len(cuts) - len(chosen) + (1 if aggregating and chosen else 0)
        return remaining > floor

    norms = np.array([np.linalg.norm(c.normal) for c in cuts])
    unit = np.array([c.normal for c in cuts]).reshape(len(cuts), n) / norms[:, None]
    scaled_rhs = [c.rhs / nm for c, nm in zip(cuts, norms)]
    # candidate pairs (i, j), j < i, in the order a double loop would visit them
    close = np.abs(unit[:, None, :] - unit[None, :, :]).max(axis=2) <= 1e-12
    for i, j in zip(*np.nonzero(np.tril(close, -1))):
        i, j = int(i), int(j)
        if j in chosen or i in chosen:
            continue
        loose = i if scaled_rhs[i] >= scaled_rhs[j] else j
        if not protected[loose] or abs(scaled_rhs[i] - scaled_rhs[j]) <= 1e-12:
            if room():
                chosen.append(loose)

    if len(loc.medians) == HISTORY:
        meds = np.array(loc.medians)
        for i, c in enumerate(cuts):
            if i in chosen or protected[i] or len(c.slack_history) < HISTORY:
                continue
            if np.all(np.array(c.slack_history) > 10 * meds) and room():
                chosen.append(i)

    return set(chosen)


def aggregate(cuts: list[Cut], x) -> Cut | None:
    """Convex combination of ``cuts`` weighted by inverse normalized slack at ``x``."""
    slacks = np.array([max(c.normalized_slack(x), ACTIVE_TOL) for c in cuts])
    theta = 1.0 / slacks
    theta /= theta.sum()
    normal = sum(t * c.normal for t, c in zip(theta, cuts))
    if not np.any(np.abs(normal) > 1e-14):
        return None
    rhs = float(sum(t * c.rhs for t, c in zip(theta, cuts)))
    offset = None
    if all(c.offset is not None for c in cuts):
        offset = float(sum(t * c.offset for t, c in zip(theta, cuts)))
    birth = max(c.birth_iteration for c in cuts)
    return Cut(normal, rhs, origin="aggregate", weight=1.0, birth_iteration=birth, offset=offset)


@dataclass
class AccpmConfig:
    tol: float = 1e-6
    max_iter: int | None = None  # defaults to 50 * dim
    cut_policy: str = "keep_all"
    budget: int | None = None
    incremental: bool = True
    newton_tol: float = 1e-8
    max_newton: int = 200
    coherence_tol: float = 1e-7
    restore_step: float = 0.5


@dataclass
class TraceRecord:
    iteration: int
    best_value: float
    lower_bound: float
    gap: float
    cuts: int
    newton_steps: int
    condition: float


@dataclass
class AccpmResult:
    best_point: np.ndarray
    best_value: float
    lower_bound: float
    reason: TerminationReason
    trace: list
    iterations: int
    message: str = ""
    centers: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.best_value - self.lower_bound


class AccpmEngine:
    """Single-threaded engine state; call :meth:`step` repeatedly or :meth:`run`."""

    def __init__(self, oracle, box, config: AccpmConfig | None = None):
        lo, hi = box
        self.oracle = oracle
        self.config = config or AccpmConfig()
        self.loc = LocalizationSet(lo, hi)
        n = self.loc.n
        if getattr(oracle, "dim", n) != n:
            raise ValueError(f"oracle dimension {oracle.dim} does not match box dimension {n}")
        self.max_iter = self.config.max_iter or 50 * n
        self.iteration = 0
        self.x = self.loc.midpoint()
        self.best_value = np.inf
        self.best_point = self.x.copy()
        self.lower_bound = -np.inf
        self.trace: list[TraceRecord] = []
        self.centers: list[np.ndarray] = []
        self.reason: TerminationReason | None = None
        self.message = ""
        self._center = analytic_center(self.loc, self.x, self.config.newton_tol, self.config.max_newton)
        self.x = self._center.x
        self.loc.record_center(self.x)
        self._factor_valid = True
        self._last_steps = self._center.steps
        self.decrement_log: list[list[float]] = [self._center.decrements]

    @property
    def gap(self) -> float:
        return self.best_value - self.lower_bound

    def _finish(self, reason: TerminationReason, message: str = ""):
        self.reason = reason
        self.message = message
        if message:
            log.info("accpm stopped: %s (%s)", reason.value, message)
        return reason

    def _record(self):
        cond = self._center.factor.condition()
        self.trace.append(TraceRecord(self.iteration, self.best_value, self.lower_bound, self.gap,
                                      len(self.loc.cuts), self._last_steps, cond))

    def step(self) -> TerminationReason | None:
        if self.reason is not None:
            return self.reason
        cfg = self.config
        self.iteration += 1
        x = self.x
        self.centers.append(x.copy())
        try:
            reply = self.oracle.query(x)
        except Exception as exc:  # any oracle-side failure is a critical failure
            return self._finish(TerminationReason.CRITICAL_FAILURE, f"oracle raised {exc!r}")
        if not isinstance(reply, OracleReply) or not reply.is_finite():
            return self._finish(TerminationReason.INCOHERENT_ORACLE, "nonfinite or malformed reply")

        if reply.is_optimality:
            f, g = reply.value, reply.subgradient
            if g.size != self.loc.n:
                return self._finish(TerminationReason.INCOHERENT_ORACLE, "subgradient has wrong length")
            if f < self.best_value:
                self.best_value, self.best_point = f, x.copy()
            if not np.any(g):
                # a zero subgradient certifies x as a global minimizer
                self.lower_bound = max(self.lower_bound, f)
                self._record()
                return self._finish(TerminationReason.NULL_SUBGRADIENT)
            rhs = float(g @ x)
            cut = Cut(g, rhs, "optimality", birth_iteration=self.iteration, offset=f - rhs)
        else:
            a, r = reply.normal, reply.rhs
            if a.size != self.loc.n or not np.any(a):
                return self._finish(TerminationReason.INCOHERENT_ORACLE, "degenerate feasibility cut")
            slack = r - float(a @ x)
            if slack > cfg.coherence_tol * max(1.0, float(np.linalg.norm(a))):
                return self._finish(TerminationReason.INCOHERENT_ORACLE,
                                    f"feasibility cut leaves the query point inside (slack {slack:.3e})")
            cut = Cut(a, r, "feasibility", birth_iteration=self.iteration)
        self.loc.cuts.append(cut)

        try:
            G, offsets = self.loc.model_pieces()
            if G.shape[0]:
                FA, Fb = self.loc.feasibility_rows()
                bound = kelley_bound(G, offsets, FA, Fb, self.loc.lo, self.loc.hi)
                if not np.isfinite(bound):
                    return self._finish(TerminationReason.INCOHERENT_ORACLE,
                                        "cuts leave no feasible point in the box")
                self.lower_bound = max(self.lower_bound, bound)
        except (IterationLimit, RuntimeError, np.linalg.LinAlgError) as exc:
            return self._finish(TerminationReason.CRITICAL_FAILURE, f"lower-bound LP failed: {exc}")

        scale = max(1.0, abs(self.best_value)) if np.isfinite(self.best_value) else 1.0
        if self.lower_bound > self.best_value + 1e-9 * scale:
            self._record()
            return self._finish(TerminationReason.INCOHERENT_ORACLE,
                                "lower bound exceeds best value; oracle is not convex")
        self._record()
        if np.isfinite(self.best_value) and self.gap <= cfg.tol * scale:
            return self._finish(TerminationReason.GAP_CONVERGED)
        if self.iteration >= self.max_iter:
            return self._finish(TerminationReason.MAX_ITERATIONS)

        try:
            self._recenter(cut)
        except (CenterNotFound, np.linalg.LinAlgError, ValueError) as exc:
            return self._finish(TerminationReason.CRITICAL_FAILURE, f"centering failed: {exc}")
        except EmptyLocalization as exc:
            return self._finish(TerminationReason.INCOHERENT_ORACLE, str(exc))
        return None

    def _recenter(self, new_cut: Cut):
        cfg = self.config
        center = self._center
        x = self.x
        # center factor was built with the cuts present before new_cut was appended
        changed = manage_cuts(self.loc, cfg.cut_policy, x, cfg.budget)
        if changed:
            self._factor_valid = False
        x0 = self._restore(center, new_cut)
        first = None
        if cfg.incremental and self._factor_valid and any(c is new_cut for c in self.loc.cuts):
            s0 = new_cut.slack(x0)
            first = center.factor.updated(new_cut.normal, new_cut.weight / s0 ** 2)
        self._center = analytic_center(self.loc, x0, cfg.newton_tol, cfg.max_newton, first_factor=first)
        self._factor_valid = True
        self.x = self._center.x
        self._last_steps = self._center.steps
        self.decrement_log.append(self._center.decrements)
        self.loc.record_center(self.x)

    def _restore(self, center: CenterResult, cut: Cut) -> np.ndarray:
        """Strictly interior starting point after ``cut`` passed through or beyond the center."""
        x = self.x
        u = center.factor.solve(cut.normal)
        q = float(np.sqrt(cut.normal @ u))
        depth = -cut.slack(x) / q  # in units of the Dikin radius
        if depth <= -self.config.restore_step and self.loc.contains(x, strict=True):
            return x
        if depth < 0.9:
            alpha = depth + self.config.restore_step * (1.0 - depth)
            for _ in range(60):
                x0 = x - alpha * u / q
                if self.loc.contains(x0, strict=True):
                    return x0
                alpha = depth + 0.5 * (alpha - depth)
        return self.loc.interior_point()

    def run(self) -> AccpmResult:
        while self.step() is None:
            pass
        return self.result()

    def result(self) -> AccpmResult:
        return AccpmResult(self.best_point, self.best_value, self.lower_bound, self.reason,
                           self.trace, self.iteration, self.message, self.centers)


def solve(oracle, box, config: AccpmConfig | None = None, **overrides) -> AccpmResult:
    """Minimize a convex oracle over ``box = (lo, hi)``."""
    if config is None:
        config = AccpmConfig(**overrides)
    elif overrides:
        config = AccpmConfig(**{**config.__dict__, **overrides})
    return AccpmEngine(oracle, box, config).run()
