import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from oracles import enumerate_vertices
from oracular import accpm, linalg
from oracular.accpm import (AccpmConfig, AccpmEngine, Cut, HessianFactor, LocalizationSet,
                            TerminationReason, aggregate, analytic_center, kelley_bound,
                            manage_cuts)
from oracular.oracle import (ConstantOracle, FunctionOracle, KnapsackDualOracle, MaxAbsOracle,
                             Oracle, OracleReply, QuadraticOracle)
from oracular.problems import KnapsackInstance

R = TerminationReason


def unit_box(d):
    return -np.ones(d), np.ones(d)


# analytic center -----------------------------------------------------------------

def test_center_of_plain_box():
    loc = LocalizationSet([0, 0], [1, 1])
    c = analytic_center(loc, [0.2, 0.7])
    np.testing.assert_allclose(c.x, [0.5, 0.5], atol=1e-8)


def test_center_with_one_cut_matches_line_search():
    loc = LocalizationSet([0, 0], [1, 1], [Cut([1.0, 0.0], 0.5)])
    c = analytic_center(loc, [0.1, 0.1])
    phi = lambda t: -np.log(t) - np.log(1 - t) - np.log(0.5 - t)
    ref = minimize_scalar(phi, bounds=(1e-12, 0.5 - 1e-12), method="bounded",
                          options={"xatol": 1e-13}).x
    assert c.x[1] == pytest.approx(0.5, abs=1e-8)
    assert c.x[0] == pytest.approx(ref, abs=1e-8)


def test_center_symmetric_under_swap():
    cuts = [Cut([1.0, 2.0], 1.0), Cut([2.0, 1.0], 1.0)]
    c = analytic_center(LocalizationSet([-1, -1], [1, 1], cuts), [-0.5, -0.2])
    assert c.x[0] == pytest.approx(c.x[1], abs=1e-8)


def test_scaled_factor_handles_badly_scaled_hessian():
    rng = np.random.default_rng(0)
    D = np.diag(10.0 ** rng.uniform(-8, 8, 6))
    B = rng.standard_normal((6, 6))
    H = D @ (B.T @ B + np.eye(6)) @ D
    with pytest.raises(linalg.NotPositiveDefinite):
        linalg.cholesky(H)
    f = HessianFactor.of(H)
    b = rng.standard_normal(6)
    x = f.solve(b)
    # H = D K D with K well conditioned, so references are built through K
    K = B.T @ B + np.eye(6)
    Dinv = np.diag(1 / np.diag(D))
    np.testing.assert_allclose(D @ x, np.linalg.solve(K, Dinv @ b), rtol=1e-9)
    u = rng.standard_normal(6)
    v = D @ u
    want = np.linalg.solve(K + 2.0 * np.outer(u, u), Dinv @ b)
    np.testing.assert_allclose(D @ f.updated(v, 2.0).solve(b), want, rtol=1e-9)


def test_center_rejects_exterior_start():
    with pytest.raises(ValueError):
        analytic_center(LocalizationSet([0, 0], [1, 1]), [2.0, 0.5])


def test_newton_decrement_quadratic_tail():
    rng = np.random.default_rng(0)
    cuts = [Cut(rng.standard_normal(3), 0.3) for _ in range(6)]
    loc = LocalizationSet(-np.ones(3), np.ones(3), cuts)
    c = analytic_center(loc, loc.interior_point())
    dec = c.decrements
    assert len(dec) >= 4
    for prev, cur in zip(dec[-4:-1], dec[-3:]):
        assert cur <= 10 * prev ** 2


def test_localization_set_validation():
    with pytest.raises(ValueError):
        LocalizationSet([0, 1], [1, 1])
    with pytest.raises(ValueError):
        LocalizationSet([0], [np.inf])
    with pytest.raises(ValueError):
        Cut([0.0, 0.0], 1.0)


# cuts and bounds -----------------------------------------------------------------

def test_optimality_cut_through_query_point():
    eng = AccpmEngine(QuadraticOracle(2), ([0.0, -1.0], [2.0, 1.0]))
    np.testing.assert_allclose(eng.x, [1.0, 0.0], atol=1e-12)
    eng.step()
    cut = eng.loc.cuts[0]
    np.testing.assert_allclose(cut.normal, [2.0, 0.0], atol=1e-10)
    assert cut.rhs == pytest.approx(2.0)
    assert cut.origin == "optimality"


class SlackFeasibility(Oracle):
    dim = 2

    def query(self, y):
        a = np.array([1.0, 0.0])
        return OracleReply.feasibility(a, a @ y + 0.3)


def test_feasibility_cut_leaving_point_inside_is_incoherent():
    res = accpm.solve(SlackFeasibility(), unit_box(2))
    assert res.reason is R.INCOHERENT_ORACLE


def test_zero_subgradient_ends_run():
    res = accpm.solve(ConstantOracle(3, 5.0), unit_box(3))
    assert res.reason is R.NULL_SUBGRADIENT
    assert res.iterations == 1 and res.best_value == 5.0


def test_kelley_single_flat_piece():
    assert kelley_bound(np.zeros((1, 2)), [0.0], np.zeros((0, 2)), [], -np.ones(2), np.ones(2)) == 0.0


def test_kelley_matches_model_lp_enumeration():
    pts = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], float) * 0.5
    G = 2 * pts
    f = (pts ** 2).sum(axis=1)
    offsets = f - (G * pts).sum(axis=1)
    got = kelley_bound(G, offsets, np.zeros((0, 2)), [], -np.ones(2), np.ones(2))
    # variables (z1, z2, t): G z - t <= -offset, minimize t
    A = np.hstack([G, -np.ones((4, 1))])
    want, _ = enumerate_vertices(A, -offsets, ["<="] * 4, np.array([-1, -1, -10.0]),
                                 np.array([1, 1, 10.0]), np.array([0, 0, 1.0]))
    assert got == pytest.approx(want, abs=1e-10)
    assert got <= 0.0 + 1e-12  # true minimum of the quadratic


def test_kelley_with_feasibility_rows():
    # minimize max(z) over the box with the extra cut -z <= -0.5
    got = kelley_bound(np.array([[1.0]]), [0.0], np.array([[-1.0]]), [-0.5], [-1.0], [1.0])
    assert got == pytest.approx(0.5)


# full runs ---------------------------------------------------------------------------

@pytest.mark.parametrize("d", [2, 5, 10])
@pytest.mark.parametrize("kind", ["quadratic", "maxabs"])
def test_shifted_problems_converge(kind, d):
    c = np.random.default_rng(d).uniform(-0.5, 0.5, d)
    oracle = QuadraticOracle(d, center=c) if kind == "quadratic" else MaxAbsOracle(d, center=c)
    res = accpm.solve(oracle, unit_box(d))
    assert res.reason is R.GAP_CONVERGED
    assert res.best_value <= 1e-6 + 1e-9
    np.testing.assert_allclose(res.best_point, c, atol=2e-3)


def test_quadratic_ten_dims_within_budget():
    res = accpm.solve(QuadraticOracle(10), unit_box(10), max_iter=200)
    assert res.best_value <= 1e-6
    assert res.iterations <= 200


def test_trace_monotone_and_centers_strictly_interior():
    d = 4
    oracle = MaxAbsOracle(d, center=np.linspace(-0.4, 0.3, d))
    eng = AccpmEngine(oracle, unit_box(d))
    while eng.step() is None:
        assert eng.loc.contains(eng.x, strict=True)
    lbs = [t.lower_bound for t in eng.trace]
    fs = [t.best_value for t in eng.trace]
    assert all(b >= a for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a for a, b in zip(fs, fs[1:]))
    assert all(t.gap >= -1e-9 for t in eng.trace)
    assert all(t.condition >= 1 for t in eng.trace)


def test_knapsack_dual_example():
    o = KnapsackDualOracle(KnapsackInstance([10, 13, 7], [4, 6, 3], [1, 1, 1], 9))
    res = accpm.solve(o, o.box())
    assert res.reason is R.GAP_CONVERGED
    assert res.best_value == pytest.approx(64 / 3, abs=1e-3)
    assert res.best_value >= 20


def test_feasibility_cuts_steer_the_search():
    # minimize (x-0.8)^2 + y^2 subject to x <= 0.2
    def query(y):
        if y[0] > 0.2:
            return OracleReply.feasibility([1.0, 0.0], 0.2)
        return OracleReply.optimality((y[0] - 0.8) ** 2 + y[1] ** 2, [2 * (y[0] - 0.8), 2 * y[1]])

    class Constrained(Oracle):
        dim = 2

        def query(self, y):
            return query(self._point(y))

    res = accpm.solve(Constrained(), unit_box(2), tol=1e-7)
    assert res.reason is R.GAP_CONVERGED
    assert res.best_value == pytest.approx(0.36, abs=1e-5)


# termination criteria -------------------------------------------------------------

def test_max_iterations():
    res = accpm.solve(QuadraticOracle(3, center=[0.3, 0.1, -0.2]), unit_box(3), max_iter=3)
    assert res.reason is R.MAX_ITERATIONS and res.iterations == 3


def test_nonconvex_oracle_is_incoherent():
    # concave f = -|x|^2 produces a model whose bound overtakes observed values
    c = np.array([0.3, -0.2])
    o = FunctionOracle(2, lambda x: -float((x - c) @ (x - c)), lambda x: -2 * (x - c))
    res = accpm.solve(o, unit_box(2))
    assert res.reason is R.INCOHERENT_ORACLE


class Exploding(Oracle):
    dim = 2

    def query(self, y):
        raise RuntimeError("device lost")


def test_oracle_exception_is_critical_failure():
    res = accpm.solve(Exploding(), unit_box(2))
    assert res.reason is R.CRITICAL_FAILURE
    assert "device lost" in res.message


def test_nonfinite_reply_is_incoherent():
    o = FunctionOracle(1, lambda x: np.nan, lambda x: np.ones(1))
    assert accpm.solve(o, unit_box(1)).reason is R.INCOHERENT_ORACLE


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        AccpmEngine(QuadraticOracle(3), unit_box(2))


# cut management -----------------------------------------------------------------

def sample_membership(loc, pts):
    return np.array([loc.contains(p) for p in pts])


def test_drop_redundant_removes_duplicate_without_changing_polyhedron():
    base = [Cut([1.0, 0.5], 0.4), Cut([-0.3, 1.0], 0.6), Cut([0.2, -1.0], 0.7)]
    dup = Cut([1.0, 0.5], 0.4)
    loc = LocalizationSet(-np.ones(2), np.ones(2), base + [dup])
    pts = np.random.default_rng(0).uniform(-1, 1, (1000, 2))
    before = sample_membership(loc, pts)
    x = analytic_center(loc, loc.interior_point()).x
    assert manage_cuts(loc, "drop_redundant", x)
    assert len(loc.cuts) == 3
    np.testing.assert_array_equal(sample_membership(loc, pts), before)


def test_aggregate_of_identical_cuts_is_same_cut():
    a = Cut([1.0, -2.0], 3.0, offset=1.0)
    b = Cut([1.0, -2.0], 3.0, offset=1.0)
    m = aggregate([a, b], np.zeros(2))
    np.testing.assert_allclose(m.normal, a.normal)
    assert m.rhs == pytest.approx(3.0) and m.origin == "aggregate"


def test_keep_all_never_changes():
    loc = LocalizationSet(-np.ones(2), np.ones(2), [Cut([1.0, 0.0], 0.5)] * 2)
    assert not manage_cuts(loc, "keep_all", np.zeros(2), budget=0)
    assert len(loc.cuts) == 2


def test_weighted_raises_tight_cut_weights_with_cap():
    cuts = [Cut([1.0, 0.0], 0.1), Cut([-1.0, 0.0], 0.9), Cut([0.0, 1.0], 0.5)]
    loc = LocalizationSet(-np.ones(2), np.ones(2), cuts)
    manage_cuts(loc, "weighted", np.zeros(2))
    assert [c.weight for c in loc.cuts] == [1.5, 1.0, 1.0]
    for _ in range(20):
        manage_cuts(loc, "weighted", np.zeros(2))
    assert loc.cuts[0].weight == 100.0


def test_budget_is_a_trigger():
    cuts = [Cut([1.0, 0.0], 0.5), Cut([1.0, 0.0], 0.5), Cut([0.0, 1.0], 0.5), Cut([-1.0, -1.0], 0.5)]
    loc = LocalizationSet(-np.ones(2), np.ones(2), cuts)
    assert not manage_cuts(loc, "drop_redundant", np.zeros(2), budget=5)
    assert len(loc.cuts) == 4
    assert manage_cuts(loc, "drop_redundant", np.zeros(2), budget=3)
    assert len(loc.cuts) == 3


def test_unknown_policy():
    with pytest.raises(ValueError):
        manage_cuts(LocalizationSet([0], [1]), "shuffle", np.array([0.5]))


def test_never_drops_active_cuts_or_below_floor():
    rng = np.random.default_rng(2)
    loc = LocalizationSet(-np.ones(2), np.ones(2),
                          [Cut(rng.standard_normal(2), rng.uniform(0.1, 1)) for _ in range(5)])
    x = analytic_center(loc, loc.interior_point()).x
    active = Cut([1.0, 1.0], float(np.array([1.0, 1.0]) @ x))  # slack 0 at x
    loc.cuts.append(active)
    for _ in range(6):
        loc.record_center(x)
    manage_cuts(loc, "drop_redundant", x)
    assert any(c is active for c in loc.cuts)
    assert len(loc.cuts) >= loc.n + 1


@pytest.mark.parametrize("policy", ["drop_redundant", "aggregate", "weighted"])
@pytest.mark.parametrize("d", [2, 5])
def test_policies_agree_with_keep_all(policy, d):
    c = np.random.default_rng(40 + d).uniform(-0.5, 0.5, d)
    for oracle in (QuadraticOracle(d, center=c), MaxAbsOracle(d, center=c)):
        ref = accpm.solve(oracle, unit_box(d))
        got = accpm.solve(oracle, unit_box(d), cut_policy=policy, budget=d + 5)
        assert got.reason is R.GAP_CONVERGED
        assert abs(got.best_value - ref.best_value) <= 2e-6


@pytest.mark.parametrize("seed", range(4))
def test_randomized_cut_set_with_budget(seed):
    rng = np.random.default_rng(seed)
    d = 3
    oracle = QuadraticOracle(d, center=rng.uniform(-0.5, 0.5, d), scale=rng.uniform(0.5, 2, d))
    ref = accpm.solve(oracle, unit_box(d))
    for policy in ("drop_redundant", "aggregate"):
        got = accpm.solve(oracle, unit_box(d), cut_policy=policy, budget=10)
        assert abs(got.best_value - ref.best_value) <= 1e-6 * max(1, abs(ref.best_value))


# incremental factor ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_incremental_centers_match_fresh_centers(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 8))
    oracle = QuadraticOracle(d, center=rng.uniform(-0.5, 0.5, d), scale=rng.uniform(0.5, 2, d))
    eng = AccpmEngine(oracle, unit_box(d), AccpmConfig(incremental=True))
    while eng.step() is None:
        # the analytic center is unique, so a fresh solve from an unrelated start must agree
        fresh = analytic_center(eng.loc, eng.loc.interior_point())
        np.testing.assert_allclose(eng.x, fresh.x, rtol=0, atol=1e-8)
    assert eng.reason is R.GAP_CONVERGED


def test_incremental_and_fresh_runs_agree_on_result():
    oracle = QuadraticOracle(4, center=[0.1, -0.3, 0.2, 0.05])
    a = accpm.solve(oracle, unit_box(4), incremental=True)
    b = accpm.solve(oracle, unit_box(4), incremental=False)
    assert a.iterations == b.iterations
    for x, y in zip(a.centers[:20], b.centers[:20]):
        np.testing.assert_allclose(x, y, atol=1e-8)


def test_overrides_and_config_merge():
    cfg = AccpmConfig(tol=1e-3)
    res = accpm.solve(QuadraticOracle(2, center=[0.2, 0.1]), unit_box(2), cfg, max_iter=2)
    assert res.reason is R.MAX_ITERATIONS
