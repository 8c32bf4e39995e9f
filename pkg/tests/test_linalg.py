import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracular import linalg
from oracular.linalg import NoConvergence, NotPositiveDefinite


def random_spd(rng, n, shift=1.0):
    B = rng.standard_normal((n, n))
    return B.T @ B + shift * np.eye(n)


def planted(rng, n, kappa):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.logspace(0, np.log10(kappa), n)
    M = (Q * eig) @ Q.T
    return 0.5 * (M + M.T)


def rel_fro(A, B):
    return np.linalg.norm(A - B) / np.linalg.norm(B)


# normal matrix ----------------------------------------------------------------

def test_normal_matrix_identity():
    np.testing.assert_array_equal(linalg.form_normal_matrix(np.eye(3), np.ones(3)), np.eye(3))


def test_normal_matrix_scaled_slacks():
    np.testing.assert_allclose(linalg.form_normal_matrix(np.eye(3), np.full(3, 2.0)), 0.25 * np.eye(3))


def test_normal_matrix_matches_triple_loop():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((5, 3))
    s = rng.uniform(0.5, 2, 5)
    w = rng.uniform(0.5, 3, 5)
    H = np.zeros((3, 3))
    for i in range(5):
        for j in range(3):
            for k in range(3):
                H[j, k] += w[i] * A[i, j] * A[i, k] / s[i] ** 2
    np.testing.assert_allclose(linalg.form_normal_matrix(A, s, w), H, rtol=0, atol=1e-14 * np.abs(H).max())


def test_normal_matrix_bitwise_symmetric_and_psd():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((7, 4))
    H = linalg.form_normal_matrix(A, rng.uniform(0.1, 1, 7), rng.uniform(1, 2, 7))
    assert np.array_equal(H, H.T)
    X = rng.standard_normal((1000, 4))
    assert np.all(np.einsum("ij,jk,ik->i", X, H, X) >= 0)


@pytest.mark.parametrize("s, w, msg", [([1, 0, 1], None, "slack"), ([1, 1, 1], [1, -1, 1], "weight"),
                                       ([1, 1], None, "dimension")])
def test_normal_matrix_rejects_bad_input(s, w, msg):
    with pytest.raises(ValueError, match=msg):
        linalg.form_normal_matrix(np.eye(3), s, w)


def test_normal_matrix_rejects_zero_row():
    with pytest.raises(ValueError, match="zero row"):
        linalg.form_normal_matrix(np.array([[1.0, 0], [0, 0]]), [1, 1])


# factorization ----------------------------------------------------------------

def test_cholesky_identity_and_diagonal():
    np.testing.assert_array_equal(linalg.cholesky(np.eye(4)).L, np.eye(4))
    np.testing.assert_allclose(linalg.cholesky(np.diag([4.0, 9.0])).L, np.diag([2.0, 3.0]))


def test_cholesky_reconstruction():
    rng = np.random.default_rng(3)
    for n in (1, 4, 12):
        M = random_spd(rng, n)
        f = linalg.cholesky(M)
        assert np.allclose(f.L, np.tril(f.L)) and np.all(np.diag(f.L) > 0)
        assert rel_fro(f.reconstruct(), M) <= 1e-12


def test_cholesky_not_positive_definite_reports_pivot():
    M = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefinite) as err:
        linalg.cholesky(M)
    assert err.value.index == 1


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        linalg.cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))


def test_solve_examples():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(linalg.solve(linalg.cholesky(np.eye(3)), b), b)
    np.testing.assert_allclose(linalg.solve(linalg.cholesky(2 * np.eye(2)), [4.0, 6.0]), [2.0, 3.0])
    with pytest.raises(ValueError, match="dimension"):
        linalg.solve(linalg.cholesky(np.eye(3)), np.ones(2))


@pytest.mark.parametrize("kappa", [1e2, 1e5, 1e8])
def test_solve_residual_round_trip(kappa):
    rng = np.random.default_rng(int(np.log10(kappa)))
    M = planted(rng, 8, kappa)
    # a random b would put the residual floor near eps * kappa; b = M x keeps it near eps
    b = M @ rng.standard_normal(8)
    x = linalg.solve(linalg.cholesky(M), b)
    assert np.linalg.norm(M @ x - b) <= 1e-10 * np.linalg.norm(b)


# rank-one update ----------------------------------------------------------------

def test_update_unit_vector():
    f = linalg.rank_one_update(linalg.cholesky(np.eye(3)), [1.0, 0, 0], 1.0)
    np.testing.assert_allclose(f.L, np.diag([np.sqrt(2), 1, 1]))


def test_update_zero_vector_unchanged():
    f0 = linalg.cholesky(np.diag([4.0, 1.0]))
    np.testing.assert_array_equal(linalg.rank_one_update(f0, np.zeros(2), 3.0).L, f0.L)


def test_update_rejects_downdate():
    with pytest.raises(ValueError):
        linalg.rank_one_update(linalg.cholesky(np.eye(2)), np.ones(2), -1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2 ** 31 - 1), st.floats(1e-3, 1e3))
def test_update_matches_fresh_factor(n, seed, sigma):
    rng = np.random.default_rng(seed)
    M = random_spd(rng, n)
    v = rng.standard_normal(n)
    got = linalg.rank_one_update(linalg.cholesky(M), v, sigma).L
    fresh = linalg.cholesky(M + sigma * np.outer(v, v)).L
    assert rel_fro(got, fresh) <= 1e-10


def test_chained_updates_track_fresh_factor():
    rng = np.random.default_rng(9)
    M = random_spd(rng, 6)
    f = linalg.cholesky(M)
    for _ in range(50):
        v, sigma = rng.standard_normal(6), rng.uniform(0.1, 2)
        M = M + sigma * np.outer(v, v)
        f = linalg.rank_one_update(f, v, sigma)
    assert rel_fro(f.L, linalg.cholesky(M).L) <= 1e-9


# conditioning -----------------------------------------------------------------

def test_condition_estimate_examples():
    assert linalg.condition_estimate(linalg.cholesky(np.eye(5))) == pytest.approx(1.0)
    est = linalg.condition_estimate(linalg.cholesky(np.diag([1.0, 1e6])))
    assert 1e5 <= est <= 1e7


@pytest.mark.parametrize("seed", range(10))
def test_condition_estimate_within_factor_ten(seed):
    rng = np.random.default_rng(seed)
    M = planted(rng, 10, 10.0 ** rng.uniform(1, 7))
    true = np.linalg.norm(M, 1) * np.linalg.norm(np.linalg.inv(M), 1)
    est = linalg.condition_estimate(linalg.cholesky(M))
    assert true / 10 <= est <= 10 * true


# mixed precision --------------------------------------------------------------

def test_mixed_identity():
    b = np.array([1.0, 2.0, 3.0])
    r = linalg.mixed_precision_solve(np.eye(3), b)
    np.testing.assert_allclose(r.x, b)
    assert r.refinement_steps <= 1


@pytest.mark.parametrize("seed", range(5))
def test_mixed_well_conditioned(seed):
    rng = np.random.default_rng(seed)
    M = planted(rng, 12, 1e4)
    b = M @ rng.standard_normal(12)
    r = linalg.mixed_precision_solve(M, b)
    assert r.refinement_steps <= 3
    assert np.linalg.norm(b - M @ r.x) <= 1e-12 * np.linalg.norm(b)


def test_mixed_ill_conditioned_reports_no_convergence():
    M = planted(np.random.default_rng(0), 12, 1e14)
    with pytest.raises(NoConvergence):
        linalg.mixed_precision_solve(M, M @ np.ones(12))


@pytest.mark.parametrize("seed", range(5))
def test_mixed_not_worse_than_plain_beyond_tolerance(seed):
    rng = np.random.default_rng(100 + seed)
    M = planted(rng, 10, 1e3)
    b = M @ rng.standard_normal(10)
    plain = linalg.solve(linalg.cholesky(M), b)
    plain_res = np.linalg.norm(b - M @ plain) / np.linalg.norm(b)
    mixed = linalg.mixed_precision_solve(M, b)
    # refinement stops once the tolerance is met, so it can only be compared up to that level
    assert mixed.residual <= max(plain_res, 1e-12)
