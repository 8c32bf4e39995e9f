"""Dense SPD kernels for the centering Newton system.

Cuts are stored as rows of ``A``, so the barrier Hessian
``sum_i w_i a_i a_i^T / s_i^2`` is ``A^T diag(w / s^2) A`` here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

PIVOT_RTOL = 1e-13
SYMMETRY_TOL = 1e-12


class NotPositiveDefinite(np.linalg.LinAlgError):
    def __init__(self, index: int, pivot: float):
        super().__init__(f"pivot {index} is {pivot:.3e}, matrix is not (numerically) positive definite")
        self.index = index
        self.pivot = pivot


class NoConvergence(RuntimeError):
    def __init__(self, steps: int, residual: float, reason: str = ""):
        msg = f"iterative refinement stalled after {steps} steps (relative residual {residual:.3e})"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.steps = steps
        self.residual = residual


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """Lower-triangular ``L`` with ``L @ L.T`` equal to the factored matrix."""

    L: np.ndarray

    def __post_init__(self):
        self.L.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    @property
    def dtype(self):
        return self.L.dtype

    def reconstruct(self) -> np.ndarray:
        L = self.L.astype(np.float64)
        return L @ L.T


def form_normal_matrix(A, s, w=None) -> np.ndarray:
    """Return ``sum_i w_i a_i a_i^T / s_i^2`` for the rows ``a_i`` of ``A``.

    The result is symmetrized so that ``H[j, k] == H[k, j]`` holds bitwise.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("A must be two-dimensional")
    m = A.shape[0]
    s = np.asarray(s, dtype=float).reshape(-1)
    w = np.ones(m) if w is None else np.asarray(w, dtype=float).reshape(-1)
    if s.size != m or w.size != m:
        raise ValueError(f"dimension mismatch: {m} rows, {s.size} slacks, {w.size} weights")
    if np.any(~(s > 0)):
        raise ValueError(f"nonpositive slack at index {int(np.flatnonzero(~(s > 0))[0])}")
    if np.any(~(w > 0)):
        raise ValueError(f"nonpositive weight at index {int(np.flatnonzero(~(w > 0))[0])}")
    if m and np.any(~np.any(A != 0, axis=1)):
        raise ValueError(f"zero row at index {int(np.flatnonzero(~np.any(A != 0, axis=1))[0])}")
    B = A * (np.sqrt(w) / s)[:, None]
    H = B.T @ B
    return 0.5 * (H + H.T)


def cholesky(M, dtype=np.float64) -> CholeskyFactor:
    """Right-looking outer-product Cholesky in the requested precision.

    Raises NotPositiveDefinite when a pivot drops below ``1e-13`` times the
    largest diagonal entry.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    A = np.array(M, dtype=dtype, copy=True)
    n = A.shape[0]
    threshold = PIVOT_RTOL * float(np.max(np.diag(A), initial=0.0))
    L = np.zeros_like(A)
    for k in range(n):
        pivot = A[k, k]
        if not pivot > threshold:
            raise NotPositiveDefinite(k, float(pivot))
        d = np.sqrt(pivot)
        L[k, k] = d
        col = A[k + 1:, k] / d
        L[k + 1:, k] = col
        A[k + 1:, k + 1:] -= np.outer(col, col)
    return CholeskyFactor(L)


def solve(factor: CholeskyFactor, b) -> np.ndarray:
    b = np.asarray(b)
    if b.shape[0] != factor.dim:
        raise ValueError(f"dimension mismatch: factor is {factor.dim}, rhs has {b.shape[0]} rows")
    rhs = b.astype(factor.dtype, copy=False)
    y = solve_triangular(factor.L, rhs, lower=True, check_finite=False)
    return solve_triangular(factor.L, y, lower=True, trans="T", check_finite=False)


def rank_one_update(factor: CholeskyFactor, v, sigma: float = 1.0) -> CholeskyFactor:
    """Factor of ``M + sigma v v^T`` from the factor of ``M`` in O(dim^2)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive; downdates are not supported")
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != factor.dim:
        raise ValueError(f"dimension mismatch: factor is {factor.dim}, v has {v.size}")
    L = np.array(factor.L, dtype=np.float64, copy=True)
    x = np.sqrt(sigma) * v
    n = factor.dim
    for k in range(n):
        if x[k] == 0.0:
            continue
        lkk = L[k, k]
        r = np.hypot(lkk, x[k])
        c = r / lkk
        s = x[k] / lkk
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + s * x[k + 1:]) / c
            x[k + 1:] = c * x[k + 1:] - s * L[k + 1:, k]
    return CholeskyFactor(L)


def _inverse_one_norm(factor: CholeskyFactor, max_iter: int = 5) -> float:
    # Hager's estimator; the factored matrix is symmetric so one solve routine serves both sides.
    n = factor.dim
    x = np.full(n, 1.0 / n)
    est = 0.0
    seen = set()
    for _ in range(max_iter):
        y = solve(factor, x).astype(np.float64)
        est = float(np.abs(y).sum())
        xi = np.where(y >= 0, 1.0, -1.0)
        z = solve(factor, xi).astype(np.float64)
        j = int(np.argmax(np.abs(z)))
        if np.abs(z[j]) <= z @ x or j in seen:
            break
        seen.add(j)
        x = np.zeros(n)
        x[j] = 1.0
    # Higham's alternating-sign probe guards against Hager underestimates.
    alt = np.array([(-1) ** i * (1 + i / max(n - 1, 1)) for i in range(n)])
    alt_est = 2 * float(np.abs(solve(factor, alt)).sum()) / (3 * n)
    return max(est, alt_est)


def condition_estimate(factor: CholeskyFactor) -> float:
    """Estimate of the 1-norm condition number of the factored matrix."""
    M = factor.reconstruct()
    norm_m = float(np.abs(M).sum(axis=0).max())
    return max(1.0, norm_m * _inverse_one_norm(factor))


@dataclass(frozen=True)
class RefinedSolution:
    x: np.ndarray
    refinement_steps: int
    residual: float


def mixed_precision_solve(M, b, tol: float = 1e-12, max_steps: int = 10,
                          low=np.float32) -> RefinedSolution:
    """Factor in single precision, refine the solution in double precision.

    Raises NoConvergence when the reduced-precision factor is unusable or
    ``max_steps`` corrections do not bring ``|b - Mx| / |b|`` below ``tol``.
    """
    M = np.asarray(M, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return RefinedSolution(np.zeros_like(b), 0, 0.0)
    try:
        factor = cholesky(M, dtype=low)
    except NotPositiveDefinite as exc:
        raise NoConvergence(0, np.inf, f"reduced-precision factorization failed: {exc}") from exc

    def correction(r):
        rn = np.linalg.norm(r)
        return rn * solve(factor, r / rn).astype(np.float64)

    x = correction(b)
    steps = 0
    while True:
        r = b - M @ x
        rel = float(np.linalg.norm(r)) / bnorm
        if not np.isfinite(rel):
            raise NoConvergence(steps, rel, "nonfinite residual")
        if rel <= tol:
            return RefinedSolution(x, steps, rel)
        if steps == max_steps:
            raise NoConvergence(steps, rel)
        x = x + correction(r)
        steps += 1
