"""Dense SPD factorization, solves, and symmetric accumulation.

Everything here is a pure function over float64 arrays. The Gram-type
accumulators keep exact symmetry by computing the lower triangle and
mirroring it, so ``out[i, j] == out[j, i]`` holds bit-for-bit.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite

SYMMETRY_RTOL = 1e-9


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor ``L`` with ``L @ L.T`` equal to the source matrix."""

    factor: np.ndarray

    @property
    def dimension(self) -> int:
        return self.factor.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.factor @ self.factor.T


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    return a


def spd_factorize(m) -> SpdFactor:
    """Cholesky-factorize a symmetric positive definite matrix.

    Raises:
        DimensionMismatch: ``m`` is not square.
        NotPositiveDefinite: ``m`` is not symmetric (relative 1e-9), has
            non-finite entries, or a pivot is not strictly positive (pivots
            below roundoff of the largest diagonal entry count as zero).
    """
    m = _as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if m.size and np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        lower = scipy.linalg.cholesky(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diag(lower)
    if not np.all(np.isfinite(lower)) or np.any(pivots <= 0.0):
        raise NotPositiveDefinite("non-positive pivot")
    # Pivots at roundoff level mean the matrix is singular in float64.
    floor = m.shape[0] * np.finfo(np.float64).eps * np.max(np.diag(m))
    if pivots.size and np.min(pivots) ** 2 <= floor:
        raise NotPositiveDefinite("numerically singular: pivot at roundoff level")
    lower.setflags(write=False)
    return SpdFactor(lower)


def spd_solve(f: SpdFactor, rhs) -> np.ndarray:
    """Solve ``(L L^T) X = rhs`` by forward then back substitution."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != f.dimension:
        raise DimensionMismatch(
            f"rhs has {rhs.shape[0]} rows, factor dimension is {f.dimension}"
        )
    if rhs.size == 0:
        return np.zeros_like(rhs)
    return scipy.linalg.cho_solve((f.factor, True), rhs, check_finite=False)


def _mirror_lower(a: np.ndarray) -> np.ndarray:
    lower = np.tril(a)
    return lower + np.tril(lower, -1).T


def rank_k_update(p, x) -> np.ndarray:
    """Return ``p + x^T x`` with exact symmetry."""
    p = _as_matrix(p, "p")
    x = _as_matrix(x, "x")
    if p.shape[0] != p.shape[1] or x.shape[1] != p.shape[0]:
        raise DimensionMismatch(f"cannot update {p.shape} with rows of {x.shape}")
    if x.shape[0] == 0:
        return _mirror_lower(p.copy())
    return _mirror_lower(p + x.T @ x)


def weighted_rank_k_update(p, x, w) -> np.ndarray:
    """Return ``p + sum_k w_k x_k^T x_k`` with exact symmetry."""
    x = _as_matrix(x, "x")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (x.shape[0],):
        raise DimensionMismatch("one weight per row of x is required")
    p = _as_matrix(p, "p")
    if p.shape[0] != p.shape[1] or x.shape[1] != p.shape[0]:
        raise DimensionMismatch(f"cannot update {p.shape} with rows of {x.shape}")
    return _mirror_lower(p + (x * w[:, None]).T @ x)


def cross_update(q, x, y) -> np.ndarray:
    """Return ``q + x^T y``."""
    q = _as_matrix(q, "q")
    x = _as_matrix(x, "x")
    y = _as_matrix(y, "y")
    if x.shape[1] != q.shape[0] or y.shape[1] != q.shape[1] or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(
            f"cannot update q{q.shape} with x{x.shape}, y{y.shape}"
        )
    if x.shape[0] == 0:
        return q.copy()
    return q + x.T @ y
