"""Dense linear algebra kernels used by the regression and GP layers.

Only what the rest of the toolkit needs: a Cholesky factorization, triangular
solves, and a ridge-stabilized least-squares solver built on the normal
equations.  Everything is plain float64 numpy; systems here are small
(library regressions and kernel matrices, tens of rows), so clarity beats
asymptotics.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, SingularSystem

__all__ = [
    "cholesky",
    "solve_lower",
    "solve_upper",
    "solve_cholesky",
    "solve_least_squares",
]

# Pivots below this multiple of the largest diagonal entry are treated as
# zero by the least-squares path.
PIVOT_RTOL = 1e-12


def _cholesky_inner(a: np.ndarray, floor: float, exc: type) -> np.ndarray:
    n = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - lower[j, :j] @ lower[j, :j]
        if d <= floor:
            raise exc(f"pivot {d:.3e} at row {j} (floor {floor:.3e})")
        lower[j, j] = np.sqrt(d)
        if j + 1 < n:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / lower[j, j]
    return lower

def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = a for symmetric positive definite a.

    Raises NotPositiveDefinite when any pivot is <= 0, DimensionMismatch for
    non-square or visibly asymmetric input.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise DimensionMismatch("matrix is not symmetric")
    return _cholesky_inner(a, 0.0, NotPositiveDefinite)


def solve_lower(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L y = b by forward substitution; b may be a vector or matrix."""
    n = lower.shape[0]
    y = np.array(b, dtype=np.float64, copy=True)
    for i in range(n):
        if i:
            y[i] -= lower[i, :i] @ y[:i]
        y[i] /= lower[i, i]
    return y


def solve_upper(upper: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve U x = b by back substitution."""
    n = upper.shape[0]
    x = np.array(b, dtype=np.float64, copy=True)
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= upper[i, i + 1 :] @ x[i + 1 :]
        x[i] /= upper[i, i]
    return x


def solve_cholesky(lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b given the factor L."""
    return solve_upper(lower.T, solve_lower(lower, b))


def solve_least_squares(a: np.ndarray, b: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Minimize ||a x - b||^2 + ridge * ||x||^2 column-wise.

    Solves the normal equations (a^T a + ridge I) x = a^T b through a
    Cholesky factorization.  b may be (m,) or (m, k); the result matches
    (n,) or (n, k).  Raises SingularSystem when a pivot falls below
    PIVOT_RTOL times the largest diagonal entry of the normal matrix, and
    DimensionMismatch when row counts disagree.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"design matrix must be 2-D, got {a.ndim}-D")
    if b.ndim not in (1, 2) or b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"rhs shape {b.shape} incompatible with design {a.shape}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
    n = a.shape[1]
    gram = a.T @ a + ridge * np.eye(n)
    floor = PIVOT_RTOL * max(np.max(np.diagonal(gram)), 0.0)
    lower = _cholesky_inner(gram, floor, SingularSystem)
    x = solve_cholesky(lower, a.T @ b)
    return x[:, 0] if vector_rhs else x
