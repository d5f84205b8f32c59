"""Small dense linear-algebra helpers shared by the rest of the package.

All tolerances live here so there is a single place to tune them.
"""

import numpy as np
import scipy.linalg

#: Smallest admissible squared Cholesky pivot, relative to the largest diagonal entry.
PIVOT_FLOOR = 1e-12
#: Relative tolerance for eigenvalue based decisions.
EIG_TOL = 1e-10
#: Largest absolute asymmetry tolerated before a matrix is rejected as non-symmetric.
SYM_TOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD fails to factorize."""


class NotSymmetricError(ValueError):
    pass


def _as_square(m):
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def symmetrize(m, tol=SYM_TOL):
    """Average ``m`` with its transpose after checking it is symmetric within ``tol``.

    The tolerance is relative to the largest entry (absolute for tiny matrices).
    """
    m = _as_square(m)
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if m.size and np.max(np.abs(m - m.T)) > tol * scale:
        raise NotSymmetricError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def spectral_radius(m, tol=EIG_TOL):
    """Largest eigenvalue magnitude of a square matrix.

    Symmetric inputs go through ``eigvalsh``; everything else through a
    general dense eigensolve. ``tol`` decides what counts as symmetric.
    """
    m = _as_square(m)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if m.size == 0:
        return 0.0
    if not np.all(np.isfinite(m)):
        return float("inf")
    scale = float(np.max(np.abs(m)))
    if scale == 0.0:
        return 0.0
    if np.max(np.abs(m - m.T)) <= tol * scale:
        eig = scipy.linalg.eigvalsh(0.5 * (m + m.T))
    else:
        eig = scipy.linalg.eigvals(m)
    return float(np.max(np.abs(eig)))


def is_pd(m):
    m = symmetrize(m)
    try:
        cholesky(m)
    except NotPositiveDefiniteError:
        return False
    return True


def is_psd(m):
    m = symmetrize(m)
    if m.size == 0:
        return True
    norm = np.linalg.norm(m, 2)
    return bool(np.min(scipy.linalg.eigvalsh(m)) >= -EIG_TOL * norm)


def cholesky(m):
    """Lower Cholesky factor, with a relative floor on the pivots."""
    m = _as_square(m)
    try:
        lower = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc
    pivots = np.diag(lower) ** 2
    if pivots.size and pivots.min() < PIVOT_FLOOR * np.max(np.abs(np.diag(m))):
        raise NotPositiveDefiniteError("matrix is not positive definite (pivot below floor)")
    return lower


def solve_spd(m, rhs):
    """Solve ``m x = rhs`` for SPD ``m`` via Cholesky."""
    lower = cholesky(m)
    return scipy.linalg.cho_solve((lower, True), np.asarray(rhs, dtype=float))


def invert_spd(m):
    m = _as_square(m)
    inv = solve_spd(m, np.eye(m.shape[0]))
    return 0.5 * (inv + inv.T)


def full_column_rank(a):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] == 0 or a.shape[0] < a.shape[1]:
        return False
    return bool(np.linalg.matrix_rank(a) == a.shape[1])
