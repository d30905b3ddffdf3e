"""Dense square-matrix helpers shared by the solver, simulator and verifier.

Matrices are plain ``numpy.ndarray`` objects of shape ``(d, d)``. Every
function returns a fresh array and never writes to its inputs.
"""
import numpy as np

MAX_CONDITION = 1e12


class MatrixError(ValueError):
    """Base class for matrix-level failures."""


class DimensionError(MatrixError):
    pass


class NotPositiveDefiniteError(MatrixError):
    pass


class SingularMatrixError(MatrixError):
    def __init__(self, message, condition):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


def as_square(a, name="matrix"):
    """Coerce ``a`` to a finite float64 square matrix, raising on bad input."""
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MatrixError(f"{name} has non-finite entries")
    return arr


def _check_same_dim(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def frobenius_inner(a, b):
    """Return ``trace(a^T b)``."""
    a = as_square(a, "a")
    b = as_square(b, "b")
    _check_same_dim(a, b)
    return float(np.sum(a * b))


def is_positive_definite(a, tol=None):
    """True iff the symmetric part of ``a`` has a Cholesky factor whose
    pivots all exceed ``tol``.

    The pivots are the squared diagonal entries of the factor (the Schur
    complement diagonals). The default tolerance is ``1e-12`` times the
    largest diagonal entry, which makes the test scale invariant.
    """
    try:
        s = symmetrize(as_square(a))
    except MatrixError:
        return False
    scale = float(np.max(np.diag(s)))
    if scale <= 0.0:
        return False
    if tol is None:
        tol = 1e-12 * scale
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(chol) ** 2 > tol))


def is_positive_semidefinite(a, tol=1e-12):
    s = symmetrize(as_square(a))
    scale = max(1.0, float(np.max(np.abs(s))))
    return bool(np.min(np.linalg.eigvalsh(s)) >= -tol * scale)


def sqrt_spd(a):
    """Symmetric square root of a symmetric positive definite matrix."""
    a = as_square(a)
    if not is_positive_definite(a):
        raise NotPositiveDefiniteError("sqrt_spd requires a symmetric positive definite matrix")
    w, v = np.linalg.eigh(symmetrize(a))
    root = (v * np.sqrt(w)) @ v.T
    return symmetrize(root)


def inverse(a):
    """Inverse of a well-conditioned square matrix."""
    a = as_square(a)
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularMatrixError("matrix is singular or ill-conditioned", cond)
    return np.linalg.solve(a, np.eye(a.shape[0]))
