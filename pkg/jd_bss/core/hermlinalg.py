"""Hermitian positive definite matrix kernels shared by all estimators.

Every function accepts arrays with arbitrary leading batch axes, i.e. shape
``(..., M, M)`` for matrices and ``(...)`` for scalars, and never mutates its
inputs.
"""

from typing import NamedTuple

import numpy as np
from loguru import logger

from jd_bss.core.exceptions import DomainError, SingularMatrixError

EIG_REL_FLOOR = 1e-10
JD_MAX_CONDITION = 1e12


class JointDiagonalizer(NamedTuple):
    """Result of an exact joint diagonalization of two matrices."""

    w: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


def herm(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return the Hermitian part ``(A + A^H) / 2``."""
    a = np.asarray(a)
    return 0.5 * (a + herm(a))


def _as_square(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DomainError(f"{name} must be square over its last two axes, got shape {a.shape}")
    return a


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = _as_square(a, "A")
    b = _as_square(b, "B")
    if a.shape[-1] != b.shape[-1]:
        raise DomainError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return a, b


def _scalar_or_array(value: np.ndarray):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def _eig_floor(scale: np.ndarray, rel_floor: float) -> np.ndarray:
    scale = np.where(scale > 0, scale, 1.0)
    return rel_floor * scale[..., None]


def floor_eigenvalues(
    a: np.ndarray, rel_floor: float = EIG_REL_FLOOR
) -> tuple[np.ndarray, np.ndarray]:
    """
    Clip the eigenvalues of Hermitian matrices from below.

    The floor is ``rel_floor * trace(A) / M`` per matrix.

    Args:
        a: Matrices of shape (..., M, M)
        rel_floor: Relative eigenvalue floor

    Returns:
        tuple: Floored Hermitian matrices and a boolean mask of clipped matrices
    """
    a = hermitize(_as_square(a, "A"))
    m = a.shape[-1]
    eigval, eigvec = np.linalg.eigh(a)
    scale = np.trace(a, axis1=-2, axis2=-1).real / m
    eps = _eig_floor(scale, rel_floor)
    clipped = (eigval < eps).any(axis=-1)
    if not clipped.any():
        return a, clipped
    eigval = np.maximum(eigval, eps)
    return hermitize((eigvec * eigval[..., None, :]) @ herm(eigvec)), clipped


def safe_cholesky(a: np.ndarray) -> np.ndarray:
    """Batched Cholesky factor; non-PD matrices are floored once and retried."""
    a = hermitize(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        floored, clipped = floor_eigenvalues(a)
        logger.warning(f"Floored {int(np.sum(clipped))} non-PD matrices before Cholesky")
        return np.linalg.cholesky(floored)


def logdet_hpd(a: np.ndarray) -> np.ndarray:
    """Batched ``ln det A`` of Hermitian PD matrices via Cholesky."""
    chol = safe_cholesky(a)
    diag = np.diagonal(chol, axis1=-2, axis2=-1).real
    return _scalar_or_array(2.0 * np.log(diag).sum(axis=-1))


def is_divergence(w1, w2):
    """
    Itakura-Saito divergence ``w1/w2 - ln(w1/w2) - 1``.

    Args:
        w1: Positive reals (scalar or array)
        w2: Positive reals broadcastable against ``w1``

    Returns:
        Nonnegative divergence, elementwise
    """
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if np.any(w1 <= 0) or np.any(w2 <= 0):
        raise DomainError("Itakura-Saito divergence requires strictly positive arguments")
    ratio = w1 / w2
    return _scalar_or_array(np.maximum(ratio - np.log(ratio) - 1.0, 0.0))


def logdet_divergence(a, b):
    """
    Log-determinant divergence ``tr(A B^-1) - ln det(A B^-1) - M``.

    Args:
        a: Hermitian PD matrices (..., M, M)
        b: Hermitian PD matrices (..., M, M)

    Returns:
        Nonnegative divergence per matrix pair
    """
    a, b = _check_pair(a, b)
    m = a.shape[-1]
    a = hermitize(a)
    b = hermitize(b)
    a, b = np.broadcast_arrays(a, b)
    trace = np.trace(np.linalg.solve(b, a), axis1=-2, axis2=-1).real
    value = trace - np.asarray(logdet_hpd(a)) + np.asarray(logdet_hpd(b)) - m
    return _scalar_or_array(np.maximum(value, 0.0))


def matrix_power(a, r: float) -> np.ndarray:
    """``U diag(sigma^r) U^H`` from the eigendecomposition of a Hermitian PD matrix."""
    a = hermitize(_as_square(a, "A"))
    eigval, eigvec = np.linalg.eigh(a)
    scale = np.trace(a, axis1=-2, axis2=-1).real / a.shape[-1]
    eigval = np.maximum(eigval, _eig_floor(scale, EIG_REL_FLOOR))
    return hermitize((eigvec * (eigval**r)[..., None, :]) @ herm(eigvec))


def geometric_mean(a, b) -> np.ndarray:
    """
    Matrix geometric mean ``A # B = A^1/2 (A^-1/2 B A^-1/2)^1/2 A^1/2``.

    The result is the unique PD solution ``X`` of ``X A^-1 X = B``.
    """
    a, b = _check_pair(a, b)
    a = hermitize(a)
    eigval, eigvec = np.linalg.eigh(a)
    scale = np.trace(a, axis1=-2, axis2=-1).real / a.shape[-1]
    eigval = np.maximum(eigval, _eig_floor(scale, EIG_REL_FLOOR))
    root = np.sqrt(eigval)[..., None, :]
    a_half = (eigvec * root) @ herm(eigvec)
    a_ihalf = (eigvec / root) @ herm(eigvec)
    inner = hermitize(a_ihalf @ hermitize(b) @ a_ihalf)
    return hermitize(a_half @ matrix_power(inner, 0.5) @ a_half)


def exact_jd_pair(r1, r2) -> JointDiagonalizer:
    """
    Exactly jointly diagonalize two Hermitian PD matrices.

    Solves the generalized eigenproblem through the Cholesky reduction
    ``R1 = L L^H``, ``L^-1 R2 L^-H = V diag(d) V^H`` and returns ``W = L^-H V``,
    so that ``W^H R1 W = I`` and ``W^H R2 W = diag(d)``.

    Args:
        r1: Hermitian PD matrices (..., M, M)
        r2: Hermitian PD matrices (..., M, M)

    Returns:
        JointDiagonalizer: ``w`` (..., M, M) and the diagonals ``d1``, ``d2`` (..., M)
    """
    r1, r2 = _check_pair(r1, r2)
    r1, r2 = np.broadcast_arrays(hermitize(r1), hermitize(r2))
    condition = float(np.max(np.linalg.cond(r1)))
    if not np.isfinite(condition) or condition > JD_MAX_CONDITION:
        raise SingularMatrixError("joint diagonalization reference is singular", condition)
    try:
        chol = np.linalg.cholesky(r1)
    except np.linalg.LinAlgError as e:
        raise SingularMatrixError(f"Cholesky reduction failed: {e}", condition) from e

    reduced = hermitize(np.linalg.solve(chol, herm(np.linalg.solve(chol, r2))))
    d2, eigvec = np.linalg.eigh(reduced)
    w = np.linalg.solve(herm(chol), eigvec)
    scale = np.trace(reduced, axis1=-2, axis2=-1).real / reduced.shape[-1]
    d2 = np.maximum(d2, _eig_floor(scale, EIG_REL_FLOOR))
    return JointDiagonalizer(w=w, d1=np.ones_like(d2), d2=d2)
