"""Dense complex linear-algebra helpers: DFT, Kronecker, vec, block-circulant."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import CapacityError, InvalidDimensionError, ShapeError, SingularMatrixError

# hard cap on materialized entries (complex128 -> 2 GiB)
MAX_DENSE_ENTRIES = 2**27

# reciprocal condition number below which a Gram matrix counts as singular
SINGULAR_RCOND = 1e3 * np.finfo(float).eps


def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix ``F[j, k] = exp(-2j*pi*j*k/n) / sqrt(n)``."""
    if n < 1:
        raise InvalidDimensionError(f"DFT size must be >= 1, got {n}")
    idx = np.arange(n)
    # reduce jk mod n before scaling so large products keep full phase accuracy
    phase = np.outer(idx, idx) % n
    return np.exp(-2j * np.pi * phase / n) / np.sqrt(n)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows * cols > MAX_DENSE_ENTRIES:
        raise CapacityError(f"kron result {rows}x{cols} exceeds {MAX_DENSE_ENTRIES} entries")
    return np.kron(a, b)


def vec(m: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(m).reshape(-1, order="F")


def block_circulant(taps: Sequence[np.ndarray], n_f: int) -> np.ndarray:
    """Block-circulant matrix whose block (j, k) is ``taps[(j - k) % n_f]``.

    Taps beyond ``len(taps)`` are zero, so the first block column is
    ``[C_0; C_1; ...; C_{L-1}; 0; ...]``.
    """
    taps = [np.asarray(t, dtype=complex) for t in taps]
    if not taps:
        raise ShapeError("at least one tap is required")
    shape = taps[0].shape
    if len(shape) != 2 or any(t.shape != shape for t in taps):
        raise ShapeError("all taps must be matrices of identical shape")
    if len(taps) > n_f:
        raise ShapeError(f"{len(taps)} taps do not fit in {n_f} blocks")
    n_r, n_t = shape
    if (n_f * n_r) * (n_f * n_t) > MAX_DENSE_ENTRIES:
        raise CapacityError("block-circulant matrix too large")
    padded = np.zeros((n_f, n_r, n_t), dtype=complex)
    padded[: len(taps)] = taps
    idx = (np.arange(n_f)[:, None] - np.arange(n_f)[None, :]) % n_f
    blocks = padded[idx]  # (j, k, r, t)
    return blocks.transpose(0, 2, 1, 3).reshape(n_f * n_r, n_f * n_t)


def block_diag(blocks: np.ndarray) -> np.ndarray:
    """Stack ``(n, r, c)`` blocks on the diagonal of an ``(n*r, n*c)`` matrix."""
    blocks = np.asarray(blocks)
    return scipy.linalg.block_diag(*blocks)


def regularized_hermitian_solve(gram: np.ndarray, rhs: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Solve ``(gram + ridge*I) x = rhs`` for Hermitian PSD ``gram``.

    Uses a Cholesky factorization. Raises :class:`SingularMatrixError` when the
    regularized matrix is not numerically positive definite.
    """
    gram = np.asarray(gram)
    rhs = np.asarray(rhs)
    n = gram.shape[0]
    if gram.ndim != 2 or gram.shape[1] != n:
        raise ShapeError(f"gram must be square, got {gram.shape}")
    if rhs.shape[0] != n:
        raise ShapeError(f"rhs length {rhs.shape[0]} does not match gram size {n}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    mat = gram + ridge * np.eye(n, dtype=gram.dtype) if ridge else gram
    try:
        factor = scipy.linalg.cho_factor(mat, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if rcond_from_cholesky(factor[0], mat) < SINGULAR_RCOND:
        raise SingularMatrixError("matrix is numerically singular")
    return scipy.linalg.cho_solve(factor, rhs)


def rcond_from_cholesky(chol: np.ndarray, mat: np.ndarray) -> float:
    """LAPACK 1-norm reciprocal condition estimate from a lower Cholesky factor."""
    anorm = np.linalg.norm(mat, 1)
    if anorm == 0.0:
        return 0.0
    if np.iscomplexobj(chol):
        pocon = scipy.linalg.lapack.zpocon
    else:
        pocon = scipy.linalg.lapack.dpocon
    rcond, info = pocon(chol, anorm, uplo="L")
    if info != 0:
        return 0.0
    return float(rcond)
