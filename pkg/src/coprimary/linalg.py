"""
Small dense complex linear algebra.

Every routine accepts either one matrix of shape ``(rows, cols)`` or a stack
of matrices of shape ``(..., rows, cols)``; leading axes are treated as a
batch. Matrices in this package never exceed a few antennas per side, so
the factorizations are plain loops compiled with numba and run over the
whole batch in one call.
"""

import numba
import numpy as np

__all__ = [
    "LinalgError",
    "DimensionError",
    "SingularMatrixError",
    "NotPositiveDefiniteError",
    "as_matrix",
    "identity",
    "hermitian",
    "matmul",
    "solve",
    "inverse",
    "cholesky",
    "log2_det_hpd",
    "frob_norm_sq",
]

PIVOT_RTOL = 1e-12
HERMITIAN_TOL = 1e-10


class LinalgError(ArithmeticError):
    pass


class DimensionError(LinalgError, ValueError):
    pass


class SingularMatrixError(LinalgError):
    pass


class NotPositiveDefiniteError(LinalgError):
    pass


def as_matrix(a) -> np.ndarray:
    """Return `a` as a complex128 array with at least two dimensions.

    Raises ValueError for non-finite entries.
    """
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.complex128)


def hermitian(a) -> np.ndarray:
    """Conjugate transpose over the last two axes."""
    a = np.asarray(a)
    return np.conj(np.swapaxes(a, -1, -2))


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _square(a: np.ndarray) -> int:
    if a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"expected square matrices, got {a.shape}")
    return a.shape[-1]


@numba.njit(cache=True)
def _gauss_jordan(m, x, rtol):
    # in place on (batch, n, n) and (batch, n, k); returns index of the first
    # singular matrix or -1
    nb, n, _ = m.shape
    k = x.shape[2]
    for b in range(nb):
        floor = 0.0
        for i in range(n):
            for j in range(n):
                floor = max(floor, abs(m[b, i, j]))
        floor *= rtol
        for col in range(n):
            piv = col
            best = abs(m[b, col, col])
            for r in range(col + 1, n):
                v = abs(m[b, r, col])
                if v > best:
                    best = v
                    piv = r
            if best <= floor or best == 0.0:
                return b
            if piv != col:
                for j in range(n):
                    m[b, col, j], m[b, piv, j] = m[b, piv, j], m[b, col, j]
                for j in range(k):
                    x[b, col, j], x[b, piv, j] = x[b, piv, j], x[b, col, j]
            inv = 1.0 / m[b, col, col]
            for j in range(n):
                m[b, col, j] *= inv
            for j in range(k):
                x[b, col, j] *= inv
            for r in range(n):
                if r == col:
                    continue
                f = m[b, r, col]
                if f == 0:
                    continue
                for j in range(n):
                    m[b, r, j] -= f * m[b, col, j]
                for j in range(k):
                    x[b, r, j] -= f * x[b, col, j]
    return -1


def solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by Gauss-Jordan elimination with partial pivoting.

    Parameters
    ----------
    a : array, shape (..., n, n)
    b : array, shape (..., n, k)
        Leading axes must broadcast against those of `a`.

    Raises
    ------
    SingularMatrixError
        If a pivot's magnitude is at most ``1e-12`` times the largest entry
        magnitude of its matrix.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    n = _square(a)
    if b.ndim < 2 or b.shape[-2] != n:
        raise DimensionError(f"right-hand side {b.shape} does not match {a.shape}")
    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    k = b.shape[-1]
    m = np.array(np.broadcast_to(a, batch + (n, n)).reshape(-1, n, n))
    x = np.array(np.broadcast_to(b, batch + (n, k)).reshape(-1, n, k))
    if m.shape[0] and n:
        bad = _gauss_jordan(m, x, PIVOT_RTOL)
        if bad >= 0:
            raise SingularMatrixError(f"matrix {bad} of the batch is singular to working precision")
    return x.reshape(batch + (n, k))


def inverse(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    n = _square(a)
    return solve(a, np.broadcast_to(identity(n), a.shape))


def _check_hermitian(a: np.ndarray) -> None:
    scale = np.maximum(1.0, np.abs(a).max(axis=(-2, -1), initial=0.0))
    skew = np.abs(a - hermitian(a)).max(axis=(-2, -1), initial=0.0)
    if np.any(skew > HERMITIAN_TOL * scale):
        raise NotPositiveDefiniteError("matrix is not Hermitian")


@numba.njit(cache=True)
def _cholesky(m, low):
    nb, n, _ = m.shape
    for b in range(nb):
        for j in range(n):
            d = m[b, j, j].real
            for t in range(j):
                d -= low[b, j, t].real ** 2 + low[b, j, t].imag ** 2
            if not d > 0.0:
                return b
            ljj = np.sqrt(d)
            low[b, j, j] = ljj
            for i in range(j + 1, n):
                v = m[b, i, j]
                for t in range(j):
                    v -= low[b, i, t] * np.conj(low[b, j, t])
                low[b, i, j] = v / ljj
    return -1


def cholesky(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``a = L L^H`` for Hermitian positive definite `a`."""
    a = np.asarray(a, dtype=np.complex128)
    n = _square(a)
    _check_hermitian(a)
    shape = a.shape
    m = np.ascontiguousarray((0.5 * (a + hermitian(a))).reshape(-1, n, n))
    low = np.zeros_like(m)
    if m.shape[0] and n:
        bad = _cholesky(m, low)
        if bad >= 0:
            raise NotPositiveDefiniteError(f"matrix {bad} of the batch is not positive definite")
    return low.reshape(shape)


def log2_det_hpd(a):
    """Base-2 log-determinant of Hermitian positive definite matrices.

    Computed from the Cholesky diagonal, so it never forms ``det(a)``.
    Returns a float for a single matrix, an array for a stack.
    """
    low = cholesky(a)
    diag = np.diagonal(low, axis1=-2, axis2=-1).real
    out = 2.0 * np.sum(np.log2(diag), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def frob_norm_sq(a):
    """Sum of squared entry magnitudes over the last two axes.

    Entries are summed in sorted order, so the result does not depend on the
    memory layout (``frob_norm_sq(a) == frob_norm_sq(hermitian(a))`` exactly).
    """
    a = np.asarray(a)
    mag = (a.real**2 + a.imag**2).reshape(a.shape[:-2] + (-1,))
    out = np.sort(mag, axis=-1).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out
