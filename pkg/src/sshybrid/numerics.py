"""Small dense Hermitian kernels.

Everything here works on plain numpy arrays. Matrices are ``(..., Q, Q)``
complex arrays; vectors are ``(..., Q)``.
"""

import numpy as np

PIVOT_TOL = 1e-14
DEGENERATE_TOL = 1e-12


class SingularMatrix(np.linalg.LinAlgError):
    pass


def hermitize(A):
    """Return (A + A^H)/2 with an exactly real diagonal."""
    A = np.asarray(A, dtype=complex)
    H = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    idx = np.arange(A.shape[-1])
    H[..., idx, idx] = H[..., idx, idx].real
    return H


def is_hermitian(A, rtol=1e-9):
    A = np.asarray(A)
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny) if A.size else 1.0
    return bool(np.all(np.abs(A - np.conj(np.swapaxes(A, -1, -2))) <= rtol * scale))


def _full_pivot_solve(A, b):
    """Gaussian elimination with complete pivoting on a single system."""
    A = np.array(A, dtype=complex)
    b = np.array(b, dtype=complex)
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    n = A.shape[0]
    thresh = PIVOT_TOL * np.max(np.abs(A))
    perm = np.arange(n)
    for k in range(n):
        sub = np.abs(A[k:, k:])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        i += k
        j += k
        if not np.abs(A[i, j]) > thresh:
            raise SingularMatrix(f"pivot {abs(A[i, j]):.3e} below {thresh:.3e} at step {k}")
        A[[k, i]] = A[[i, k]]
        b[[k, i]] = b[[i, k]]
        A[:, [k, j]] = A[:, [j, k]]
        perm[[k, j]] = perm[[j, k]]
        f = A[k + 1:, k] / A[k, k]
        A[k + 1:, k:] -= np.outer(f, A[k, k:])
        b[k + 1:] -= np.outer(f, b[k])
    y = np.zeros_like(b)
    for k in range(n - 1, -1, -1):
        y[k] = (b[k] - A[k, k + 1:] @ y[k + 1:]) / A[k, k]
    x = np.empty_like(y)
    x[perm] = y
    return x[:, 0] if vec else x


def _cholesky_ok(L, scale):
    d = np.abs(np.diagonal(L, axis1=-2, axis2=-1)) ** 2
    return np.all(d >= PIVOT_TOL * scale)


def hermitian_solve(A, b):
    """Solve ``A x = b`` for Hermitian ``A``.

    ``b`` may be a vector ``(Q,)`` or a block of right-hand sides ``(Q, K)``.
    Cholesky is tried first; an indefinite or badly pivoted factorization
    falls back to fully pivoted elimination, which raises
    :class:`SingularMatrix` when a pivot drops below ``1e-14 * max|A|``.
    """
    A = np.asarray(A, dtype=complex)
    b = np.asarray(b, dtype=complex)
    scale = np.max(np.abs(A))
    if not scale > 0:
        raise SingularMatrix("zero matrix")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        L = None
    if L is not None and _cholesky_ok(L, scale):
        y = np.linalg.solve(L, b)
        return np.linalg.solve(np.conj(L.T), y)
    return _full_pivot_solve(A, b)


def hermitian_solve_batch(A, B):
    """Stacked version of :func:`hermitian_solve`.

    ``A`` is ``(..., Q, Q)`` and ``B`` is ``(..., Q, K)``. Matrices whose
    batched Cholesky fails are re-solved one at a time.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    B = np.broadcast_to(B, A.shape[:-2] + B.shape[-2:])
    try:
        L = np.linalg.cholesky(A)
        scale = np.max(np.abs(A), axis=(-2, -1))
        d = np.abs(np.diagonal(L, axis1=-2, axis2=-1)) ** 2
        good = np.all(d >= PIVOT_TOL * scale[..., None], axis=-1)
    except np.linalg.LinAlgError:
        L = None
    if L is not None and np.all(good):
        y = np.linalg.solve(L, B)
        return np.linalg.solve(np.conj(np.swapaxes(L, -1, -2)), y)
    flatA = A.reshape((-1,) + A.shape[-2:])
    flatB = B.reshape((-1,) + B.shape[-2:])
    out = np.empty(flatB.shape, dtype=complex)
    for i in range(flatA.shape[0]):
        out[i] = hermitian_solve(flatA[i], flatB[i])
    return out.reshape(B.shape)


def eig_extremes(A):
    """Smallest and largest eigenvalue of a Hermitian matrix (or a stack)."""
    w = np.linalg.eigvalsh(np.asarray(A, dtype=complex))
    return w[..., 0], w[..., -1]


def normalize_phase(v):
    """Rotate ``v`` so its first nonzero entry is real and nonnegative."""
    v = np.asarray(v, dtype=complex)
    nz = np.flatnonzero(np.abs(v) > 0)
    if nz.size == 0:
        return v
    a = v[nz[0]]
    out = v * np.exp(-1j * np.angle(a))
    out[nz[0]] = abs(a)
    return out


def evd_2x2(A):
    """Closed-form eigendecomposition of a 2x2 Hermitian matrix.

    Returns ``(eigvals, U)`` with eigenvalues in descending order and the
    matching unit eigenvectors as the columns of ``U``. Equal eigenvalues
    give ``U[:, 0] = [1, 1]/sqrt(2)``.
    """
    A = np.asarray(A, dtype=complex)
    s = np.max(np.abs(A))
    if s == 0.0:
        v1 = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)
        v2 = np.array([1.0, -1.0], dtype=complex) / np.sqrt(2.0)
        return np.zeros(2), np.column_stack([v1, v2])
    A = A.real / s + 1j * (A.imag / s)
    a = A[0, 0].real
    c = A[1, 1].real
    b = 0.5 * (A[0, 1] + np.conj(A[1, 0]))
    mean = 0.5 * (a + c)
    half = 0.5 * (a - c)
    rad = np.hypot(half, abs(b))
    l1 = mean + rad
    l2 = mean - rad
    big = max(abs(l1), abs(l2))
    if rad <= DEGENERATE_TOL * big or rad == 0.0:
        v1 = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)
    else:
        if a >= c:
            v1 = np.array([l1 - c, np.conj(b)], dtype=complex)
        else:
            v1 = np.array([b, l1 - a], dtype=complex)
        v1 = v1 / np.linalg.norm(v1)
    v1 = normalize_phase(v1)
    v2 = normalize_phase(np.array([-np.conj(v1[1]), np.conj(v1[0])]))
    return s * np.array([l1, l2]), np.column_stack([v1, v2])
