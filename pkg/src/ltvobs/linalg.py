"""Dense linear-algebra kernels used by the flows and rank tests.

The QR factorization here is a hand-written modified Gram-Schmidt: the
frame integrators re-orthonormalize with it every step and rely on two
conventions that library QR routines do not guarantee, a nonnegative
diagonal of R and a deterministic completion rule for (numerically)
dependent columns.  Rank decisions and pseudoinverses go through numpy's
SVD with one shared tolerance policy.
"""

import numpy as np

from .errors import NumericalError

__all__ = [
    "mgs_qr",
    "numerical_rank",
    "pinv",
    "orthogonal_projector_complement",
]

_EPS = np.finfo(float).eps


def default_rank_tol(x, sigma_max=None):
    """max(rows, cols) * eps * sigma_max, the usual SVD cutoff."""
    if sigma_max is None:
        sigma_max = np.linalg.norm(x, 2) if x.size else 0.0
    return max(x.shape) * _EPS * sigma_max


def mgs_qr(x, rank_tol=None):
    """Modified Gram-Schmidt QR of an n-by-m matrix with n >= m.

    Parameters
    ----------
    x : ndarray, shape (n, m)
        Columns to orthonormalize.
    rank_tol : float, optional
        Pivot cutoff below which a column counts as dependent.  Defaults
        to ``max(n, m) * eps * max column norm``.

    Returns
    -------
    q : ndarray, shape (n, m)
        Orthonormal columns; ``diag(r) >= 0``.
    r : ndarray, shape (m, m)
        Upper triangular.

    Notes
    -----
    A column whose pivot falls below ``rank_tol`` gets ``r[j, j] = 0`` and
    its Q column is replaced by the first canonical basis vector with a
    usable residual after orthogonalization against the accepted columns,
    so Q always carries a full orthonormal frame.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("mgs_qr expects a 2-d array")
    n, m = x.shape
    if n < m:
        raise ValueError(f"need n >= m, got shape {x.shape}")
    if rank_tol is None:
        col_norms = np.sqrt((x * x).sum(axis=0))
        rank_tol = max(n, m) * _EPS * (col_norms.max() if m else 0.0)

    q = np.empty((n, m))
    r = np.zeros((m, m))
    for j in range(m):
        v = x[:, j].copy()
        for i in range(j):
            r[i, j] = q[:, i] @ v
            v -= r[i, j] * q[:, i]
        pivot = np.linalg.norm(v)
        if pivot <= rank_tol:
            r[j, j] = 0.0
            q[:, j] = _completion_column(q[:, :j], n)
        else:
            r[j, j] = pivot
            q[:, j] = v / pivot
    return q, r


def _completion_column(accepted, n):
    """First canonical basis vector that survives orthogonalization."""
    for l in range(n):
        v = np.zeros(n)
        v[l] = 1.0
        # two passes keep the replacement orthogonal to working precision
        for _ in range(2):
            for i in range(accepted.shape[1]):
                v -= (accepted[:, i] @ v) * accepted[:, i]
        norm = np.linalg.norm(v)
        if norm > 0.5:
            return v / norm
    raise NumericalError("could not complete orthonormal frame")


def numerical_rank(x, tol=None):
    """Rank of ``x`` by counting singular values above ``tol``.

    ``tol`` defaults to ``max(rows, cols) * eps * sigma_max``; the zero
    matrix has rank 0 under this policy.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.size == 0:
        return 0
    s = np.linalg.svd(x, compute_uv=False)
    if tol is None:
        tol = max(x.shape) * _EPS * (s[0] if s.size else 0.0)
    return int(np.count_nonzero(s > tol))


def pinv(x, tol=None):
    """Moore-Penrose pseudoinverse with the shared rank tolerance."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    try:
        u, s, vt = np.linalg.svd(x, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    if tol is None:
        tol = max(x.shape) * _EPS * (s[0] if s.size else 0.0)
    inv = np.where(s > tol, np.divide(1.0, s, where=s > 0), 0.0)
    return (vt.T * inv) @ u.T


def orthogonal_projector_complement(j, tol=None):
    """Projector onto the orthogonal complement of the column span of ``j``.

    Returns ``K = I - J J^+``; for ``j == 0`` this is the identity.  The
    result is symmetrized so ``K = K^T`` holds exactly.
    """
    j = np.atleast_2d(np.asarray(j, dtype=float))
    k = np.eye(j.shape[0]) - j @ pinv(j, tol=tol)
    return 0.5 * (k + k.T)
