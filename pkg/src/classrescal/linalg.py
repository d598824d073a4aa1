"""Dense/sparse kernels shared by the ALS updates.

Dense matrices are plain ``float64`` numpy arrays; relation slices are
scipy CSR matrices.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ShapeError, SingularityError

_EPS = np.finfo(np.float64).eps


def as_dense(x, name="matrix") -> np.ndarray:
    """Return ``x`` as a 2-D float64 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def spmm(slice_: sp.spmatrix, dense: np.ndarray) -> np.ndarray:
    """``slice_ @ dense`` with cost proportional to ``nnz * r``."""
    if slice_.shape[1] != dense.shape[0]:
        raise ShapeError(f"cannot multiply {slice_.shape} by {dense.shape}")
    return np.asarray(slice_ @ dense)


def spmm_t(slice_: sp.spmatrix, dense: np.ndarray) -> np.ndarray:
    """``slice_.T @ dense`` without materialising the transpose."""
    if slice_.shape[0] != dense.shape[0]:
        raise ShapeError(f"cannot multiply {slice_.shape[::-1]} by {dense.shape}")
    return np.asarray(slice_.T @ dense)


def solve_ridge(gram, rhs, lam: float = 0.0) -> np.ndarray:
    """Solve ``(gram + lam * I) X = rhs`` by Cholesky factorization.

    ``gram`` must be symmetric positive semi-definite. With ``lam == 0`` a
    singular ``gram`` raises :class:`SingularityError`.
    """
    gram = np.asarray(gram, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    n = gram.shape[0]
    if gram.shape != (n, n):
        raise ShapeError(f"gram must be square, got {gram.shape}")
    if rhs.shape[0] != n:
        raise ShapeError(f"rhs has {rhs.shape[0]} rows, gram is {n}x{n}")
    scale = np.abs(gram).max(initial=0.0)
    if np.abs(gram - gram.T).max(initial=0.0) > 1e-10 * max(scale, 1.0):
        raise ValueError("gram matrix is not symmetric")
    system = gram + lam * np.eye(n)
    try:
        chol = np.linalg.cholesky(system)
    except np.linalg.LinAlgError:
        pivot = float(np.linalg.eigvalsh(system).min())
        raise SingularityError(
            f"ridge system is not positive definite (smallest pivot/eigenvalue {pivot:.3e}, lambda={lam})",
            pivot=pivot,
        ) from None
    diag = np.diag(chol) ** 2
    if diag.min() <= n * _EPS * max(diag.max(), np.abs(system).max()):
        raise SingularityError(
            f"ridge system is numerically singular (smallest pivot {diag.min():.3e}, lambda={lam})",
            pivot=float(diag.min()),
        )
    return scipy.linalg.cho_solve((chol, True), rhs)


def thin_svd(a: np.ndarray):
    """Thin SVD of an ``N x r`` factor matrix (``r <= N``)."""
    n, r = a.shape
    if r > n:
        raise ShapeError(f"rank {r} exceeds number of rows {n}")
    return np.linalg.svd(a, full_matrices=False)


def kron_normal_solve(a, t_slice, lam: float = 0.0, svd=None) -> np.ndarray:
    """Ridge-regularized core matrix for one relation slice.

    Minimizes ``||T - A R A^T||_F^2 + lam ||R||_F^2`` over ``r x r``
    matrices ``R``. This is the normal-equation solution with ``Z = A kron A``,
    computed from the SVD ``A = U S V^T`` instead of the ``N^2 x r^2`` matrix:

        R = V [ (s s^T) * (U^T T U) / ((s s^T)^2 + lam) ] V^T

    Parameters
    ----------
    a : (N, r) ndarray
    t_slice : (N, N) sparse or dense matrix
    lam : float
        Ridge weight; must be positive when ``a`` is column-rank deficient.
    svd : tuple, optional
        Precomputed ``thin_svd(a)``, shared across slices by callers.
    """
    a = np.asarray(a, dtype=np.float64)
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    n, r = a.shape
    if t_slice.shape != (n, n):
        raise ShapeError(f"slice shape {t_slice.shape} does not match A with {n} rows")
    u, s, vt = thin_svd(a) if svd is None else svd
    if lam == 0 and (s.size == 0 or s.min() <= s.max() * max(n, r) * _EPS):
        smallest = float(s.min()) if s.size else 0.0
        raise SingularityError(
            f"A is column-rank deficient (smallest singular value {smallest:.3e}) and lambda=0",
            pivot=smallest**2,
        )
    if sp.issparse(t_slice):
        utu = u.T @ np.asarray(t_slice @ u)
    else:
        utu = u.T @ np.asarray(t_slice, dtype=np.float64) @ u
    ss = np.outer(s, s)
    core = ss * utu / (ss**2 + lam)
    return vt.T @ core @ vt
