"""Dense generalized symmetric eigensolver used as an oracle on small problems."""

import numpy as np
import scipy.linalg as sla

MAX_DENSE_DIM = 2000


def dense_generalized_eig(A, M):
    """All eigenpairs of ``A x = lambda M x`` in ascending order.

    ``M = L L^T`` is factored and the problem reduced to the standard
    symmetric matrix ``L^{-1} A L^{-T}``, which is solved with LAPACK's
    implicit QL/QR iteration. Eigenvectors are returned ``M``-orthonormal,
    as the columns of the second output.
    """
    A = _dense(A)
    M = _dense(M)
    n = A.shape[0]
    if n > MAX_DENSE_DIM:
        raise ValueError(f"dense oracle limited to dim <= {MAX_DENSE_DIM}, got {n}")
    if n == 0:
        return np.zeros(0), np.zeros((0, 0))
    try:
        L = np.linalg.cholesky(0.5 * (M + M.T))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("M not SPD") from exc
    C = sla.solve_triangular(L, A, lower=True)
    C = sla.solve_triangular(L, C.T, lower=True).T
    C = 0.5 * (C + C.T)
    w, Y = sla.eigh(C, driver="ev")
    X = sla.solve_triangular(L.T, Y, lower=False)
    return w, X


def _dense(A):
    if hasattr(A, "toarray"):
        return np.asarray(A.toarray(), dtype=float)
    return np.asarray(A, dtype=float)
