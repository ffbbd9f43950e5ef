"""Compressed sparse row storage used for the assembled bilinear forms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Canonical CSR matrix: sorted, duplicate-free column indices per row.

    Instances are treated as immutable. Arithmetic is delegated to a cached
    :class:`scipy.sparse.csr_matrix` view that shares the same buffers.
    """

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _csr: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        csr = sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.nrows, self.ncols),
        )
        object.__setattr__(self, "_csr", csr)

    @classmethod
    def from_scipy(cls, mat) -> "SparseMatrix":
        csr = sp.csr_matrix(mat, dtype=float)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(
            csr.shape[0],
            csr.shape[1],
            csr.indptr.astype(np.int64),
            csr.indices.astype(np.int64),
            csr.data.astype(float),
        )

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return SparseMatrix.from_scipy(self._csr @ other._csr)
        return self._csr @ other

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr.T)

    T = property(transpose)

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def value(self, i: int, j: int) -> float:
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        k = lo + np.searchsorted(self.col_indices[lo:hi], j)
        if k < hi and self.col_indices[k] == j:
            return float(self.values[k])
        return 0.0


def assemble_from_triplets(n, triplets, ncols=None) -> SparseMatrix:
    """Build an ``n x ncols`` matrix from ``(row, col, value)`` triplets.

    ``triplets`` is either an iterable of 3-tuples or a tuple of three
    equal-length arrays ``(rows, cols, vals)``. Duplicate entries are summed.
    """
    ncols = n if ncols is None else ncols
    if isinstance(triplets, tuple) and len(triplets) == 3 and np.ndim(triplets[0]) == 1:
        rows, cols, vals = (np.asarray(a) for a in triplets)
    else:
        trip = list(triplets)
        if trip:
            rows, cols, vals = (np.asarray(a) for a in zip(*trip))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
    rows = rows.astype(np.int64)
    cols = cols.astype(np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= ncols):
        raise IndexError(f"triplet index out of range for a {n}x{ncols} matrix")
    coo = sp.coo_matrix((vals.astype(float), (rows, cols)), shape=(n, ncols))
    return SparseMatrix.from_scipy(coo.tocsr())


def symmetry_audit(A: SparseMatrix, tol: float = 0.0):
    """Return ``(ok, worst)`` where ``worst`` is max |a_ij - a_ji| over stored entries."""
    if A.nrows != A.ncols:
        return False, np.inf
    csr = A.to_scipy()
    diff = csr - csr.T
    worst = float(np.abs(diff.data).max()) if diff.nnz else 0.0
    scale = float(np.abs(csr.data).max()) if csr.nnz else 1.0
    return worst <= tol * scale, worst
