from .cholesky import Factorization, NotSPDError, cholesky, fill_reducing_ordering
from .dense import dense_generalized_eig
from .lanczos import LanczosError, RitzPairs, lanczos_largest
from .sparse import SparseMatrix, assemble_from_triplets, symmetry_audit

__all__ = [
    "Factorization",
    "LanczosError",
    "NotSPDError",
    "RitzPairs",
    "SparseMatrix",
    "assemble_from_triplets",
    "cholesky",
    "dense_generalized_eig",
    "fill_reducing_ordering",
    "lanczos_largest",
    "symmetry_audit",
]
