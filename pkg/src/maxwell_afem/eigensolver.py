"""Smallest positive eigenpairs of the discrete Maxwell problem.

``A u = lambda M u`` has a huge kernel, the gradients ``G p`` of interior
hat functions. The solver factors ``A + M`` once and runs Lanczos on
``x -> (A + M)^{-1} M x`` in the ``M`` inner product, removing the kernel
from every Lanczos vector with the ``M``-orthogonal projector

    x -> x - G (G^T M G)^{-1} G^T M x.

Ritz values ``mu`` map back to ``lambda = 1 / mu - 1``; the largest ``mu``
belong to the smallest positive eigenvalues.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fem import AssembledSystem, DofMap, field_curls
from .linalg import LanczosError, SparseMatrix, cholesky, lanczos_largest
from .mesh import Mesh

log = logging.getLogger(__name__)


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenPair:
    """Discrete eigenpair, scaled so that ``(A u, u) = lambda_h**2``.

    With this scaling ``sigma_h = curl u_h / lambda_h`` has unit L2 norm.
    ``residual`` is ``||A u - lambda_h M u|| / ||M u||``.
    """

    lambda_h: float
    u_coeffs: np.ndarray
    residual: float

    @property
    def sigma_scale(self) -> float:
        return 1.0 / self.lambda_h


class SpectralTransform:
    """Factorizations shared by the eigensolver and the curl-space projector."""

    def __init__(self, system: AssembledSystem):
        self.system = system
        A, M, G = system.A.to_scipy(), system.M.to_scipy(), system.G.to_scipy()
        self._A, self._M, self._G = A, M, G
        self.shifted = cholesky(SparseMatrix.from_scipy((A + M).tocsr()))
        if G.shape[1]:
            self.gram = cholesky(SparseMatrix.from_scipy((G.T @ M @ G).tocsr()))
        else:
            self.gram = None

    @property
    def n_dofs(self):
        return self._A.shape[0]

    @cached_property
    def n_positive(self) -> int:
        """Number of positive discrete eigenvalues, ``n_dofs - rank(G)``."""
        return self.n_dofs - self._G.shape[1]

    def apply_op(self, x):
        return self.shifted.solve(self._M @ x)

    def apply_inner(self, x):
        return self._M @ x

    def project(self, x):
        """Remove the ``M``-orthogonal component along ``range(G)``."""
        if self.gram is None:
            return x
        return x - self._G @ self.gram.solve(self._G.T @ (self._M @ x))

    def consistent(self, b):
        """Make ``A c = b`` solvable: remove the part of ``b`` that ``G^T`` sees,
        along ``M range(G)`` (an exact right-hand side is left unchanged)."""
        if self.gram is None:
            return b
        return b - self._M @ (self._G @ self.gram.solve(self._G.T @ b))

    def residual(self, lam, u):
        Mu = self._M @ u
        return float(np.linalg.norm(self._A @ u - lam * Mu) / np.linalg.norm(Mu))


def solve_smallest(system: AssembledSystem, nev: int = 1, tol: float = 1e-8, seed: int = 0,
                   max_iter: int = 1000, transform: SpectralTransform | None = None):
    """The ``nev`` smallest positive eigenpairs, ascending.

    Parameters
    ----------
    system : AssembledSystem
    nev : int
        Number of pairs.
    tol : float
        Bound on the relative residual ``||A u - lambda M u|| / ||M u||`` of
        every returned pair.
    seed : int
        Seed of the Lanczos start vectors.
    transform : SpectralTransform, optional
        Reuse existing factorizations.

    Raises
    ------
    ValueError
        If there are no dofs or ``nev`` exceeds the number of positive
        eigenvalues.
    EigenSolverError
        If Lanczos fails or the residual bound cannot be met.
    """
    if system.n_dofs == 0:
        raise ValueError("system has no degrees of freedom")
    if nev < 1:
        raise ValueError("nev must be at least 1")
    st = transform or SpectralTransform(system)
    if nev > st.n_positive:
        raise ValueError(f"nev={nev} exceeds the {st.n_positive} positive discrete eigenvalues")
    # the residual asked for is a mesh-dependent multiple (roughly h**-2) of
    # the one Lanczos controls, so start tighter and tighten until it holds
    inner_tol = tol * 1e-3
    for attempt in range(4):
        try:
            ritz = lanczos_largest(st.apply_op, st.apply_inner, st.project, st.n_dofs, nev,
                                   tol=inner_tol, max_iter=max_iter, seed=seed)
        except LanczosError as exc:
            raise EigenSolverError(f"eigensolver did not converge: {exc}") from exc
        pairs = []
        for mu, x in ritz:
            if mu <= 0.0:
                raise EigenSolverError(f"non-positive Ritz value {mu}")
            lam = 1.0 / mu - 1.0
            pairs.append(_normalize(st, lam, x))
        worst = max(p.residual for p in pairs)
        log.debug("attempt %d: inner tol %.1e, worst residual %.3e", attempt, inner_tol, worst)
        if worst <= tol:
            return sorted(pairs, key=lambda p: p.lambda_h)
        inner_tol *= 1e-2
    raise EigenSolverError(f"residual {worst:.3e} above tolerance {tol:.1e}")


def _normalize(st: SpectralTransform, lam, x):
    x = st.project(x)
    # Rayleigh quotient is more accurate than 1/mu - 1
    Ax = st._A @ x
    xMx = float(x @ (st._M @ x))
    lam = float(x @ Ax) / xMx
    if lam <= 0.0:
        raise EigenSolverError(f"non-positive eigenvalue {lam}")
    x = x * (lam / np.sqrt(float(x @ Ax)))
    k = int(np.argmax(np.abs(x)))
    if x[k] < 0:
        x = -x
    return EigenPair(lam, x, st.residual(lam, x))


def select_closest(pairs, target: float) -> EigenPair:
    """Pair whose eigenvalue is nearest to ``target`` (lower one on ties)."""
    if not pairs:
        raise ValueError("no eigenpairs to choose from")
    return min(pairs, key=lambda p: (abs(p.lambda_h - target), p.lambda_h))


def sigma_of(pair: EigenPair, mesh: Mesh, dofmap: DofMap):
    """``(T, 3)`` piecewise-constant ``sigma_h = curl u_h / lambda_h``.

    The field is rescaled to unit L2 norm, so any multiple of ``u_coeffs``
    gives the same result.
    """
    if not pair.lambda_h > 0.0:
        raise ValueError(f"sigma_h needs a positive eigenvalue, got {pair.lambda_h}")
    s = field_curls(mesh, dofmap, pair.u_coeffs) / pair.lambda_h
    nrm = np.sqrt(np.sum(mesh.volumes * np.einsum("ti,ti->t", s, s)))
    if nrm == 0.0:
        raise ValueError("curl of u_h vanishes")
    return s / nrm
