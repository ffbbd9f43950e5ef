"""Lowest-order Nédélec (Whitney) edge elements on tetrahedral meshes.

The degree of freedom of an edge ``(a, b)``, ``a < b``, is the tangential
line integral from ``a`` to ``b``. On a tet with local vertices ``i, j`` the
Whitney form ``W_ij = l_i grad l_j - l_j grad l_i`` has unit integral along
``i -> j``; the global basis function is ``sign * W_ij`` with the sign
stored per tet in :attr:`Mesh.tet_edge_signs`. Edges on the boundary carry
no dof, which imposes ``u x n = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SparseMatrix, assemble_from_triplets
from .mesh import LOCAL_EDGES, Mesh
from .quadrature import barycentric, quadrature

_EA = LOCAL_EDGES[:, 0]
_EB = LOCAL_EDGES[:, 1]
_CHUNK = 65536


class DegenerateElementError(ValueError):
    pass


@dataclass(frozen=True)
class DofMap:
    """Edge dof numbering: interior edges are numbered in edge-id order.

    ``interior_vertices`` lists the vertices whose hat functions span the
    gradient kernel (columns of ``G``).
    """

    n_dofs: int
    edge_to_dof: np.ndarray
    tet_local_signs: np.ndarray
    tet_dofs: np.ndarray
    interior_vertices: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: Mesh, essential: bool = True) -> "DofMap":
        """Number the edge dofs.

        With ``essential=False`` boundary edges keep their dofs (the full
        ``H(curl)`` space, used for patch tests) and ``G`` covers all vertices.
        """
        free = ~mesh.boundary_edge if essential else np.ones(mesh.n_edges, dtype=bool)
        edge_to_dof = np.full(mesh.n_edges, -1, dtype=np.int64)
        edge_to_dof[free] = np.arange(int(free.sum()))
        vertices = ~mesh.boundary_vertex if essential else np.ones(mesh.n_vertices, dtype=bool)
        return cls(
            n_dofs=int(free.sum()),
            edge_to_dof=edge_to_dof,
            tet_local_signs=np.asarray(mesh.tet_edge_signs, dtype=np.int8),
            tet_dofs=edge_to_dof[mesh.tet_edges],
            interior_vertices=np.flatnonzero(vertices),
        )

    def local_coefficients(self, coeffs):
        """``(T, 6)`` coefficients of the local Whitney forms (0 on boundary edges)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_dofs,):
            raise ValueError(f"expected {self.n_dofs} coefficients, got shape {coeffs.shape}")
        padded = np.append(coeffs, 0.0)
        return padded[self.tet_dofs] * self.tet_local_signs


@dataclass(frozen=True)
class LocalWhitney:
    """The six Whitney forms of one tet.

    ``grads`` are the barycentric gradients; ``curls[e] = 2 grad l_a x grad l_b``
    for local edge ``e = (a, b)``.
    """

    vertices: np.ndarray
    grads: np.ndarray
    curls: np.ndarray
    volume: float

    def values(self, bary):
        """``(P, 6, 3)`` values at barycentric points ``(P, 4)``."""
        bary = np.atleast_2d(bary)
        return (bary[:, _EA, None] * self.grads[None, _EB]
                - bary[:, _EB, None] * self.grads[None, _EA])


def whitney_basis(tet_vertices) -> LocalWhitney:
    """Whitney edge basis on a tet given by its ``(4, 3)`` vertex coordinates.

    Raises
    ------
    DegenerateElementError
        If ``|volume| < 1e-14 * h_K**3``.
    """
    x = np.asarray(tet_vertices, dtype=float).reshape(4, 3)
    J = (x[1:] - x[0]).T
    vol = np.linalg.det(J) / 6.0
    hK = max(np.linalg.norm(x[a] - x[b]) for a, b in LOCAL_EDGES)
    if not abs(vol) >= 1e-14 * hK**3:
        raise DegenerateElementError(f"degenerate tet: volume {vol:.3e}, diameter {hK:.3e}")
    g = np.empty((4, 3))
    g[1:] = np.linalg.inv(J)
    g[0] = -g[1:].sum(axis=0)
    curls = 2.0 * np.cross(g[_EA], g[_EB])
    return LocalWhitney(x, g, curls, abs(vol))


def _check_elements(mesh: Mesh):
    vol = mesh.signed_volumes
    hK = np.linalg.norm(mesh.vertices[mesh.tets[:, _EA]] - mesh.vertices[mesh.tets[:, _EB]], axis=2).max(axis=1)
    bad = np.flatnonzero(~(np.abs(vol) >= 1e-14 * hK**3))
    if bad.size:
        raise DegenerateElementError(f"degenerate tet {bad[0]}: volume {vol[bad[0]]:.3e}")


def tet_curls(mesh: Mesh):
    """``(T, 6, 3)`` constant curls of the local Whitney forms."""
    g = mesh.barycentric_gradients
    return 2.0 * np.cross(g[:, _EA], g[:, _EB])


@dataclass(frozen=True)
class AssembledSystem:
    """Curl-curl stiffness ``A``, edge mass ``M`` and discrete gradient ``G``."""

    A: SparseMatrix
    M: SparseMatrix
    G: SparseMatrix

    @property
    def n_dofs(self):
        return self.A.nrows


def _local_mass(g, vol, bary, w):
    # W_e(q) for every tet in the chunk: (T, Q, 6, 3)
    W = (bary[None, :, _EA, None] * g[:, None, _EB] - bary[None, :, _EB, None] * g[:, None, _EA])
    return 6.0 * vol[:, None, None] * np.einsum("q,tqei,tqfi->tef", w, W, W)


def _scatter(tet_dofs, signs, local, n):
    """Triplets of the global matrix from ``(T, 6, 6)`` local matrices."""
    s = signs.astype(float)
    vals = local * s[:, :, None] * s[:, None, :]
    rows = np.broadcast_to(tet_dofs[:, :, None], vals.shape)
    cols = np.broadcast_to(tet_dofs[:, None, :], vals.shape)
    keep = (rows >= 0) & (cols >= 0)
    return rows[keep], cols[keep], vals[keep]


def assemble(mesh: Mesh, dofmap: DofMap | None = None) -> AssembledSystem:
    """Assemble ``A``, ``M`` (degree-2 quadrature, exact) and ``G``.

    ``G`` maps hat-function coefficients on interior vertices to the edge
    coefficients of their gradient: ``G[e, b] = 1``, ``G[e, a] = -1`` for
    ``e = (a, b)``, ``a < b``.
    """
    dofmap = dofmap or DofMap.from_mesh(mesh)
    _check_elements(mesh)
    n = dofmap.n_dofs
    pts, w = quadrature("tet", 2)
    bary = barycentric(pts)
    rA, cA, vA, rM, cM, vM = [], [], [], [], [], []
    for lo in range(0, mesh.n_tets, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        g = mesh.barycentric_gradients[sl]
        vol = mesh.volumes[sl]
        curls = 2.0 * np.cross(g[:, _EA], g[:, _EB])
        kA = vol[:, None, None] * np.einsum("tei,tfi->tef", curls, curls)
        kM = _local_mass(g, vol, bary, w)
        for acc, local in (((rA, cA, vA), kA), ((rM, cM, vM), kM)):
            r, c, v = _scatter(dofmap.tet_dofs[sl], dofmap.tet_local_signs[sl], local, n)
            acc[0].append(r)
            acc[1].append(c)
            acc[2].append(v)
    A = assemble_from_triplets(n, (np.concatenate(rA), np.concatenate(cA), np.concatenate(vA)))
    M = assemble_from_triplets(n, (np.concatenate(rM), np.concatenate(cM), np.concatenate(vM)))
    G = discrete_gradient(mesh, dofmap)
    return AssembledSystem(A, M, G)


def discrete_gradient(mesh: Mesh, dofmap: DofMap) -> SparseMatrix:
    """Incidence matrix from interior vertices to interior edges."""
    vmap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    vmap[dofmap.interior_vertices] = np.arange(len(dofmap.interior_vertices))
    dof_edges = np.flatnonzero(dofmap.edge_to_dof >= 0)
    e = mesh.edges[dof_edges]
    rows = np.concatenate([dofmap.edge_to_dof[dof_edges]] * 2)
    cols = np.concatenate([vmap[e[:, 0]], vmap[e[:, 1]]])
    vals = np.concatenate([-np.ones(len(e)), np.ones(len(e))])
    keep = cols >= 0
    return assemble_from_triplets(dofmap.n_dofs, (rows[keep], cols[keep], vals[keep]),
                                  ncols=len(dofmap.interior_vertices))


def vertex_values(mesh: Mesh, dofmap: DofMap, coeffs):
    """``(T, 4, 3)`` values of the discrete field at the tet vertices.

    The field is affine on each tet, so ``u(x) = sum_i l_i(x) * values[:, i]``.
    At vertex ``i`` only the forms of edges touching ``i`` survive.
    """
    c = dofmap.local_coefficients(coeffs)
    g = mesh.barycentric_gradients
    out = np.zeros((mesh.n_tets, 4, 3))
    for e, (a, b) in enumerate(LOCAL_EDGES):
        out[:, a] += c[:, e, None] * g[:, b]
        out[:, b] -= c[:, e, None] * g[:, a]
    return out


def evaluate_field(mesh: Mesh, dofmap: DofMap, coeffs, tet: int, point):
    """Value of ``sum_e sign_e coeff_e W_e`` in ``tet`` at a barycentric point.

    ``point`` may be a single 4-vector or a ``(P, 4)`` array.
    """
    if not 0 <= int(tet) < mesh.n_tets:
        raise IndexError(f"unknown tet {tet}")
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (dofmap.n_dofs,):
        raise ValueError(f"expected {dofmap.n_dofs} coefficients, got shape {coeffs.shape}")
    basis = whitney_basis(mesh.vertices[mesh.tets[tet]])
    d = dofmap.tet_dofs[tet]
    c = np.where(d >= 0, np.append(coeffs, 0.0)[d], 0.0) * dofmap.tet_local_signs[tet]
    p = np.asarray(point, dtype=float)
    vals = np.einsum("e,pei->pi", c, basis.values(np.atleast_2d(p)))
    return vals[0] if p.ndim == 1 else vals


def field_curls(mesh: Mesh, dofmap: DofMap, coeffs):
    """``(T, 3)`` piecewise-constant curl of the discrete field."""
    c = dofmap.local_coefficients(coeffs)
    return np.einsum("te,tei->ti", c, tet_curls(mesh))


def interpolate(mesh: Mesh, dofmap: DofMap, field, n_points: int = 4):
    """Edge-integral interpolant of ``field``.

    ``field`` is a constant 3-vector or a callable mapping ``(P, 3)`` points
    to ``(P, 3)`` values; line integrals use Gauss-Legendre rules.
    """
    dof_edges = np.flatnonzero(dofmap.edge_to_dof >= 0)
    a = mesh.vertices[mesh.edges[dof_edges, 0]]
    b = mesh.vertices[mesh.edges[dof_edges, 1]]
    t = b - a
    out = np.zeros(dofmap.n_dofs)
    if not callable(field):
        out[dofmap.edge_to_dof[dof_edges]] = t @ np.asarray(field, dtype=float)
        return out
    s, w = np.polynomial.legendre.leggauss(n_points)
    s, w = 0.5 * (s + 1.0), 0.5 * w
    acc = np.zeros(len(dof_edges))
    for sk, wk in zip(s, w):
        acc += wk * np.einsum("ei,ei->e", np.asarray(field(a + sk * t), dtype=float), t)
    out[dofmap.edge_to_dof[dof_edges]] = acc
    return out


def mass_norm(M: SparseMatrix, x):
    return float(np.sqrt(x @ (M @ x)))
