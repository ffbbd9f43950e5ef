"""Residual error indicators, effectivity diagnostics and the curl-space projector.

For lowest-order edge elements the discrete field is divergence free inside
each tet, so the indicator reduces to normal jumps across interior faces::

    eta_K**2 = sum over interior faces F of K of  h_F / 4 * ||[u_h . n_F]||_F**2

Every interior face contributes its full term to both neighbours.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .eigensolver import EigenPair, SpectralTransform
from .fem import AssembledSystem, DofMap, field_curls, interpolate, tet_curls, vertex_values
from .mesh import Mesh
from .quadrature import barycentric, quadrature

log = logging.getLogger(__name__)


class NonConformingMeshError(ValueError):
    pass


@dataclass(frozen=True)
class IndicatorField:
    """Per-tet indicators; ``eta_K**2 = jump_part + div_part``."""

    eta_K: np.ndarray
    eta: float
    jump_part: np.ndarray
    div_part: np.ndarray

    def __len__(self):
        return len(self.eta_K)


def _coeffs(pair_or_coeffs):
    return np.asarray(getattr(pair_or_coeffs, "u_coeffs", pair_or_coeffs), dtype=float)


def _local_index(tets, owners, verts):
    """Position of each of ``verts[f, j]`` inside tet ``owners[f]``."""
    return np.argmax(tets[owners][:, None, :] == verts[:, :, None], axis=2)


def face_jumps(mesh: Mesh, dofmap: DofMap, coeffs, faces=None):
    """Normal jumps ``[u_h . n_F]`` at the vertices of interior faces.

    ``n_F`` points from the lower to the higher neighbour id. Returns the
    face ids and an ``(F, 3)`` array; the jump is affine on each face.
    """
    faces = mesh.interior_faces if faces is None else np.asarray(faces)
    vals = vertex_values(mesh, dofmap, coeffs)
    ft = np.sort(mesh.face_tets[faces], axis=1)
    fv = mesh.faces[faces]
    n, _ = mesh.face_normals()
    n = n[faces]
    # orient n_F from ft[:, 0] into ft[:, 1]
    c0 = mesh.vertices[mesh.tets[ft[:, 0]]].mean(axis=1)
    flip = np.einsum("fi,fi->f", n, mesh.vertices[fv[:, 0]] - c0) < 0
    n[flip] *= -1
    u0 = vals[ft[:, 0][:, None], _local_index(mesh.tets, ft[:, 0], fv)]
    u1 = vals[ft[:, 1][:, None], _local_index(mesh.tets, ft[:, 1], fv)]
    return faces, np.einsum("fji,fi->fj", u1 - u0, n)


def face_diameters(mesh: Mesh, faces=None):
    faces = np.arange(mesh.n_faces) if faces is None else np.asarray(faces)
    p = mesh.vertices[mesh.faces[faces]]
    d = [np.linalg.norm(p[:, a] - p[:, b], axis=1) for a, b in ((0, 1), (0, 2), (1, 2))]
    return np.max(d, axis=0)


def compute_indicators(mesh: Mesh, dofmap: DofMap, pair, degree: int = 2) -> IndicatorField:
    """Indicators ``eta_K`` of a discrete field.

    Parameters
    ----------
    pair : EigenPair or array_like
        The field, as a pair or as its coefficient vector.
    degree : int
        Triangle quadrature degree for the squared jumps (2 is exact).
    """
    if mesh.face_count.max(initial=0) > 2:
        raise NonConformingMeshError("a face is shared by more than two tets")
    coeffs = _coeffs(pair)
    faces, jv = face_jumps(mesh, dofmap, coeffs)
    pts, w = quadrature("triangle", degree)
    phi = barycentric(pts)
    jq = jv @ phi.T
    area = mesh.face_normals()[1][faces]
    sq = 2.0 * area * (jq**2 @ w)
    contrib = face_diameters(mesh, faces) / 4.0 * sq
    jump = np.zeros(mesh.n_tets)
    ft = mesh.face_tets[faces]
    np.add.at(jump, ft[:, 0], contrib)
    np.add.at(jump, ft[:, 1], contrib)
    # Whitney fields are divergence free inside each tet
    div = np.zeros(mesh.n_tets)
    eta_K = np.sqrt(jump + div)
    return IndicatorField(eta_K, float(np.sqrt(np.sum(jump + div))), jump, div)


# ---------------------------------------------------------------- projection
def _tet_integrals(mesh: Mesh, field, degree=4):
    """``(T, 3)`` integrals of a vector field over each tet."""
    pts, w = quadrature("tet", degree)
    lam = barycentric(pts)
    x = np.einsum("qj,tjd->tqd", lam, mesh.vertices[mesh.tets])
    vals = np.asarray(field(x.reshape(-1, 3)), dtype=float).reshape(x.shape)
    return 6.0 * mesh.volumes[:, None] * np.einsum("q,tqd->td", w, vals)


def project_onto_curl_space(mesh: Mesh, dofmap: DofMap, system: AssembledSystem, sigma_exact,
                            transform: SpectralTransform | None = None, tol: float = 1e-12,
                            max_iter: int = 200):
    """L2 projection of ``sigma_exact`` onto the curls of the edge space.

    Solves ``A c = b``, ``b_i = (sigma, curl W_i)``, by the stationary
    iteration ``c <- c + (A + M)^{-1} (b - A c)``, which contracts every
    non-kernel error component by ``1 / (1 + lambda_1)``; kernel components
    do not affect ``curl c``. Returns the ``(T, 3)`` piecewise-constant field.

    ``sigma_exact`` maps ``(P, 3)`` points to ``(P, 3)`` values, or is a
    ``(T, 3)`` array of piecewise constants.
    """
    st = transform or SpectralTransform(system)
    if callable(sigma_exact):
        integ = _tet_integrals(mesh, sigma_exact)
    else:
        integ = np.asarray(sigma_exact, dtype=float) * mesh.volumes[:, None]
    loc = np.einsum("tei,ti->te", tet_curls(mesh), integ) * dofmap.tet_local_signs
    b = np.zeros(dofmap.n_dofs)
    keep = dofmap.tet_dofs >= 0
    np.add.at(b, dofmap.tet_dofs[keep], loc[keep])
    # round-off in b has kernel components no iterate can match
    b = st.consistent(b)
    A = st._A
    c = np.zeros_like(b)
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return np.zeros((mesh.n_tets, 3))
    for it in range(max_iter):
        r = st.consistent(b - A @ c)
        res = np.linalg.norm(r) / bn
        if res <= tol:
            break
        c += st.shifted.solve(r)
    else:
        raise RuntimeError(f"projection solve stalled at relative residual {res:.3e}")
    log.debug("curl-space projection: %d iterations, residual %.2e", it, res)
    return field_curls(mesh, dofmap, c)


def l2_norm_pw(mesh: Mesh, field):
    """L2 norm of a ``(T, 3)`` piecewise-constant field."""
    return float(np.sqrt(np.sum(mesh.volumes * np.einsum("ti,ti->t", field, field))))


def l2_distance_pw(mesh: Mesh, pw, field, degree=4):
    """``||pw - field||`` for piecewise-constant ``pw`` and callable ``field``."""
    pts, w = quadrature("tet", degree)
    lam = barycentric(pts)
    x = np.einsum("qj,tjd->tqd", lam, mesh.vertices[mesh.tets])
    vals = np.asarray(field(x.reshape(-1, 3)), dtype=float).reshape(x.shape)
    d = vals - pw[:, None, :]
    return float(np.sqrt(np.sum(6.0 * mesh.volumes * np.einsum("q,tqd->t", w, d * d))))


# ---------------------------------------------------------------- clusters
def cluster_pair(pairs, mesh: Mesh, dofmap: DofMap, system: AssembledSystem, reference) -> EigenPair:
    """Member of the span of ``pairs`` closest to an analytic ``reference``.

    Degenerate eigenvalues (e.g. the triple lowest one of the cube) leave
    the discrete eigenvector undetermined within its cluster. This picks the
    ``M``-orthogonal projection of the interpolated reference field onto the
    span, rescaled to ``(A u, u) = lambda**2`` with ``lambda`` its Rayleigh
    quotient.
    """
    A, M = system.A.to_scipy(), system.M.to_scipy()
    U = np.stack([p.u_coeffs for p in pairs], axis=1)
    r = interpolate(mesh, dofmap, reference)
    gram = U.T @ (M @ U)
    coef = np.linalg.solve(gram, U.T @ (M @ r))
    u = U @ coef
    lam = float(u @ (A @ u)) / float(u @ (M @ u))
    u = u * (lam / np.sqrt(float(u @ (A @ u))))
    Mu = M @ u
    resid = float(np.linalg.norm(A @ u - lam * Mu) / np.linalg.norm(Mu))
    return EigenPair(lam, u, resid)


# ---------------------------------------------------------------- effectivity
@dataclass(frozen=True)
class FineReference:
    """Discrete reference on a refinement of the mesh; ``parent[k]`` is the
    coarse tet containing fine tet ``k``."""

    mesh: Mesh
    dofmap: DofMap
    pair: EigenPair
    parent: np.ndarray


@dataclass(frozen=True)
class EffectivityReport:
    eta: float
    error_norm: float
    effectivity: float
    per_tet_ratios: dict
    error_K: np.ndarray


def _patch_errors(mesh: Mesh, err_sq):
    """``||e||`` over each tet together with its face neighbours."""
    out = err_sq.copy()
    inner = mesh.interior_faces
    ft = mesh.face_tets[inner]
    np.add.at(out, ft[:, 0], err_sq[ft[:, 1]])
    np.add.at(out, ft[:, 1], err_sq[ft[:, 0]])
    return np.sqrt(out)


def _ratio_stats(eta_K, patch_err):
    ok = patch_err > 0
    r = eta_K[ok] / patch_err[ok]
    if r.size == 0:
        return {"min": np.nan, "median": np.nan, "p95": np.nan, "max": np.nan}
    return {"min": float(r.min()), "median": float(np.median(r)),
            "p95": float(np.percentile(r, 95)), "max": float(r.max())}


def effectivity(mesh: Mesh, dofmap: DofMap, pair: EigenPair, reference, degree: int = 4,
                indicators: IndicatorField | None = None) -> EffectivityReport:
    """Compare ``eta`` with the L2 error of ``u_h`` against a reference.

    ``reference`` is a callable ``(P, 3) -> (P, 3)`` or a :class:`FineReference`.
    The reference is rescaled to the L2 norm of ``u_h`` and its sign aligned
    with ``u_h``.

    Raises
    ------
    ValueError
        If the reference has zero norm or coincides with ``u_h``.
    """
    ind = indicators or compute_indicators(mesh, dofmap, pair)
    pts, w = quadrature("tet", degree)
    lam = barycentric(pts)
    coarse = vertex_values(mesh, dofmap, pair.u_coeffs)
    if isinstance(reference, FineReference):
        fm = reference.mesh
        host = np.asarray(reference.parent)
        x = np.einsum("qj,tjd->tqd", lam, fm.vertices[fm.tets])
        ref = np.einsum("qj,tjd->tqd", lam, vertex_values(fm, reference.dofmap, reference.pair.u_coeffs))
        # barycentric coordinates of the fine points in their coarse host
        g = mesh.barycentric_gradients[host]
        x0 = mesh.vertices[mesh.tets[host, 0]]
        b = np.einsum("tjd,tqd->tqj", g[:, 1:], x - x0[:, None])
        bc = np.concatenate([1.0 - b.sum(axis=2, keepdims=True), b], axis=2)
        uh = np.einsum("tqj,tjd->tqd", bc, coarse[host])
        vol = fm.volumes
    else:
        host = np.arange(mesh.n_tets)
        x = np.einsum("qj,tjd->tqd", lam, mesh.vertices[mesh.tets])
        ref = np.asarray(reference(x.reshape(-1, 3)), dtype=float).reshape(x.shape)
        uh = np.einsum("qj,tjd->tqd", lam, coarse)
        vol = mesh.volumes
    wq = 6.0 * vol[:, None] * w[None, :]
    ref_sq = float(np.sum(wq * np.einsum("tqd,tqd->tq", ref, ref)))
    if ref_sq == 0.0:
        raise ValueError("reference field has zero norm")
    uh_sq = float(np.sum(wq * np.einsum("tqd,tqd->tq", uh, uh)))
    cross = float(np.sum(wq * np.einsum("tqd,tqd->tq", ref, uh)))
    ref = ref * (np.sign(cross) or 1.0) * np.sqrt(uh_sq / ref_sq)
    d = ref - uh
    e_fine = np.sum(wq * np.einsum("tqd,tqd->tq", d, d), axis=1)
    err_sq = np.zeros(mesh.n_tets)
    np.add.at(err_sq, host, e_fine)
    err = float(np.sqrt(err_sq.sum()))
    if not err > 1e-14 * np.sqrt(uh_sq):
        raise ValueError("reference coincides with u_h: error norm is zero")
    stats = _ratio_stats(ind.eta_K, _patch_errors(mesh, err_sq))
    return EffectivityReport(ind.eta, err, ind.eta / err, stats, np.sqrt(err_sq))


__all__ = [
    "EffectivityReport",
    "FineReference",
    "IndicatorField",
    "NonConformingMeshError",
    "cluster_pair",
    "compute_indicators",
    "effectivity",
    "face_jumps",
    "l2_distance_pw",
    "l2_norm_pw",
    "project_onto_curl_space",
]
