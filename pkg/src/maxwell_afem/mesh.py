"""Tetrahedral meshes: structured generators, topology, geometry and audits."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# local edge k joins local vertices LOCAL_EDGES[k]; local face f is opposite vertex f
LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
LOCAL_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])

_KEY_SHIFT = np.int64(2**21)


def edge_keys(a, b):
    """Order-independent integer key of the edge ``{a, b}``."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    return lo * np.int64(2**31) + hi


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box, optionally with a corner block removed."""

    kind: str = "unit_cube"
    bounds: tuple = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
    hole_bounds: tuple | None = None

    @classmethod
    def unit_cube(cls):
        return cls("unit_cube")

    @classmethod
    def box(cls, bounds):
        return cls("box", tuple(tuple(map(float, b)) for b in bounds))

    @classmethod
    def fichera(cls, bounds=((0.0, 0.8), (0.0, 1.0), (0.0, 1.2)),
                hole_bounds=((0.0, 0.4), (0.0, 0.5), (0.0, 0.6))):
        return cls(
            "fichera",
            tuple(tuple(map(float, b)) for b in bounds),
            tuple(tuple(map(float, b)) for b in hole_bounds),
        )

    @classmethod
    def from_name(cls, name: str) -> "DomainSpec":
        if name in ("cube", "unit_cube"):
            return cls.unit_cube()
        if name == "fichera":
            return cls.fichera()
        if name.startswith("box:"):
            try:
                ext = [float(v) for v in name[4:].split(",")]
            except ValueError:
                ext = []
            if len(ext) == 3 and min(ext) > 0:
                return cls.box([(0.0, e) for e in ext])
        raise ValueError(f"unknown domain {name!r} (unit_cube, fichera or box:a,b,c)")

    @property
    def volume(self) -> float:
        vol = float(np.prod([hi - lo for lo, hi in self.bounds]))
        if self.hole_bounds is not None:
            vol -= float(np.prod([hi - lo for lo, hi in self.hole_bounds]))
        return vol

    @property
    def reentrant_corner(self):
        """Vertex of the removed block that points into the domain."""
        if self.hole_bounds is None:
            return None
        return np.array([hi for _, hi in self.hole_bounds])


class Mesh:
    """Conforming tetrahedral mesh with edge and face topology.

    ``tets`` is positively oriented. ``order`` lists each tet's vertices in
    bisection order (refinement edge ``order[:, 0] -- order[:, 3]``) and
    ``tag`` carries the bisection type, ``-1`` meaning longest-edge bisection;
    both are maintained by :mod:`maxwell_afem.refine`. Without an explicit
    ``order`` each tet is bisected at its longest edge. Instances are not
    modified after construction.
    """

    def __init__(self, vertices, tets, order=None, tag=None, parent=None):
        vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 3)
        tets = np.ascontiguousarray(tets, dtype=np.int64).reshape(-1, 4)
        if order is None:
            order = longest_edge_order(vertices, tets)
            tag = -1 if tag is None else tag
        order = np.ascontiguousarray(order, dtype=np.int64).reshape(-1, 4)
        self.vertices = vertices
        self.tets = tets
        self.order = order
        tag = -1 if tag is None else tag
        self.tag = np.ascontiguousarray(np.broadcast_to(np.asarray(tag, dtype=np.int64), (len(tets),)))
        self.parent = parent
        for arr in (self.vertices, self.tets, self.order, self.tag):
            arr.setflags(write=False)
        self._build_topology()

    # ------------------------------------------------------------------ topology
    def _build_topology(self):
        T = self.tets
        nv = len(self.vertices)
        a = T[:, LOCAL_EDGES[:, 0]]
        b = T[:, LOCAL_EDGES[:, 1]]
        keys = edge_keys(a, b).ravel()
        ukeys, inv = np.unique(keys, return_inverse=True)
        self.edges = np.stack([ukeys // np.int64(2**31), ukeys % np.int64(2**31)], axis=1)
        self._edge_keys = ukeys
        self.tet_edges = inv.reshape(-1, 6)
        self.tet_edge_signs = np.where(a < b, 1, -1).astype(np.int8)

        tri = np.sort(T[:, LOCAL_FACES], axis=2).reshape(-1, 3)
        if nv < _KEY_SHIFT:
            fkeys = (tri[:, 0] * _KEY_SHIFT + tri[:, 1]) * _KEY_SHIFT + tri[:, 2]
            _, first, finv, counts = np.unique(fkeys, return_index=True, return_inverse=True,
                                               return_counts=True)
        else:
            _, first, finv, counts = np.unique(tri, axis=0, return_index=True,
                                               return_inverse=True, return_counts=True)
        finv = finv.ravel()
        self.faces = tri[first]
        self.tet_faces = finv.reshape(-1, 4)
        self.face_count = counts
        nf = len(first)
        owner = np.repeat(np.arange(len(T)), 4)
        srt = np.argsort(finv, kind="stable")
        face_tets = np.full((nf, 2), -1, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        face_tets[:, 0] = owner[srt[starts]]
        two = counts >= 2
        face_tets[two, 1] = owner[srt[starts[two] + 1]]
        self.face_tets = face_tets
        self.boundary_face = counts == 1

        bf = self.faces[self.boundary_face]
        bkeys = np.concatenate([edge_keys(bf[:, 0], bf[:, 1]), edge_keys(bf[:, 0], bf[:, 2]),
                                edge_keys(bf[:, 1], bf[:, 2])])
        self.boundary_edge = np.isin(self._edge_keys, bkeys)
        self.boundary_vertex = np.zeros(nv, dtype=bool)
        self.boundary_vertex[bf.ravel()] = True

    def edge_index(self, a, b):
        """Global edge ids of vertex pairs (``-1`` when the edge does not exist)."""
        keys = edge_keys(a, b)
        pos = np.searchsorted(self._edge_keys, keys)
        pos = np.minimum(pos, len(self._edge_keys) - 1)
        return np.where(self._edge_keys[pos] == keys, pos, -1)

    @property
    def refinement_edge(self):
        return self.edge_index(self.order[:, 0], self.order[:, 3])

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def interior_faces(self):
        return np.flatnonzero(~self.boundary_face & (self.face_count == 2))

    # ------------------------------------------------------------------ geometry
    @cached_property
    def signed_volumes(self):
        x = self.vertices[self.tets]
        return np.linalg.det(x[:, 1:] - x[:, :1]) / 6.0

    @property
    def volumes(self):
        return np.abs(self.signed_volumes)

    @cached_property
    def barycentric_gradients(self):
        """``(T, 4, 3)`` gradients of the barycentric coordinates."""
        x = self.vertices[self.tets]
        J = (x[:, 1:] - x[:, :1]).transpose(0, 2, 1)
        Jinv = np.linalg.inv(J)
        g = np.empty((len(x), 4, 3))
        g[:, 1:] = Jinv
        g[:, 0] = -Jinv.sum(axis=1)
        return g

    def face_normals(self):
        """Unit normals and areas of all faces (normal orientation arbitrary)."""
        p = self.vertices[self.faces]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        area2 = np.linalg.norm(cr, axis=1)
        return cr / area2[:, None], 0.5 * area2

    def dihedral_angles(self):
        """``(T, 6)`` interior dihedral angles in degrees at the local edges."""
        g = self.barycentric_gradients
        # the dihedral angle at edge (i, j) is between the faces opposite k and l
        other = np.array([[2, 3], [1, 3], [1, 2], [0, 3], [0, 2], [0, 1]])
        gk = g[:, other[:, 0]]
        gl = g[:, other[:, 1]]
        c = -np.einsum("tei,tei->te", gk, gl) / (np.linalg.norm(gk, axis=2) * np.linalg.norm(gl, axis=2))
        return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))

    def centroids(self):
        return self.vertices[self.tets].mean(axis=1)

    # ------------------------------------------------------------------ io
    def to_json(self) -> str:
        return json.dumps({
            "vertices": self.vertices.tolist(),
            "tets": self.tets.tolist(),
            "order": self.order.tolist(),
            "tag": self.tag.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Mesh":
        d = json.loads(text)
        return cls(d["vertices"], d["tets"], d.get("order"), d.get("tag"))

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_tets={self.n_tets})"


def orient_positive(vertices, tets):
    """Swap the last two vertices of negatively oriented tets."""
    tets = np.array(tets, dtype=np.int64)
    x = vertices[tets]
    neg = np.linalg.det(x[:, 1:] - x[:, :1]) < 0
    tets[neg, 2], tets[neg, 3] = tets[neg, 3].copy(), tets[neg, 2].copy()
    return tets


def longest_edge_order(vertices, tets):
    """Bisection order putting each tet's longest edge first-to-last.

    Edges are ranked by squared length quantized on a global scale, so an
    edge ranks the same in every tet containing it; ties go to the lower
    edge key. Both neighbours of a face then split it at the same edge.
    """
    tets = np.asarray(tets, dtype=np.int64)
    if len(tets) == 0:
        return tets.reshape(0, 4)
    vertices = np.asarray(vertices, dtype=float)
    x = vertices[tets]
    a, b = LOCAL_EDGES[:, 0], LOCAL_EDGES[:, 1]
    scale = float(np.sum(np.ptp(vertices, axis=0) ** 2)) or 1.0
    length = np.round(np.sum((x[:, a] - x[:, b]) ** 2, axis=2) / scale * 2.0**36)
    keys = edge_keys(tets[:, a], tets[:, b])
    rows = np.arange(len(tets))
    best = np.zeros(len(tets), dtype=np.int64)
    for k in range(1, 6):
        cur = length[rows, best]
        better = (length[:, k] > cur) | ((length[:, k] == cur) & (keys[:, k] < keys[rows, best]))
        best = np.where(better, k, best)
    i0 = LOCAL_EDGES[best, 0]
    i3 = LOCAL_EDGES[best, 1]
    rest = np.array([[j for j in range(4) if j not in e] for e in LOCAL_EDGES])[best]
    return np.stack([tets[rows, i0], tets[rows, rest[:, 0]], tets[rows, rest[:, 1]], tets[rows, i3]], axis=1)


def generate_structured(domain: DomainSpec, divisions) -> Mesh:
    """Partition the domain into equal boxes, each split into six Kuhn tets.

    Every box is cut along its main diagonal; the six tets follow the six
    monotone lattice paths from the low corner to the high corner. Boxes
    inside the removed block of a Fichera domain are omitted.
    """
    divisions = tuple(int(d) for d in np.broadcast_to(np.asarray(divisions), (3,)))
    if min(divisions) < 1:
        raise ValueError("divisions must be >= 1 along every axis")
    bounds = np.asarray(domain.bounds, dtype=float)
    axes = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(bounds, divisions)]
    steps = [(hi - lo) / n for (lo, hi), n in zip(bounds, divisions)]

    nx, ny, nz = divisions
    cells = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), -1).reshape(-1, 3)
    if domain.hole_bounds is not None:
        hole_idx = []
        for ax, (lo, hi) in enumerate(domain.hole_bounds):
            f_lo = (lo - bounds[ax, 0]) / steps[ax]
            f_hi = (hi - bounds[ax, 0]) / steps[ax]
            if abs(f_lo - round(f_lo)) > 1e-9 or abs(f_hi - round(f_hi)) > 1e-9:
                raise ValueError(
                    f"divisions {divisions} do not place grid planes on the hole boundary "
                    f"along axis {ax}"
                )
            hole_idx.append((round(f_lo), round(f_hi)))
        inside = np.ones(len(cells), dtype=bool)
        for ax, (lo, hi) in enumerate(hole_idx):
            inside &= (cells[:, ax] >= lo) & (cells[:, ax] < hi)
        cells = cells[~inside]

    def vid(ijk):
        return (ijk[..., 0] * (ny + 1) + ijk[..., 1]) * (nz + 1) + ijk[..., 2]

    paths = []
    for perm in itertools.permutations(range(3)):
        pts = [np.zeros(3, dtype=np.int64)]
        for ax in perm:
            nxt = pts[-1].copy()
            nxt[ax] = 1
            pts.append(nxt)
        paths.append(np.array(pts))
    paths = np.array(paths)  # (6, 4, 3)
    order = vid(cells[:, None, None, :] + paths[None]).reshape(-1, 4)

    used, order = np.unique(order, return_inverse=True)
    order = order.reshape(-1, 4)
    I, J, K = np.unravel_index(used, (nx + 1, ny + 1, nz + 1))
    vertices = np.stack([axes[0][I], axes[1][J], axes[2][K]], axis=1)
    tets = orient_positive(vertices, order)
    return Mesh(vertices, tets, order=order, tag=np.zeros(len(order), dtype=np.int64))


def diameters(mesh: Mesh):
    """Return ``(h_K per tet, h_F per face, h)`` as max vertex distances."""
    x = mesh.vertices
    ev = x[mesh.edges[:, 1]] - x[mesh.edges[:, 0]]
    elen = np.linalg.norm(ev, axis=1)
    hK = elen[mesh.tet_edges].max(axis=1)
    f = mesh.faces
    hF = np.max(
        [np.linalg.norm(x[f[:, i]] - x[f[:, j]], axis=1) for i, j in ((0, 1), (0, 2), (1, 2))],
        axis=0,
    )
    return hK, hF, float(hK.max()) if len(hK) else 0.0


@dataclass
class AuditReport:
    ok: bool
    message: str = "ok"

    def __bool__(self):
        return self.ok


def topology_audit(mesh: Mesh, vol_tol: float = 1e-14) -> AuditReport:
    """Check the mesh invariants; the report names the first violation."""
    hK, _, _ = diameters(mesh)
    vol = mesh.signed_volumes
    bad = np.flatnonzero(vol <= vol_tol * hK**3)
    if bad.size:
        return AuditReport(False, f"tet {bad[0]} has non-positive volume {vol[bad[0]]:.3e}")
    over = np.flatnonzero(mesh.face_count > 2)
    if over.size:
        f = over[0]
        return AuditReport(False, f"face {f} {mesh.faces[f].tolist()} shared by {mesh.face_count[f]} tets")
    if np.any(mesh.edges[:, 0] >= mesh.edges[:, 1]):
        return AuditReport(False, "edge stored with unsorted vertex ids")
    a = mesh.tets[:, LOCAL_EDGES[:, 0]]
    b = mesh.tets[:, LOCAL_EDGES[:, 1]]
    ge = mesh.edges[mesh.tet_edges]
    s = mesh.tet_edge_signs
    fwd = np.where(s > 0, ge[..., 0] == a, ge[..., 1] == a) & np.where(s > 0, ge[..., 1] == b, ge[..., 0] == b)
    if not fwd.all():
        t = np.argwhere(~fwd)[0]
        return AuditReport(False, f"edge orientation sign inconsistent in tet {t[0]}, local edge {t[1]}")
    bf = mesh.faces[mesh.boundary_face]
    on_bface = np.isin(mesh._edge_keys, np.concatenate(
        [edge_keys(bf[:, i], bf[:, j]) for i, j in ((0, 1), (0, 2), (1, 2))]))
    if not np.array_equal(on_bface, mesh.boundary_edge):
        return AuditReport(False, "boundary edge flags disagree with boundary faces")
    n_int = int(np.sum(mesh.face_count == 2))
    if 2 * n_int != 4 * mesh.n_tets - int(mesh.boundary_face.sum()):
        return AuditReport(False, "interior face count inconsistent with tet count")
    hang = _hanging_vertices(mesh)
    if hang.size:
        e = hang[0]
        return AuditReport(False, f"hanging vertex at the midpoint of edge {mesh.edges[e].tolist()}")
    return AuditReport(True)


def _hanging_vertices(mesh: Mesh):
    """Edges whose midpoint coincides with a mesh vertex."""
    x = mesh.vertices
    if len(x) == 0:
        return np.zeros(0, dtype=np.int64)
    lo = x.min(axis=0)
    scale = max(float(np.ptp(x, axis=0).max()), 1e-300)

    def lattice_keys(p):
        q = np.round((p - lo) / scale * 2**20).astype(np.int64)
        return (q[:, 0] * 2**21 + q[:, 1]) * 2**21 + q[:, 2]

    mid = 0.5 * (x[mesh.edges[:, 0]] + x[mesh.edges[:, 1]])
    return np.flatnonzero(np.isin(lattice_keys(mid), lattice_keys(x)))


def euler_characteristic(mesh: Mesh) -> int:
    return mesh.n_vertices - mesh.n_edges + mesh.n_faces - mesh.n_tets
