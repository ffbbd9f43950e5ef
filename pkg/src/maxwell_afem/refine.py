"""Dörfler marking and conforming newest-vertex bisection of tetrahedra.

Each tet carries an ordered vertex tuple ``[x0, x1, x2, x3]`` and a type
``t`` in ``{0, 1, 2}``; its refinement edge is ``x0 -- x3``. Bisection at the
midpoint ``z`` produces

    [x0, z, x1, x2]   and   [x3, z, x1, x2]  (type 1 or 2)
                            [x3, z, x2, x1]  (type 0)

both of type ``(t + 1) % 3``. The structured generator supplies Kuhn path
orderings of type 0; with these, neighbours split shared faces the same way
and uniform refinement needs no closure.

Meshes without such a labelling (e.g. imported ones) use type ``-1``: every
tet and all its descendants are bisected at their longest edge, ranked
consistently across tets, which again splits shared faces identically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import LOCAL_EDGES, Mesh, edge_keys, longest_edge_order, orient_positive

log = logging.getLogger(__name__)


class RefinementError(RuntimeError):
    pass


@dataclass
class MarkSet:
    marked_tets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    theta: float = 0.5

    def __len__(self):
        return len(self.marked_tets)


def mark(indicators, theta: float = 0.5) -> MarkSet:
    """Dörfler bulk marking.

    Parameters
    ----------
    indicators : array_like or IndicatorField
        Per-tet indicators ``eta_K`` (not squared).
    theta : float
        Bulk fraction in ``(0, 1]``.

    Returns the smallest set of tets, taken in order of decreasing
    ``eta_K**2`` (ties by lower tet id), whose squared indicators sum to at
    least ``theta * eta**2``. All-zero indicators give an empty set.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    eta_K = np.asarray(getattr(indicators, "eta_K", indicators), dtype=float)
    sq = eta_K**2
    total = sq.sum()
    if total <= 0.0:
        return MarkSet(np.zeros(0, dtype=np.int64), theta)
    order = np.lexsort((np.arange(sq.size), -sq))
    csum = np.cumsum(sq[order])
    # relative slack keeps theta = 1 from failing on summation round-off
    need = theta * total * (1.0 - 1e-13)
    n = int(np.searchsorted(csum, need, side="left")) + 1
    if theta == 1.0:
        n = int(np.count_nonzero(sq > 0))
    return MarkSet(np.sort(order[:n]), theta)


def _bisect_once(vertices, order, tag, ancestor, which, split_keys, split_mid):
    """Bisect the tets flagged in ``which``; midpoints are reused when the
    refinement edge has been split before (``split_keys``/``split_mid`` sorted)."""
    sel = np.flatnonzero(which)
    o = order[sel]
    t = tag[sel]
    keys = edge_keys(o[:, 0], o[:, 3])
    ukeys, inv = np.unique(keys, return_inverse=True)
    pos = np.searchsorted(split_keys, ukeys)
    pos = np.minimum(pos, max(len(split_keys) - 1, 0))
    known = (split_keys[pos] == ukeys) if len(split_keys) else np.zeros(len(ukeys), dtype=bool)
    mid = np.empty(len(ukeys), dtype=np.int64)
    mid[known] = split_mid[pos[known]]
    new = np.flatnonzero(~known)
    nv = len(vertices)
    mid[new] = nv + np.arange(len(new))
    a, b = ukeys[new] // np.int64(2**31), ukeys[new] % np.int64(2**31)
    vertices = np.concatenate([vertices, 0.5 * (vertices[a] + vertices[b])])
    allk = np.concatenate([split_keys, ukeys[new]])
    allm = np.concatenate([split_mid, mid[new]])
    srt = np.argsort(allk)
    split_keys, split_mid = allk[srt], allm[srt]

    z = mid[inv.ravel()]
    c1 = np.stack([o[:, 0], z, o[:, 1], o[:, 2]], axis=1)
    c2 = np.stack([o[:, 3], z, o[:, 1], o[:, 2]], axis=1)
    t0 = t == 0
    c2[t0, 2], c2[t0, 3] = o[t0, 2], o[t0, 1]
    nt = np.where(t >= 0, (t + 1) % 3, -1)
    longest = t < 0
    if longest.any():
        c1[longest] = longest_edge_order(vertices, c1[longest])
        c2[longest] = longest_edge_order(vertices, c2[longest])

    keep = ~which
    order = np.concatenate([order[keep], c1, c2])
    tag = np.concatenate([tag[keep], nt, nt])
    ancestor = np.concatenate([ancestor[keep], ancestor[sel], ancestor[sel]])
    return vertices, order, tag, ancestor, split_keys, split_mid


def bisect(mesh: Mesh, marks, max_factor: int = 100) -> Mesh:
    """Bisect every marked tet once, then close the mesh conformingly.

    Tets that end up with a split edge (a hanging midpoint) are bisected at
    their own refinement edge until no hanging vertex remains. The returned
    mesh carries ``parent``: the index of the input tet each new tet lies in.
    """
    marked = np.asarray(getattr(marks, "marked_tets", marks), dtype=np.int64)
    T0 = mesh.n_tets
    if marked.size == 0:
        return Mesh(mesh.vertices, mesh.tets, mesh.order, mesh.tag, parent=np.arange(T0))
    which = np.zeros(T0, dtype=bool)
    which[marked] = True
    vertices = mesh.vertices.copy()
    order = np.array(mesh.order)
    tag = np.array(mesh.tag)
    ancestor = np.arange(T0)
    split_keys = np.zeros(0, dtype=np.int64)
    split_mid = np.zeros(0, dtype=np.int64)
    splits = 0
    limit = max_factor * T0
    while which.any():
        splits += int(which.sum())
        if splits > limit:
            raise RefinementError(f"non-terminating closure: more than {limit} bisections")
        vertices, order, tag, ancestor, split_keys, split_mid = _bisect_once(
            vertices, order, tag, ancestor, which, split_keys, split_mid)
        ek = edge_keys(order[:, LOCAL_EDGES[:, 0]], order[:, LOCAL_EDGES[:, 1]])
        which = np.isin(ek, split_keys).any(axis=1)
    # keep children of the same ancestor adjacent and in ancestor order
    srt = np.argsort(ancestor, kind="stable")
    order, tag, ancestor = order[srt], tag[srt], ancestor[srt]
    return Mesh(vertices, orient_positive(vertices, order), order, tag, parent=ancestor)


def uniform_refine(mesh: Mesh, rounds: int = 3) -> Mesh:
    """Bisect every tet ``rounds`` times (three rounds = 8 children per tet)."""
    parent = np.arange(mesh.n_tets)
    for _ in range(rounds):
        mesh = bisect(mesh, np.arange(mesh.n_tets))
        parent = parent[mesh.parent]
    return Mesh(mesh.vertices, mesh.tets, mesh.order, mesh.tag, parent=parent)
