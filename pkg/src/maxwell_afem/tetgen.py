"""Reader for TetGen ``.node`` / ``.ele`` ASCII files."""

from pathlib import Path

import numpy as np

from .mesh import Mesh, orient_positive


class TetGenFormatError(ValueError):
    pass


def _records(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line.split()


def _parse_node(text):
    rows = _records(text)
    try:
        header = next(rows)
    except StopIteration:
        raise TetGenFormatError("empty .node file") from None
    if len(header) < 2:
        raise TetGenFormatError(f"malformed .node header: {' '.join(header)}")
    try:
        npts, dim = int(header[0]), int(header[1])
        nattr = int(header[2]) if len(header) > 2 else 0
        nmark = int(header[3]) if len(header) > 3 else 0
    except ValueError:
        raise TetGenFormatError(f"malformed .node header: {' '.join(header)}") from None
    if dim != 3:
        raise TetGenFormatError(f".node dimension must be 3, got {dim}")
    ids = np.empty(npts, dtype=np.int64)
    xyz = np.empty((npts, 3))
    for i in range(npts):
        try:
            rec = next(rows)
        except StopIteration:
            raise TetGenFormatError(f".node declares {npts} points, found {i}") from None
        if len(rec) < 4 + nattr + nmark:
            raise TetGenFormatError(f"short .node record: {' '.join(rec)}")
        try:
            ids[i] = int(rec[0])
            xyz[i] = [float(v) for v in rec[1:4]]
        except ValueError:
            raise TetGenFormatError(f"bad .node record: {' '.join(rec)}") from None
    return ids, xyz


def _parse_ele(text):
    rows = _records(text)
    try:
        header = next(rows)
        ntet, per = int(header[0]), int(header[1])
        nattr = int(header[2]) if len(header) > 2 else 0
    except (StopIteration, ValueError, IndexError):
        raise TetGenFormatError("malformed .ele header") from None
    if per != 4:
        raise TetGenFormatError(f"only 4-node tetrahedra are supported, got {per} nodes per tet")
    conn = np.empty((ntet, 4), dtype=np.int64)
    for i in range(ntet):
        try:
            rec = next(rows)
        except StopIteration:
            raise TetGenFormatError(f".ele declares {ntet} tets, found {i}") from None
        if len(rec) < 5 + nattr:
            raise TetGenFormatError(f"short .ele record: {' '.join(rec)}")
        try:
            conn[i] = [int(v) for v in rec[1:5]]
        except ValueError:
            raise TetGenFormatError(f"bad .ele record: {' '.join(rec)}") from None
    return conn


def import_tetgen(node_text: str, ele_text: str) -> Mesh:
    """Build a mesh from the contents of TetGen ``.node`` and ``.ele`` files.

    Node numbering may start at 0 or 1 (taken from the first node id).
    Tets with negative orientation are repaired by swapping two vertices.
    """
    ids, xyz = _parse_node(node_text)
    conn = _parse_ele(ele_text)
    base = int(ids[0]) if ids.size else 0
    if base not in (0, 1):
        raise TetGenFormatError(f"node ids must start at 0 or 1, got {base}")
    lookup = {int(v): i for i, v in enumerate(ids)}
    if len(lookup) != len(ids):
        raise TetGenFormatError("duplicate node ids")
    try:
        tets = np.vectorize(lookup.__getitem__, otypes=[np.int64])(conn) if conn.size else conn
    except KeyError as exc:
        raise TetGenFormatError(f"tet references unknown vertex id {exc.args[0]}") from None
    used = np.zeros(len(ids), dtype=bool)
    used[tets.ravel()] = True
    if not used.all():
        raise TetGenFormatError(f"{int((~used).sum())} vertices are not referenced by any tet")
    return Mesh(xyz, orient_positive(xyz, tets))


def read_tetgen(stem) -> Mesh:
    """Read ``<stem>.node`` and ``<stem>.ele``."""
    stem = Path(stem)
    if stem.suffix in (".node", ".ele"):
        stem = stem.with_suffix("")
    return import_tetgen(stem.with_suffix(".node").read_text(), stem.with_suffix(".ele").read_text())
