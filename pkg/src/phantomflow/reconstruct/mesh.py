"""Mesh measurements and file export/import (binary STL, OBJ, binary PLY)."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import EmptyMesh, InconsistentWinding, IoFailure
from ..volume import TriMesh

MESH_FORMATS = {"stl": ".stl", "obj": ".obj", "ply": ".ply"}


@dataclass(frozen=True)
class MeshStats:
    volume_mm3: float
    area_mm2: float
    watertight: bool
    euler_characteristic: int
    shell_count: int
    vertex_count: int
    triangle_count: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def signed_volume(m: TriMesh) -> float:
    """Enclosed volume by the divergence theorem (positive for outward winding)."""
    p = m.vertices[m.triangles]
    return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)


def surface_area(m: TriMesh) -> float:
    p = m.vertices[m.triangles]
    return float(np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1).sum() / 2.0)


def _edge_keys(t: np.ndarray, n: int):
    a = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    b = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    return a * n + b, b * n + a, np.minimum(a, b) * n + np.maximum(a, b)


def is_watertight(m: TriMesh) -> bool:
    """Every edge used exactly twice, once in each direction."""
    t = m.triangles
    if not len(t):
        return False
    directed, reverse, _ = _edge_keys(t, len(m.vertices))
    uniq, counts = np.unique(directed, return_counts=True)
    if np.any(counts != 1):
        return False
    return bool(np.all(np.isin(reverse, uniq, assume_unique=False)))


def shell_count(m: TriMesh) -> int:
    t = m.triangles
    if not len(t):
        return 0
    used = np.unique(t)
    n = len(m.vertices)
    rows = np.concatenate([t[:, 0], t[:, 1]])
    cols = np.concatenate([t[:, 1], t[:, 2]])
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, lab = connected_components(graph, directed=False)
    return int(len(np.unique(lab[used])))


def mesh_stats(m: TriMesh) -> MeshStats:
    """Volume, area, watertightness, Euler characteristic and shell count.

    Raises
    ------
    InconsistentWinding
        A watertight mesh encloses negative volume (inward-facing winding).
    """
    t = m.triangles
    n_v = int(len(np.unique(t))) if len(t) else 0
    n_e = int(len(np.unique(_edge_keys(t, len(m.vertices))[2]))) if len(t) else 0
    vol = signed_volume(m)
    tight = is_watertight(m)
    if tight and vol < 0:
        raise InconsistentWinding(f"watertight mesh has negative signed volume {vol:.6g}")
    return MeshStats(vol, surface_area(m), tight, n_v - n_e + len(t), shell_count(m), n_v, len(t))


def unit_cube() -> TriMesh:
    """Axis-aligned unit cube, 12 outward-wound triangles."""
    v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = [(a, b, c) for a, b, c, d in quads] + [(a, c, d) for a, b, c, d in quads]
    return TriMesh(v, np.array(tris))


def _format_of(path: Path, fmt) -> str:
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in MESH_FORMATS:
        raise ValueError(f"unknown mesh format {fmt!r}; expected one of {sorted(MESH_FORMATS)}")
    return fmt


def export_mesh(m: TriMesh, path, fmt: str | None = None) -> Path:
    """Write ``m`` as binary STL, OBJ or binary little-endian PLY.

    STL stores float32 coordinates and a per-facet unit normal; OBJ writes
    shortest round-trip decimal doubles; PLY stores float64 and int32.
    """
    if not len(m.triangles):
        raise EmptyMesh("mesh has no triangles")
    path = Path(path)
    fmt = _format_of(path, fmt)
    try:
        with open(path, "wb") as fh:
            if fmt == "stl":
                _write_stl(fh, m)
            elif fmt == "obj":
                _write_obj(fh, m)
            else:
                _write_ply(fh, m)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def import_mesh(path, fmt: str | None = None) -> TriMesh:
    path = Path(path)
    fmt = _format_of(path, fmt)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        if fmt == "stl":
            return _read_stl(data)
        if fmt == "obj":
            return _read_obj(data)
        return _read_ply(data)
    except (ValueError, struct.error, IndexError) as exc:
        raise IoFailure(f"malformed {fmt} file {path}: {exc}") from exc


_STL_DTYPE = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])


def _write_stl(fh, m: TriMesh):
    p = m.vertices[m.triangles]
    nrm = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    length = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = np.divide(nrm, length, out=np.zeros_like(nrm), where=length > 0)
    rec = np.zeros(len(p), dtype=_STL_DTYPE)
    rec["normal"] = nrm
    rec["v"] = p
    fh.write(b"phantomflow binary STL".ljust(80, b" "))
    fh.write(struct.pack("<I", len(p)))
    fh.write(rec.tobytes())


def _read_stl(data: bytes) -> TriMesh:
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * n:
        raise ValueError(f"size {len(data)} does not match {n} facets")
    rec = np.frombuffer(data, dtype=_STL_DTYPE, count=n, offset=84)
    flat = rec["v"].reshape(-1, 3).astype(np.float64)
    verts, inv = np.unique(flat, axis=0, return_inverse=True)
    return TriMesh(verts, inv.reshape(-1, 3))


def _write_obj(fh, m: TriMesh):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in m.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in m.triangles.tolist()]
    fh.write(("\n".join(lines) + "\n").encode("ascii"))


def _read_obj(data: bytes) -> TriMesh:
    verts, tris = [], []
    for line in data.decode("ascii").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(s) for s in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(s.split("/")[0]) - 1 for s in parts[1:4]])
    return TriMesh(np.array(verts, dtype=float), np.array(tris, dtype=np.int64))


def _ply_header(nv: int, nt: int) -> bytes:
    return ("ply\nformat binary_little_endian 1.0\n"
            f"element vertex {nv}\nproperty double x\nproperty double y\nproperty double z\n"
            f"element face {nt}\nproperty list uchar int vertex_indices\nend_header\n").encode("ascii")


_PLY_FACE = np.dtype([("n", "u1"), ("idx", "<i4", 3)])


def _write_ply(fh, m: TriMesh):
    fh.write(_ply_header(len(m.vertices), len(m.triangles)))
    fh.write(m.vertices.astype("<f8").tobytes())
    faces = np.zeros(len(m.triangles), dtype=_PLY_FACE)
    faces["n"] = 3
    faces["idx"] = m.triangles
    fh.write(faces.tobytes())


def _read_ply(data: bytes) -> TriMesh:
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").split("\n")
    if "format binary_little_endian 1.0" not in header:
        raise ValueError("only binary little-endian PLY written by this package is supported")
    nv = nt = None
    for line in header:
        if line.startswith("element vertex"):
            nv = int(line.split()[-1])
        elif line.startswith("element face"):
            nt = int(line.split()[-1])
    verts = np.frombuffer(data, dtype="<f8", count=3 * nv, offset=end).reshape(-1, 3)
    faces = np.frombuffer(data, dtype=_PLY_FACE, count=nt, offset=end + 24 * nv)
    if np.any(faces["n"] != 3):
        raise ValueError("non-triangular face")
    return TriMesh(verts.astype(np.float64), faces["idx"].astype(np.int64))
