"""Marching cubes for binary occupancy with a topologically consistent table.

The 256-case table is generated rather than transcribed. On every cube face
the isoline crossings are paired the same way regardless of which of the two
neighbouring cubes is asking (inside corners on an ambiguous face are kept
apart, i.e. the foreground is 6-connected), so neighbouring cubes always
agree on the shared face segments and the surface closes. Face segments are
chained into loops inside each cube; a loop is fan-triangulated unless a fan
diagonal would lie in a cube face, in which case it is split around an extra
centroid vertex. Edge vertices sit at edge midpoints (the 0.5 level of a
binary field).
"""
from __future__ import annotations

import numpy as np

from ..errors import EmptyGrid
from ..volume import TriMesh, VoxelGrid

# corner c <-> (x, y, z) = (c & 1, c >> 1 & 1, c >> 2 & 1)
CORNERS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])
EDGES = [(a, a | (1 << ax)) for ax in range(3) for a in range(8) if not a & (1 << ax)]
EDGE_INDEX = {frozenset(e): i for i, e in enumerate(EDGES)}
EDGE_AXIS = np.array([int(np.log2(b - a)) for a, b in EDGES])
EDGE_ORIGIN = CORNERS[[a for a, _ in EDGES]]
EDGE_MID = EDGE_ORIGIN + 0.5 * np.eye(3)[EDGE_AXIS]


def _faces():
    """Corner cycles of the six faces, counterclockwise seen from outside."""
    faces = []
    for ax in range(3):
        for side in (0, 1):
            cs = [c for c in range(8) if CORNERS[c][ax] == side]
            normal = np.zeros(3)
            normal[ax] = 1.0 if side else -1.0
            u, v = [a for a in range(3) if a != ax]
            center = CORNERS[cs].mean(axis=0)
            ang = [np.arctan2(CORNERS[c][v] - center[v], CORNERS[c][u] - center[u]) for c in cs]
            cyc = [cs[i] for i in np.argsort(ang)]
            p = CORNERS[cyc].astype(float)
            if np.dot(np.cross(p[1] - p[0], p[2] - p[1]), normal) < 0:
                cyc = cyc[::-1]
            faces.append(cyc)
    return faces


FACES = _faces()
FACE_EDGES = [frozenset(EDGE_INDEX[frozenset((f[i], f[(i + 1) % 4]))] for i in range(4)) for f in FACES]


def _face_segments(case: int):
    inside = [(case >> c) & 1 for c in range(8)]
    segs = []
    for cyc in FACES:
        crossings = []
        for i in range(4):
            a, b = cyc[i], cyc[(i + 1) % 4]
            if inside[a] != inside[b]:
                crossings.append((EDGE_INDEX[frozenset((a, b))], "enter" if inside[b] else "leave"))
        # pair every entering crossing with the next leaving one along the cycle
        for i, (e, kind) in enumerate(crossings):
            if kind == "enter":
                nxt = crossings[(i + 1) % len(crossings)]
                segs.append((e, nxt[0]))
    return segs


def _loops(case: int):
    succ = dict(_face_segments(case))
    loops, seen = [], set()
    for start in sorted(succ):
        if start in seen:
            continue
        loop, e = [], start
        while e not in seen:
            seen.add(e)
            loop.append(e)
            e = succ[e]
        loops.append(loop)
    return loops


def _fan_is_safe(loop) -> bool:
    v0 = loop[0]
    for vi in loop[2:-1]:
        if any(v0 in fe and vi in fe for fe in FACE_EDGES):
            return False
    return True


def _build_table():
    """Per case: ``(triangles, loops)`` where triangle entries < 12 are edge
    ids and ``12 + j`` is the centroid of loop ``j``."""
    table = []
    for case in range(256):
        tris, centroid_loops = [], []
        for loop in _loops(case):
            if len(loop) == 3 or _fan_is_safe(loop):
                tris += [(loop[0], loop[i], loop[i + 1]) for i in range(1, len(loop) - 1)]
            else:
                cid = 12 + len(centroid_loops)
                centroid_loops.append(loop)
                tris += [(cid, loop[i], loop[(i + 1) % len(loop)]) for i in range(len(loop))]
        table.append((np.array(tris, dtype=np.int64).reshape(-1, 3), centroid_loops))
    return table


TABLE = _build_table()


def marching_cubes(grid: VoxelGrid | np.ndarray, spacing_mm=(1.0, 1.0, 1.0),
                   origin_mm=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed, outward-wound surface of the 0.5 level of a binary grid.

    Voxel centers sit at ``origin + index * spacing``; the grid is padded by
    one empty voxel on every side so solids touching the border still close.
    Vertices are ordered by their grid key, so the output depends only on the
    occupancy.

    Parameters
    ----------
    grid : VoxelGrid or (nz, ny, nx) bool array
    spacing_mm, origin_mm : used only for a bare array

    Raises
    ------
    EmptyGrid
    """
    if isinstance(grid, VoxelGrid):
        occ, spacing, origin = grid.occupancy, grid.spacing_mm, grid.origin_mm
    else:
        occ, spacing, origin = np.asarray(grid, dtype=bool), spacing_mm, origin_mm
    if occ.ndim != 3:
        raise ValueError("occupancy must be 3D")
    if not occ.any():
        raise EmptyGrid("grid has no occupied voxels")
    vol = np.pad(occ.transpose(2, 1, 0), 1).astype(np.uint8)  # [x, y, z]
    nx, ny, nz = vol.shape
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        case |= vol[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int64) << c
    active = np.flatnonzero((case != 0) & (case != 255))
    cases = case.ravel()[active]
    cube = np.column_stack(np.unravel_index(active, case.shape))
    n_grid = nx * ny * nz

    tris_all = []
    extra_keys, extra_pos = [], []
    for cs in np.unique(cases):
        tris, cloops = TABLE[cs]
        if not len(tris):
            continue
        sel = cube[cases == cs]
        cube_lin = np.ravel_multi_index(sel.T, case.shape)
        local = np.empty((len(sel), 12 + len(cloops)), dtype=np.int64)
        for e in range(12):
            g = sel + EDGE_ORIGIN[e]
            local[:, e] = EDGE_AXIS[e] * n_grid + np.ravel_multi_index(g.T, vol.shape)
        for j, loop in enumerate(cloops):
            k = 3 * n_grid + cube_lin * 4 + j
            local[:, 12 + j] = k
            extra_keys.append(k)
            extra_pos.append(sel + EDGE_MID[loop].mean(axis=0))
        tris_all.append(local[:, tris].reshape(-1, 3))
    tri_keys = np.concatenate(tris_all)
    uniq, inv = np.unique(tri_keys, return_inverse=True)
    triangles = inv.reshape(-1, 3)

    pos = np.empty((len(uniq), 3))
    is_edge = uniq < 3 * n_grid
    ek = uniq[is_edge]
    axis, lin = np.divmod(ek, n_grid)
    g = np.column_stack(np.unravel_index(lin, vol.shape)).astype(float)
    g[np.arange(len(g)), axis] += 0.5
    pos[is_edge] = g
    if extra_keys:
        ekeys = np.concatenate(extra_keys)
        epos = np.concatenate(extra_pos)
        order = np.argsort(ekeys)
        pos[~is_edge] = epos[order][np.searchsorted(ekeys[order], uniq[~is_edge])]
    verts = (pos - 1.0) * np.asarray(spacing, dtype=float) + np.asarray(origin, dtype=float)
    return TriMesh(verts, triangles.astype(np.int64))
