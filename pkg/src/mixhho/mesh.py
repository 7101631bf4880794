"""Conforming triangular meshes, structured generators and newest-vertex bisection."""
from __future__ import annotations

import numpy as np

from .errors import LabelingError, OrientationError, StructureError

INTERIOR, DIRICHLET, NEUMANN = 0, 1, 2
_KIND_CODES = {"D": DIRICHLET, "dirichlet": DIRICHLET, "N": NEUMANN, "neumann": NEUMANN,
               DIRICHLET: DIRICHLET, NEUMANN: NEUMANN}


def _kind_code(label):
    try:
        return _KIND_CODES[label]
    except KeyError:
        raise LabelingError(f"unknown boundary label {label!r}") from None


def _edge_keys(pairs, nv):
    lo = np.minimum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    hi = np.maximum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    return lo * np.int64(nv) + hi


class Mesh:
    """Immutable conforming triangulation.

    Local edge ``e`` of a cell is opposite local vertex ``e`` and runs from
    vertex ``e+1`` to vertex ``e+2`` (counterclockwise).  ``faces[f] = (a, b)``
    is oriented like the local edge of its first incident cell, so that
    ``face_normals[f]`` is the outward normal of ``face_cells[f, 0]``; the
    first incident cell always has the smaller id.
    """

    def __init__(self, vertices, cells, regions, refine_edge, faces, face_cells, face_kind,
                 cell_faces, cell_face_sign):
        self.vertices = vertices
        self.cells = cells
        self.regions = regions
        self.refine_edge = refine_edge
        self.faces = faces
        self.face_cells = face_cells
        self.face_kind = face_kind
        self.cell_faces = cell_faces
        self.cell_face_sign = cell_face_sign

        t = vertices[faces[:, 1]] - vertices[faces[:, 0]]
        self.face_lengths = np.hypot(t[:, 0], t[:, 1])
        self.face_tangents = t / self.face_lengths[:, None]
        self.face_normals = np.column_stack([self.face_tangents[:, 1], -self.face_tangents[:, 0]])

        p = vertices[cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        self.cell_areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        self.cell_diameters = self.face_lengths[cell_faces].max(axis=1)
        self._vertex_cells = None
        for arr in (self.vertices, self.cells, self.regions, self.refine_edge, self.faces,
                    self.face_cells, self.face_kind, self.cell_faces, self.cell_face_sign,
                    self.face_lengths, self.face_tangents, self.face_normals, self.cell_areas,
                    self.cell_diameters):
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def interior_faces(self):
        return np.flatnonzero(self.face_kind == INTERIOR)

    @property
    def boundary_faces(self):
        return np.flatnonzero(self.face_kind != INTERIOR)

    @property
    def dirichlet_faces(self):
        return np.flatnonzero(self.face_kind == DIRICHLET)

    @property
    def neumann_faces(self):
        return np.flatnonzero(self.face_kind == NEUMANN)

    def cell_vertices(self, c):
        return self.vertices[self.cells[c]]

    def vertex_cells(self, v):
        """Cells sharing vertex ``v`` (the vertex star)."""
        if self._vertex_cells is None:
            flat = self.cells.ravel()
            order = np.argsort(flat, kind="stable")
            ptr = np.zeros(self.n_vertices + 1, dtype=np.int64)
            np.add.at(ptr, flat + 1, 1)
            self._vertex_cells = (np.cumsum(ptr), order // 3)
        ptr, idx = self._vertex_cells
        return idx[ptr[v]:ptr[v + 1]]

    def boundary_label_arrays(self):
        bf = self.boundary_faces
        return self.faces[bf].copy(), self.face_kind[bf].copy()

    def min_angle(self):
        p = self.vertices[self.cells]
        angles = []
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    def total_area(self):
        return float(self.cell_areas.sum())

    def local_face_index(self, cell, face):
        hit = np.flatnonzero(self.cell_faces[cell] == face)
        if len(hit) == 0:
            raise StructureError(f"face {face} is not a face of cell {cell}")
        return int(hit[0])

    def __repr__(self):
        return (f"Mesh(vertices={self.n_vertices}, cells={self.n_cells}, faces={self.n_faces}, "
                f"interior={len(self.interior_faces)}, boundary={len(self.boundary_faces)})")


def _longest_edge(vertices, cells):
    p = vertices[cells]
    lens = np.stack([np.linalg.norm(p[:, (e + 2) % 3] - p[:, (e + 1) % 3], axis=1) for e in range(3)], axis=1)
    best = lens.max(axis=1, keepdims=True)
    tie = lens >= best * (1.0 - 1e-12)
    # among tied edges pick the one whose opposite vertex id is smallest
    opp = np.where(tie, cells, np.iinfo(np.int64).max)
    return np.argmin(opp, axis=1)


def build_connectivity(vertices, triangles, boundary_labels="D", region_ids=None, refine_edge=None,
                       check_hanging=True):
    """Build a :class:`Mesh` from raw arrays.

    ``boundary_labels`` is either a single label applied to every boundary
    edge, a callable ``(midpoints (n, 2)) -> labels``, a mapping from vertex
    pairs to labels, or a ``(pairs, kinds)`` tuple of arrays.  Labels are
    ``"D"``/``"N"`` (or ``"dirichlet"``/``"neumann"``).
    """
    vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 2)
    cells = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
    nv, nc = len(vertices), len(cells)
    if nc == 0:
        raise StructureError("mesh has no cells")
    if not np.all(np.isfinite(vertices)):
        raise StructureError("non-finite vertex coordinates")
    if cells.min() < 0 or cells.max() >= nv:
        raise StructureError("triangle references an invalid vertex")
    if np.any((cells[:, 0] == cells[:, 1]) | (cells[:, 1] == cells[:, 2]) | (cells[:, 0] == cells[:, 2])):
        raise StructureError("triangle with repeated vertex")
    regions = np.zeros(nc, dtype=np.int64) if region_ids is None else np.asarray(region_ids, dtype=np.int64)
    if regions.shape != (nc,):
        raise StructureError("region_ids must have one entry per cell")

    p = vertices[cells]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(area2 <= 0.0):
        bad = np.flatnonzero(area2 <= 0.0)
        raise OrientationError(f"cells {bad[:10].tolist()} are not counterclockwise (non-positive area)")

    if refine_edge is None:
        refine_edge = _longest_edge(vertices, cells)
    refine_edge = np.asarray(refine_edge, dtype=np.int64)

    # directed local edges, row c*3+e
    starts = cells[:, [1, 2, 0]].ravel()
    ends = cells[:, [2, 0, 1]].ravel()
    keys = _edge_keys(np.column_stack([starts, ends]), nv)
    uniq, first, inverse, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        raise StructureError("an edge is shared by more than two triangles")
    nf = len(uniq)
    # faces numbered in order of first appearance (cell-major) for stable numbering
    order = np.argsort(first, kind="stable")
    renum = np.empty(nf, dtype=np.int64)
    renum[order] = np.arange(nf)
    local_face = renum[inverse]
    cell_faces = local_face.reshape(nc, 3)

    face_cells = np.full((nf, 2), -1, dtype=np.int64)
    owner_row = np.full(nf, -1, dtype=np.int64)
    rows = np.arange(3 * nc)
    cell_of_row = rows // 3
    # first incident cell = smallest cell id (rows are cell-major)
    sort_rows = np.lexsort((rows, local_face))
    lf_sorted = local_face[sort_rows]
    is_first = np.ones(len(sort_rows), dtype=bool)
    is_first[1:] = lf_sorted[1:] != lf_sorted[:-1]
    firsts = sort_rows[is_first]
    seconds = sort_rows[~is_first]
    owner_row[local_face[firsts]] = firsts
    face_cells[local_face[firsts], 0] = cell_of_row[firsts]
    face_cells[local_face[seconds], 1] = cell_of_row[seconds]

    faces = np.column_stack([starts[owner_row], ends[owner_row]])
    sign = np.where(np.isin(rows, firsts), 1, -1).reshape(nc, 3)
    if len(seconds):
        f2 = local_face[seconds]
        if np.any(starts[seconds] != faces[f2, 1]) or np.any(ends[seconds] != faces[f2, 0]):
            raise StructureError("neighbouring triangles traverse a shared edge in the same direction "
                                 "(overlapping or inconsistently oriented cells)")

    face_kind = np.zeros(nf, dtype=np.int64)
    bnd = np.flatnonzero(face_cells[:, 1] < 0)
    if len(bnd):
        face_kind[bnd] = _resolve_labels(boundary_labels, vertices, faces[bnd], nv)
        if check_hanging:
            _check_hanging(vertices, faces[bnd])

    return Mesh(vertices, cells, regions, refine_edge, faces, face_cells, face_kind, cell_faces, sign)


def _resolve_labels(labels, vertices, pairs, nv):
    n = len(pairs)
    if isinstance(labels, str) or isinstance(labels, (int, np.integer)):
        return np.full(n, _kind_code(labels), dtype=np.int64)
    if callable(labels):
        mid = 0.5 * (vertices[pairs[:, 0]] + vertices[pairs[:, 1]])
        out = labels(mid)
        if isinstance(out, str):
            return np.full(n, _kind_code(out), dtype=np.int64)
        return np.array([_kind_code(x) for x in out], dtype=np.int64)
    if isinstance(labels, dict):
        lab_pairs = np.array(list(labels.keys()), dtype=np.int64).reshape(-1, 2)
        lab_kinds = np.array([_kind_code(x) for x in labels.values()], dtype=np.int64)
    else:
        lab_pairs, lab_kinds = labels
        lab_pairs = np.asarray(lab_pairs, dtype=np.int64).reshape(-1, 2)
        lab_kinds = np.array([_kind_code(int(x) if isinstance(x, (np.integer,)) else x) for x in lab_kinds],
                             dtype=np.int64)
    lab_keys = _edge_keys(lab_pairs, nv)
    order = np.argsort(lab_keys)
    lab_keys, lab_kinds = lab_keys[order], lab_kinds[order]
    keys = _edge_keys(pairs, nv)
    pos = np.searchsorted(lab_keys, keys)
    pos = np.minimum(pos, max(len(lab_keys) - 1, 0))
    found = (len(lab_keys) > 0) & (lab_keys[pos] == keys) if len(lab_keys) else np.zeros(n, dtype=bool)
    if not np.all(found):
        missing = pairs[~found][:5].tolist()
        raise LabelingError(f"boundary edges without a label (or hanging vertices): {missing}")
    return lab_kinds[pos]


def _check_hanging(vertices, pairs, chunk=512):
    bverts = np.unique(pairs)
    q = vertices[bverts]
    for s in range(0, len(pairs), chunk):
        pr = pairs[s:s + chunk]
        a = vertices[pr[:, 0]]
        d = vertices[pr[:, 1]] - a
        L2 = np.einsum("ij,ij->i", d, d)
        rel = q[None, :, :] - a[:, None, :]
        t = np.einsum("eij,ej->ei", rel, d) / L2[:, None]
        cross = rel[:, :, 0] * d[:, None, 1] - rel[:, :, 1] * d[:, None, 0]
        on = (np.abs(cross) <= 1e-12 * L2[:, None]) & (t > 1e-12) & (t < 1 - 1e-12)
        if np.any(on):
            e, v = np.argwhere(on)[0]
            raise StructureError(f"hanging vertex {bverts[v]} on edge {pr[e].tolist()}")


# ---------------------------------------------------------------------------
# generators


def _grid(x0, x1, y0, y1, nx, ny):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), xs, ys


def generate_structured_mesh(domain, n, boundary_labels="D"):
    """Structured right-triangle meshes of the benchmark domains.

    ``square``/``kellogg_square``: (-1, 1)^2 with ``n`` subdivisions per side
    (2 n^2 cells).  ``lshape``: (-1, 1)^2 minus (0, 1) x (-1, 0) where ``n``
    counts subdivisions per unit length, i.e. per quadrant side (6 n^2 cells).
    Region ids of ``kellogg_square`` are 1 where xy >= 0 and 0 otherwise.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if domain in ("square", "kellogg_square"):
        if domain == "kellogg_square" and n % 2:
            raise ValueError("kellogg_square needs an even n so cells do not straddle the axes")
        m = n
        keep = lambda cx, cy: True  # noqa: E731
    elif domain == "lshape":
        m = 2 * n
        keep = lambda cx, cy: not (cx > 0 and cy < 0)  # noqa: E731
    else:
        raise ValueError(f"unknown domain {domain!r}")

    pts, xs, ys = _grid(-1.0, 1.0, -1.0, 1.0, m, m)
    vid = lambda i, j: i * (m + 1) + j  # noqa: E731
    tris = []
    for i in range(m):
        for j in range(m):
            cx, cy = 0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])
            if not keep(cx, cy):
                continue
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris, dtype=np.int64)
    used = np.unique(tris)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    pts = pts[used]
    tris = remap[tris]
    regions = None
    if domain == "kellogg_square":
        cen = pts[tris].mean(axis=1)
        regions = (cen[:, 0] * cen[:, 1] >= 0).astype(np.int64)
    return build_connectivity(pts, tris, boundary_labels, regions)


# ---------------------------------------------------------------------------
# newest-vertex bisection


def refine_nvb(mesh, marked):
    """Newest-vertex bisection of the marked cells plus conformity closure.

    Each cell is bisected across its refinement edge (local edge
    ``refine_edge``); the new vertex becomes the peak of both children.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_cells:
        raise StructureError("marked cell id out of range")

    nc = mesh.n_cells
    # rotate so the refinement edge is local edge 0: (peak, v1, v2)
    roll = mesh.refine_edge
    idx = (np.arange(3)[None, :] + roll[:, None]) % 3
    cells = np.take_along_axis(mesh.cells, idx, axis=1)
    cfaces = np.take_along_axis(mesh.cell_faces, idx, axis=1)

    mark_face = np.zeros(mesh.n_faces, dtype=bool)
    mark_face[cfaces[marked, 0]] = True
    while True:
        has = mark_face[cfaces].any(axis=1)
        need = has & ~mark_face[cfaces[:, 0]]
        if not need.any():
            break
        mark_face[cfaces[need, 0]] = True

    mfaces = np.flatnonzero(mark_face)
    nv = mesh.n_vertices
    mid_id = -np.ones(mesh.n_faces, dtype=np.int64)
    mid_id[mfaces] = nv + np.arange(len(mfaces))
    fv = mesh.faces[mfaces]
    new_pts = 0.5 * (mesh.vertices[fv[:, 0]] + mesh.vertices[fv[:, 1]])
    vertices = np.vstack([mesh.vertices, new_pts])

    bis = mark_face[cfaces[:, 0]]
    out_cells = [cells[~bis]]
    out_regions = [mesh.regions[~bis]]
    c = cells[bis]
    f = cfaces[bis]
    reg = mesh.regions[bis]
    v0, v1, v2 = c[:, 0], c[:, 1], c[:, 2]
    m = mid_id[f[:, 0]]
    # child A = (m, v0, v1) refines across v0-v1 (parent edge 2)
    # child B = (m, v2, v0) refines across v2-v0 (parent edge 1)
    split_a = mark_face[f[:, 2]]
    split_b = mark_face[f[:, 1]]
    ma = mid_id[f[:, 2]]
    mb = mid_id[f[:, 1]]
    na = ~split_a
    out_cells.append(np.column_stack([m[na], v0[na], v1[na]]))
    out_regions.append(reg[na])
    out_cells.append(np.column_stack([ma[split_a], m[split_a], v0[split_a]]))
    out_regions.append(reg[split_a])
    out_cells.append(np.column_stack([ma[split_a], v1[split_a], m[split_a]]))
    out_regions.append(reg[split_a])
    nb = ~split_b
    out_cells.append(np.column_stack([m[nb], v2[nb], v0[nb]]))
    out_regions.append(reg[nb])
    out_cells.append(np.column_stack([mb[split_b], m[split_b], v2[split_b]]))
    out_regions.append(reg[split_b])
    out_cells.append(np.column_stack([mb[split_b], v0[split_b], m[split_b]]))
    out_regions.append(reg[split_b])

    new_cells = np.vstack(out_cells)
    new_regions = np.concatenate(out_regions)
    n_keep = int((~bis).sum())
    refine_edge = np.zeros(len(new_cells), dtype=np.int64)
    refine_edge[:n_keep] = 0  # kept cells were rotated to local edge 0

    bpairs, bkinds = mesh.boundary_label_arrays()
    bfaces = mesh.boundary_faces
    split = mark_face[bfaces]
    mids = mid_id[bfaces[split]]
    lab_pairs = np.vstack([bpairs[~split],
                           np.column_stack([bpairs[split, 0], mids]),
                           np.column_stack([mids, bpairs[split, 1]])])
    lab_kinds = np.concatenate([bkinds[~split], bkinds[split], bkinds[split]])
    return build_connectivity(vertices, new_cells, (lab_pairs, lab_kinds), new_regions,
                              refine_edge=refine_edge, check_hanging=False)


def refine_uniform(mesh):
    """Two rounds of bisection of every cell (each cell split into four)."""
    mesh = refine_nvb(mesh, np.arange(mesh.n_cells))
    return refine_nvb(mesh, np.arange(mesh.n_cells))


# ---------------------------------------------------------------------------
# ASCII format


def read_mesh(path):
    """Read ``nv nc nb`` / vertices / ``v0 v1 v2 region`` / ``va vb D|N``."""
    tokens = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.append(line.split())
    try:
        nv, nc, nb = (int(x) for x in tokens[0])
        body = tokens[1:]
        verts = np.array([[float(a), float(b)] for a, b in body[:nv]])
        tri = body[nv:nv + nc]
        cells = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in tri], dtype=np.int64)
        regions = np.array([int(r[3]) for r in tri], dtype=np.int64)
        bl = body[nv + nc:nv + nc + nb]
        labels = {(int(r[0]), int(r[1])): r[2] for r in bl}
        if len(verts) != nv or len(cells) != nc or len(bl) != nb:
            raise ValueError("truncated file")
    except (ValueError, IndexError) as exc:
        raise ValueError(f"invalid mesh file {path}: {exc}") from exc
    return build_connectivity(verts, cells, labels, regions)


def write_mesh(mesh, path):
    bpairs, bkinds = mesh.boundary_label_arrays()
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_cells} {len(bpairs)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for (a, b, c), r in zip(mesh.cells, mesh.regions):
            fh.write(f"{a} {b} {c} {r}\n")
        for (a, b), k in zip(bpairs, bkinds):
            fh.write(f"{a} {b} {'D' if k == DIRICHLET else 'N'}\n")
