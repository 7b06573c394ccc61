"""Triangle and tetrahedral meshes: MEDIT I/O, boundary extraction, normals, ordering."""

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np


class MeshFormatError(ValueError):
    pass


class MeshTopologyError(ValueError):
    pass


class VertexClass(IntEnum):
    INTERIOR = 0
    SMOOTH = 1
    CREASE = 2


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


def unique_edges(cells):
    """Sorted unique undirected edges of a cell array (triangles or tets)."""
    cells = np.asarray(cells)
    k = cells.shape[1]
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    e = np.concatenate([cells[:, [i, j]] for i, j in pairs])
    e.sort(axis=1)
    return np.unique(e, axis=0)


@dataclass(frozen=True, eq=False)
class TriMesh2:
    """Planar triangulation with per-boundary-vertex normal angles.

    ``boundary_angles[i]`` is the frame angle of the outward normal at boundary
    vertex ``i`` (NaN for interior vertices). Triangles are counter-clockwise.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    boundary_angles: np.ndarray = field(repr=False)
    boundary_edges: np.ndarray = field(repr=False)

    @property
    def n_v(self):
        return len(self.vertices)


@dataclass(frozen=True, eq=False)
class TetMesh:
    vertices: np.ndarray
    tets: np.ndarray
    edges: np.ndarray = field(repr=False)
    boundary_triangles: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)

    @property
    def n_v(self):
        return len(self.vertices)

    @property
    def n_l(self):
        return int(self.boundary.sum())

    def triangles(self):
        """Unique triangles of all tets (sorted vertex triples) and the tet -> face map."""
        faces = np.concatenate([self.tets[:, [1, 2, 3]], self.tets[:, [0, 2, 3]],
                                self.tets[:, [0, 1, 3]], self.tets[:, [0, 1, 2]]])
        faces = np.sort(faces, axis=1)
        uniq, inv = np.unique(faces, axis=0, return_inverse=True)
        return uniq, inv.reshape(4, -1).T


@dataclass(frozen=True)
class VertexNormal:
    vertex: int
    normal: np.ndarray
    crease: tuple = None  # (n1, n2), orthonormal, for non-smooth vertices

    @property
    def is_crease(self):
        return self.crease is not None


def tet_volumes(vertices, tets):
    p = vertices[tets]
    return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6


def tet_mesh_from_arrays(vertices, tets):
    """Build an indexed tet mesh; negatively oriented tets are flipped."""
    vertices = np.asarray(vertices, dtype=float)
    tets = np.array(tets, dtype=np.int64)
    if len(vertices) == 0 or len(tets) == 0:
        raise MeshTopologyError("empty mesh")
    if vertices.ndim != 2 or vertices.shape[1] != 3 or tets.ndim != 2 or tets.shape[1] != 4:
        raise MeshTopologyError("expected (n, 3) vertices and (m, 4) tets")
    bad = (tets < 0) | (tets >= len(vertices))
    if bad.any():
        t = int(np.nonzero(bad.any(axis=1))[0][0])
        raise MeshTopologyError(f"tet {t} references vertex outside [0, {len(vertices)})")
    neg = tet_volumes(vertices, tets) < 0
    tets[neg] = tets[neg][:, [1, 0, 2, 3]]
    # outward-oriented faces of a positive tet
    faces = np.concatenate([tets[:, [1, 2, 3]], tets[:, [0, 3, 2]],
                            tets[:, [0, 1, 3]], tets[:, [0, 2, 1]]])
    _, idx, counts = np.unique(np.sort(faces, axis=1), axis=0, return_index=True, return_counts=True)
    btri = faces[np.sort(idx[counts == 1])]
    boundary = np.zeros(len(vertices), dtype=bool)
    boundary[btri.ravel()] = True
    return TetMesh(_frozen(vertices, float), _frozen(tets, np.int64),
                   _frozen(unique_edges(tets), np.int64), _frozen(btri, np.int64),
                   _frozen(boundary, bool))


def tri_mesh_from_arrays(vertices, triangles):
    """Build an indexed planar mesh, orienting triangles CCW and computing boundary angles."""
    vertices = np.asarray(vertices, dtype=float)[:, :2]
    tris = np.array(triangles, dtype=np.int64)
    if len(vertices) == 0 or len(tris) == 0:
        raise MeshTopologyError("empty mesh")
    if ((tris < 0) | (tris >= len(vertices))).any():
        raise MeshTopologyError(f"triangle references vertex outside [0, {len(vertices)})")
    p = vertices[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    tris[area < 0] = tris[area < 0][:, [1, 0, 2]]
    half = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    _, idx, counts = np.unique(np.sort(half, axis=1), axis=0, return_index=True, return_counts=True)
    bedges = half[np.sort(idx[counts == 1])]
    boundary = np.zeros(len(vertices), dtype=bool)
    boundary[bedges.ravel()] = True
    angles = boundary_normal_angles(vertices, bedges)
    return TriMesh2(_frozen(vertices, float), _frozen(tris, np.int64),
                    _frozen(unique_edges(tris), np.int64), _frozen(boundary, bool),
                    _frozen(angles, float), _frozen(bedges, np.int64))


def boundary_normal_angles(vertices, bedges):
    """Frame angle of the outward normal at each boundary vertex.

    Edge normals are length-weighted and averaged in the 4-fold representation
    ``(cos 4t, sin 4t)`` so that corners between orthogonal edges keep both
    normals as frame members. Falls back to the plain averaged normal when the
    representations cancel.
    """
    d = vertices[bedges[:, 1]] - vertices[bedges[:, 0]]
    length = np.linalg.norm(d, axis=1)[:, None]
    phi = np.arctan2(-d[:, 0], d[:, 1])  # outward normal (dy, -dx) of a CCW boundary
    rep = length * np.stack([np.cos(4 * phi), np.sin(4 * phi)], axis=1)
    nrm = length * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    n = len(vertices)
    acc_rep = np.zeros((n, 2))
    acc_n = np.zeros((n, 2))
    for k in (0, 1):
        np.add.at(acc_rep, bedges[:, k], rep)
        np.add.at(acc_n, bedges[:, k], nrm)
    out = np.full(n, np.nan)
    on = np.zeros(n, dtype=bool)
    on[bedges.ravel()] = True
    strong = on & (np.linalg.norm(acc_rep, axis=1) > 1e-9)
    out[strong] = np.mod(np.arctan2(acc_rep[strong, 1], acc_rep[strong, 0]) / 4, np.pi / 2)
    weak = on & ~strong
    out[weak] = np.mod(np.arctan2(acc_n[weak, 1], acc_n[weak, 0]), np.pi / 2)
    out[out >= np.pi / 2] = 0.0
    return out


# --- MEDIT ASCII ---------------------------------------------------------------

_SECTIONS = {"vertices": None, "tetrahedra": 4, "triangles": 3, "edges": 2, "corners": 1,
             "requiredvertices": 1, "ridges": 1, "quadrilaterals": 4, "hexahedra": 8}


def read_medit(path):
    """Parse an ASCII MEDIT file into a dict of arrays (1-based indices -> 0-based)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot open {path}: {exc.strerror}") from exc
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    out = {"dimension": 3}
    pos = 0

    def take(count):
        nonlocal pos
        if pos + count > len(tokens):
            raise MeshFormatError(f"{path}: unexpected end of file")
        chunk = tokens[pos:pos + count]
        pos += count
        return chunk

    while pos < len(tokens):
        key = tokens[pos].lower()
        pos += 1
        if key == "end":
            break
        if key == "meshversionformatted":
            take(1)
        elif key == "dimension":
            out["dimension"] = int(take(1)[0])
        elif key in _SECTIONS:
            try:
                count = int(take(1)[0])
            except ValueError:
                raise MeshFormatError(f"{path}: bad count after {tokens[pos - 2]}") from None
            width = (out["dimension"] if key == "vertices" else _SECTIONS[key]) + 1
            try:
                rec = np.array(take(count * width), dtype=float).reshape(count, width)
            except ValueError:
                raise MeshFormatError(f"{path}: non-numeric record in {key}") from None
            if key == "vertices":
                out[key] = rec[:, :-1]
            else:
                idx = rec[:, :-1]
                if not np.all(idx == np.round(idx)):
                    raise MeshFormatError(f"{path}: non-integer index in {key}")
                out[key] = idx.astype(np.int64) - 1
        else:
            raise MeshFormatError(f"{path}: unknown keyword {tokens[pos - 1]!r}")
    if "vertices" not in out:
        raise MeshFormatError(f"{path}: no Vertices section")
    return out


def load_tet_mesh(path):
    data = read_medit(path)
    if data["dimension"] != 3:
        raise MeshFormatError(f"{path}: expected Dimension 3")
    if "tetrahedra" not in data or len(data["tetrahedra"]) == 0:
        raise MeshTopologyError(f"{path}: empty mesh (no tetrahedra)")
    return tet_mesh_from_arrays(data["vertices"], data["tetrahedra"])


def load_tri_mesh(path):
    data = read_medit(path)
    if "triangles" not in data or len(data["triangles"]) == 0:
        raise MeshTopologyError(f"{path}: empty mesh (no triangles)")
    return tri_mesh_from_arrays(data["vertices"], data["triangles"])


def save_medit(path, mesh):
    """Write a TetMesh or TriMesh2 as ASCII MEDIT."""
    is_tet = isinstance(mesh, TetMesh)
    dim = 3 if is_tet else 2
    lines = ["MeshVersionFormatted 1", f"Dimension {dim}", "Vertices", str(mesh.n_v)]
    lines += [" ".join(f"{x:.17g}" for x in v) + " 0" for v in mesh.vertices]
    cells, name = (mesh.tets, "Tetrahedra") if is_tet else (mesh.triangles, "Triangles")
    lines += [name, str(len(cells))]
    lines += [" ".join(str(i + 1) for i in c) + " 0" for c in cells]
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


# --- ordering ------------------------------------------------------------------

def hilbert_keys(points, bits=10):
    """Hilbert-curve index of points (2D or 3D) quantized on a 2^bits grid."""
    pts = np.asarray(points, dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    X = np.minimum(((pts - lo) / span * (2 ** bits)).astype(np.int64), 2 ** bits - 1)
    n = X.shape[1]
    X = X.copy()
    # Skilling's transpose algorithm, vectorized over points
    M = 1 << (bits - 1)
    Q = M
    while Q > 1:
        P = Q - 1
        for i in range(n):
            hit = (X[:, i] & Q) != 0
            X[hit, 0] ^= P
            t = (X[~hit, 0] ^ X[~hit, i]) & P
            X[~hit, 0] ^= t
            X[~hit, i] ^= t
        Q >>= 1
    for i in range(1, n):
        X[:, i] ^= X[:, i - 1]
    t = np.zeros(len(X), dtype=np.int64)
    Q = M
    while Q > 1:
        hit = (X[:, n - 1] & Q) != 0
        t[hit] ^= Q - 1
        Q >>= 1
    X ^= t[:, None]
    key = np.zeros(len(X), dtype=np.int64)
    for b in range(bits - 1, -1, -1):
        for i in range(n):
            key = (key << 1) | ((X[:, i] >> b) & 1)
    return key


def reorder_boundary_first(mesh, hilbert=False):
    """Permute vertices so boundary vertices come first.

    Returns ``(new_mesh, perm)`` with ``perm[new] = old``. Order inside each
    block is stable, or Hilbert-sorted when ``hilbert`` is set.
    """
    idx = np.arange(mesh.n_v)
    blocks = [idx[mesh.boundary], idx[~mesh.boundary]]
    if hilbert:
        blocks = [b[np.argsort(hilbert_keys(mesh.vertices[b]), kind="stable")] if len(b) else b
                  for b in blocks]
    perm = np.concatenate(blocks)
    inv = np.empty_like(perm)
    inv[perm] = idx
    if isinstance(mesh, TetMesh):
        return tet_mesh_from_arrays(mesh.vertices[perm], inv[mesh.tets]), perm
    return tri_mesh_from_arrays(mesh.vertices[perm], inv[mesh.triangles]), perm


# --- normals -------------------------------------------------------------------

def _orthogonalize(m1, m2):
    """Rotate two unit vectors about their cross product until orthogonal (symmetric)."""
    u = m1 + m2
    w = m1 - m2
    u /= np.linalg.norm(u)
    w /= np.linalg.norm(w)
    return (u + w) / np.sqrt(2), (u - w) / np.sqrt(2)


def estimate_vertex_normals(mesh, crease_threshold=np.radians(45.0)):
    """Normals of all boundary vertices of a tet mesh.

    Smooth vertices get the area-weighted mean of incident boundary-triangle
    normals. When incident normals spread over more than ``crease_threshold``
    the vertex is a crease: the most orthogonal pair of triangle normals seeds
    two clusters, each cluster is averaged, and the pair is made orthogonal.
    """
    V = mesh.vertices
    T = mesh.boundary_triangles
    p = V[T]
    area_vec = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]) / 2
    area = np.linalg.norm(area_vec, axis=1)
    good = area > 1e-14 * max(1.0, float(np.abs(V).max()) ** 2)
    unit = np.zeros_like(area_vec)
    unit[good] = area_vec[good] / area[good, None]

    order = np.argsort(T.ravel(), kind="stable")
    tri_of = np.repeat(np.arange(len(T)), 3)[order]
    verts_sorted = T.ravel()[order]
    starts = np.searchsorted(verts_sorted, np.arange(mesh.n_v))
    ends = np.searchsorted(verts_sorted, np.arange(mesh.n_v), side="right")
    cos_thr = np.cos(crease_threshold)

    out = []
    for v in np.nonzero(mesh.boundary)[0]:
        tris = tri_of[starts[v]:ends[v]]
        tris = tris[good[tris]]
        if len(tris) == 0:
            raise ValueError(f"vertex {v}: all incident boundary triangles are degenerate")
        N = unit[tris]
        G = N @ N.T
        if G.min() >= cos_thr - 1e-12:
            s = area_vec[tris].sum(axis=0)
            norm = np.linalg.norm(s)
            if norm < 1e-14:
                raise ValueError(f"vertex {v}: zero aggregate normal")
            out.append(VertexNormal(int(v), s / norm))
            continue
        a, b = np.unravel_index(np.argmin(np.abs(G) + np.eye(len(N)) * 10), G.shape)
        a, b = min(a, b), max(a, b)
        c1 = np.zeros(3)
        c2 = np.zeros(3)
        for t, n in zip(tris, N):
            d1, d2 = n @ N[a], n @ N[b]
            if d1 >= d2 and d1 >= cos_thr:
                c1 += area_vec[t]
            elif d2 > d1 and d2 >= cos_thr:
                c2 += area_vec[t]
        c1 /= np.linalg.norm(c1)
        c2 /= np.linalg.norm(c2)
        n1, n2 = _orthogonalize(c1, c2)
        s = area_vec[tris].sum(axis=0)
        norm = np.linalg.norm(s)
        mean = s / norm if norm > 1e-14 else n1
        out.append(VertexNormal(int(v), mean, (n1, n2)))
    return out


def classify_vertices(mesh, normals):
    cls = np.full(mesh.n_v, VertexClass.INTERIOR, dtype=np.int64)
    for vn in normals:
        cls[vn.vertex] = VertexClass.CREASE if vn.is_crease else VertexClass.SMOOTH
    return cls


def fill_from_neighbours(values, missing, edges):
    """Copy values along edges into ``missing`` entries until none are left."""
    values = values.copy()
    missing = missing.copy()
    while missing.any():
        i, j = edges[:, 0], edges[:, 1]
        take_j = missing[i] & ~missing[j]
        take_i = missing[j] & ~missing[i]
        if not (take_j.any() or take_i.any()):
            raise ValueError("vertices without data are not connected to any vertex with data")
        src = np.concatenate([j[take_j], i[take_i]])
        dst = np.concatenate([i[take_j], j[take_i]])
        dst, first = np.unique(dst, return_index=True)
        values[dst] = values[src[first]]
        missing[dst] = False
    return values


def box_tet_mesh(shape=(4, 4, 4), extent=(1.0, 1.0, 1.0)):
    """Axis-aligned box split into ``6 * nx * ny * nz`` tets (Kuhn subdivision)."""
    nx, ny, nz = shape
    g = np.stack(np.meshgrid(*(np.linspace(0, e, k + 1) for e, k in zip(extent, shape)),
                             indexing="ij"), axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = (x.ravel() for x in np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"))
    corner = {(a, b, c): vid(I + a, J + b, K + c) for a in (0, 1) for b in (0, 1) for c in (0, 1)}
    tets = []
    # every tet walks 000 -> 111 along one permutation of the axes
    for order in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        p = [0, 0, 0]
        path = [corner[tuple(p)]]
        for ax in order:
            p[ax] = 1
            path.append(corner[tuple(p)])
        tets.append(np.stack(path, axis=1))
    return tet_mesh_from_arrays(g, np.concatenate(tets))
