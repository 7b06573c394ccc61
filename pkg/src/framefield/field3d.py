"""Volumetric frame fields on tet meshes in the degree-4 harmonic representation.

Unknowns are laid out as ``9 n_v + 2 n_l + 3 n_v`` columns: the 9 coefficients
of every vertex, two boundary rotation variables ``c`` per constrained vertex,
and three tangent coordinates per vertex used by the smoothing iterations.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import sh
from .lsq import LsqSystem
from .mesh import estimate_vertex_normals, fill_from_neighbours, reorder_boundary_first
from .report import FieldReport

log = logging.getLogger(__name__)

LAMBDA = 100.0
SQ712 = np.sqrt(7 / 12)
DEVIATION_BOUND = 2 * SQ712


def col_a(i, d):
    return 9 * i + d


def col_c(n_v, i, d):
    return 9 * n_v + 2 * i + d


def col_t(n_v, n_l, i, k):
    return 9 * n_v + 2 * n_l + 3 * i + k


def n_columns(n_v, n_l):
    return 9 * n_v + 2 * n_l + 3 * n_v


# --- projection ------------------------------------------------------------------

@dataclass
class ProjectionStats:
    steps: np.ndarray
    converged: np.ndarray

    @property
    def mean_steps(self):
        return float(self.steps.mean()) if len(self.steps) else 0.0


def closest_frames(Q, step=0.1, eps=1e-4, max_steps=1000, method="newton", restart_below=0.95):
    """Project raw coefficient vectors (m, 9) onto the feasible set.

    Ascent on the correlation ``q . a`` over rotations, starting from the
    reference frame. ``method="gradient"`` rotates by ``step`` times the
    generator gradient; ``method="newton"`` (default) takes regularized Newton
    steps on the same gradient and reaches a tight optimum in a few steps. In
    both, a step that lowers the correlation is rejected and that vertex's
    step scale halved; ``eps`` bounds the gradient norm at convergence.

    Vectors far from the feasible set (normalized correlation below
    ``restart_below``) can have several local maxima; they are re-run from the
    60 icosahedral rotations and the best result is kept, so the projection
    depends much less on the orientation of the input. Coefficients are
    finally recomputed from the re-orthonormalized frame.

    Returns ``(R, a, stats)`` with frames (m, 3, 3) and coefficients (m, 9).
    """
    if method not in ("gradient", "newton"):
        raise ValueError(f"unknown projection method {method!r}")
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    norm = np.linalg.norm(Q, axis=1)
    if np.any(norm <= 1e-9):
        bad = int(np.nonzero(norm <= 1e-9)[0][0])
        raise ValueError(f"cannot project near-zero coefficients (row {bad})")
    Q = Q / norm[:, None]
    m = len(Q)
    a = np.tile(sh.A_REF, (m, 1))
    R = np.tile(np.eye(3), (m, 1, 1))
    _escape_flat_start(Q, a, R, step, eps)
    steps, converged = _ascend(Q, a, R, step, eps, max_steps, method)
    if not converged.all():
        log.warning("closest_frame: %d vectors hit the %d step cap", int((~converged).sum()), max_steps)

    weak = np.nonzero(np.einsum("mi,mi->m", Q, a) < restart_below)[0]
    if len(weak):
        starts = _icosahedral()
        k = len(starts)
        qq = np.repeat(Q[weak], k, axis=0)
        RR = np.tile(starts, (len(weak), 1, 1))
        aa = np.einsum("mij,j->mi", sh.rot9(RR), sh.A_REF)
        _, conv = _ascend(qq, aa, RR, step, eps, min(max_steps, 200), method)
        corr = np.einsum("mi,mi->m", qq, aa).reshape(len(weak), k)
        best = corr.argmax(axis=1)
        pick = np.arange(len(weak)) * k + best
        better = corr[np.arange(len(weak)), best] > np.einsum("mi,mi->m", Q[weak], a[weak]) + 1e-12
        rows = weak[better]
        a[rows] = aa[pick[better]]
        R[rows] = RR[pick[better]]
        converged[rows] = conv[pick[better]]

    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    a = np.einsum("mij,j->mi", sh.rot9(R), sh.A_REF)
    return R, a, ProjectionStats(steps, converged)


def _icosahedral():
    from scipy.spatial.transform import Rotation
    return Rotation.create_group("I").as_matrix()


def _hessian(Q, a, G):
    """Second derivative of ``q . a`` in rotation coordinates (symmetric part)."""
    H = np.empty((len(Q), 3, 3))
    for k in range(3):
        for l in range(k, 3):
            H[:, k, l] = H[:, l, k] = np.einsum("mi,mi->m", Q, a @ ((G[k] @ G[l] + G[l] @ G[k]) / 2).T)
    return H


def _newton_direction(Q, a, g, G):
    """Saddle-free Newton step: curvature replaced by its magnitude (at least 1e-6).

    Along concave directions this is plain Newton; along convex ones it goes
    uphill with the same scale. The length is capped at 0.5.
    """
    w, V = np.linalg.eigh(_hessian(Q, a, G))
    c = np.einsum("mkj,mk->mj", V, g)  # g in the eigenbasis
    t = np.einsum("mkj,mj->mk", V, c / np.maximum(np.abs(w), 1e-6))
    n = np.linalg.norm(t, axis=1, keepdims=True)
    return t * np.minimum(1.0, 0.5 / np.maximum(n, 1e-300))


def _ascend(Q, a, R, step, eps, max_steps, method="gradient"):
    """Ascent with step halving on failure; updates ``a`` and ``R`` in place."""
    m = len(Q)
    newton = method == "newton"
    G = sh.generators()
    s = np.full(m, 1.0 if newton else float(step))
    # Newton keeps going past eps while it still improves; it costs a step or two
    tight = min(eps, 1e-10) if newton else eps
    steps = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    converged = np.zeros(m, dtype=bool)
    gain = np.full(m, np.inf)
    ET = np.concatenate(G, axis=0).T  # (9, 27): a @ ET stacks EX a, EY a, EZ a
    for _ in range(max_steps):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        aa, qq = a[idx], Q[idx]
        g = np.einsum("mkj,mj->mk", (aa @ ET).reshape(-1, 3, 9), qq)
        gn = np.linalg.norm(g, axis=1)
        converged[idx] = gn < eps
        # a vanishing step means the correlation is flat to rounding
        stalled = (s[idx] < 1e-12) | ((gn < eps) & (gain[idx] <= 1e-15))
        done = (gn < tight) | stalled
        converged[idx[stalled]] = True
        active[idx[done]] = False
        keep = ~done
        idx, g, aa, qq = idx[keep], g[keep], aa[keep], qq[keep]
        if len(idx) == 0:
            break
        d = _newton_direction(qq, aa, g, G) if newton else g
        st = s[idx, None] * d
        na = sh.euler9_apply(st[:, 0], st[:, 1], st[:, 2], aa)
        delta = np.einsum("mi,mi->m", na, qq) - np.einsum("mi,mi->m", aa, qq)
        worse = delta < 0
        gain[idx] = np.maximum(delta, 0.0)
        s[idx[worse]] *= 0.5
        ok = ~worse
        if newton:
            s[idx[ok]] = np.minimum(1.0, 2 * s[idx[ok]])
        a[idx[ok]] = na[ok]
        R[idx[ok]] = sh.rot3_from_euler(st[ok, 0], st[ok, 1], st[ok, 2]) @ R[idx[ok]]
        steps[idx] += 1
    return steps, converged


def _escape_flat_start(Q, a, R, step, eps):
    """Move off the reference frame where it is a stationary point but not a maximum.

    Symmetric inputs (e.g. a boundary normal at 45 degrees between two axes)
    can make the reference frame a saddle or minimum of ``q . a``; plain
    gradient ascent would stop there at once. Such rows take one step along
    the top eigenvector of the Hessian instead. Updates ``a`` and ``R`` in place.
    """
    G = sh.generators()
    g = np.stack([Q @ (E @ sh.A_REF) for E in G], axis=1)
    flat = np.nonzero(np.linalg.norm(g, axis=1) < eps)[0]
    if len(flat) == 0:
        return
    H = _hessian(Q[flat], a[flat], G)
    w, V = np.linalg.eigh(H)
    up = w[:, -1] > 1e-6
    if not up.any():
        return
    rows = flat[up]
    t = step * V[up, :, -1]
    a[rows] = sh.euler9_apply(t[:, 0], t[:, 1], t[:, 2], a[rows])
    R[rows] = sh.rot3_from_euler(t[:, 0], t[:, 1], t[:, 2])


def closest_frame(q, **kw):
    """Single-vector :func:`closest_frames`; returns ``(R, a)``."""
    R, a, _ = closest_frames(np.asarray(q, dtype=float)[None], **kw)
    return R[0], a[0]


# --- frame comparison --------------------------------------------------------------

def _match(M):
    """Best octahedral matching for relative rotations ``M = Ri^T Rj`` (m, 3, 3)."""
    # tr(Rj S Ri^T) = tr(S M) = sum_kl S[k, l] M[l, k]
    tr = np.einsum("gkl,mlk->mg", sh.OCTAHEDRAL, M)
    best = tr.max(axis=1, keepdims=True)
    g = np.argmax(tr >= best - 1e-12, axis=1)
    cos = np.clip((tr[np.arange(len(M)), g] - 1) / 2, -1.0, 1.0)
    return g, np.arccos(cos)


def rotation_between_frames3(Ri, Rj):
    """Octahedral matching index and minimal rotation angle from frame i to frame j.

    Accepts single 3x3 frames or stacks (m, 3, 3).
    """
    Ri = np.asarray(Ri, dtype=float)
    Rj = np.asarray(Rj, dtype=float)
    for R in (Ri, Rj):
        err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max()
        if err > 1e-6 or np.any(np.linalg.det(R) < 0):
            raise ValueError("rotation_between_frames3 expects rotation matrices")
    single = Ri.ndim == 2 and Rj.ndim == 2
    M = np.swapaxes(Ri.reshape(-1, 3, 3), -1, -2) @ Rj.reshape(-1, 3, 3)
    g, ang = _match(M)
    if single:
        return int(g[0]), float(ang[0])
    return g, ang


def edge_matchings(frames, edges):
    """Matching index and angle for every edge ``(i, j)``, from frame i to frame j."""
    M = np.swapaxes(frames[edges[:, 0]], 1, 2) @ frames[edges[:, 1]]
    return _match(M)


def field_curvature3(frames, mesh):
    _, ang = edge_matchings(frames, mesh.edges)
    return float(np.sum(ang * ang))


def energy3(a, mesh):
    e = mesh.edges
    return float(np.sum((a[e[:, 1]] - a[e[:, 0]]) ** 2))


@dataclass
class SingularityGraph:
    tets: np.ndarray  # indices of singular tets
    triangles: np.ndarray  # (k, 3) sorted vertex triples
    mismatch: np.ndarray  # octahedral index of the loop composition per triangle

    def __len__(self):
        return len(self.tets)


def _check_group_closure():
    G = sh.OCTAHEDRAL
    prod = G[sh.GROUP_MUL]
    if np.abs(np.einsum("aij,bjk->abik", G, G) - prod).max() > 1e-12:
        raise RuntimeError("octahedral symmetry table is not closed")


def singular_tets(frames, mesh):
    """Triangles whose matching loop is not the identity, and the tets holding them."""
    _check_group_closure()
    tris, tet_faces = mesh.triangles()
    n = mesh.n_v
    edges = mesh.edges
    key = edges[:, 0] * n + edges[:, 1]
    S, _ = edge_matchings(frames, edges)

    def eidx(u, v):
        return np.searchsorted(key, u * n + v)

    i, j, k = tris[:, 0], tris[:, 1], tris[:, 2]  # sorted, so i < j < k
    s_ij = S[eidx(i, j)]
    s_jk = S[eidx(j, k)]
    s_ki = sh.GROUP_INV[S[eidx(i, k)]]
    # the matching satisfies R_i ~ R_j S_ij, so a regular loop has S_ki S_jk S_ij = I
    loop = sh.GROUP_MUL[s_ki, sh.GROUP_MUL[s_jk, s_ij]]
    bad = loop != 0
    tet_bad = bad[tet_faces].any(axis=1)
    return SingularityGraph(np.nonzero(tet_bad)[0], tris[bad], loop[bad])


# --- boundary data -------------------------------------------------------------------

def normal_basis(normals):
    """``(h0, h4, h8)`` columns of the coefficient rotation taking z to each normal."""
    normals = np.atleast_2d(np.asarray(normals, dtype=float))
    if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1) > 1e-9):
        raise ValueError("boundary normals must be unit vectors")
    D = sh.rot9(sh.rotation_z_to(normals))
    return D[:, :, 0], D[:, :, 4], D[:, :, 8]


def lock_crease_frame(n1, n2):
    """Coefficients of the frame with x along ``n1`` and y along ``n2``."""
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    if abs(n1 @ n2) > 1e-9 or abs(np.linalg.norm(n1) - 1) > 1e-9 or abs(np.linalg.norm(n2) - 1) > 1e-9:
        raise ValueError("crease normals must be orthonormal")
    R = np.column_stack([n1, n2, np.cross(n1, n2)])
    return sh.rot9(R) @ sh.A_REF


def boundary_deviation(a, normals):
    """Per-vertex deviation ``sqrt(7/12) - a . h4`` for ``VertexNormal`` records.

    Creases take the larger deviation of their two normals.
    """
    if not normals:
        return np.zeros(0)
    smooth = [vn for vn in normals if not vn.is_crease]
    crease = [vn for vn in normals if vn.is_crease]
    out = np.zeros(len(normals))
    pos = {vn.vertex: k for k, vn in enumerate(normals)}
    if smooth:
        _, h4, _ = normal_basis([vn.normal for vn in smooth])
        v = [vn.vertex for vn in smooth]
        dev = SQ712 - np.einsum("mi,mi->m", a[v], h4)
        out[[pos[x] for x in v]] = dev
    if crease:
        v = [vn.vertex for vn in crease]
        _, h4a, _ = normal_basis([vn.crease[0] for vn in crease])
        _, h4b, _ = normal_basis([vn.crease[1] for vn in crease])
        dev = np.maximum(SQ712 - np.einsum("mi,mi->m", a[v], h4a),
                         SQ712 - np.einsum("mi,mi->m", a[v], h4b))
        out[[pos[x] for x in v]] = dev
    return out


# --- system assembly -------------------------------------------------------------

def add_smoothing_terms(sys, edges):
    """Nine rows ``X[9i+d] - X[9j+d] = 0`` per edge."""
    edges = np.asarray(edges)
    cols = np.empty((len(edges), 9, 2), dtype=np.int64)
    cols[:, :, 0] = 9 * edges[:, :1] + np.arange(9)
    cols[:, :, 1] = 9 * edges[:, 1:] + np.arange(9)
    vals = np.empty(cols.shape)
    vals[..., 0], vals[..., 1] = 1.0, -1.0
    sys.add_rows(cols.reshape(-1, 2), vals.reshape(-1, 2), np.zeros(9 * len(edges)))


def add_normal_constraints(sys, n_v, vertices, normals, lam=LAMBDA):
    """Nine rows per smooth boundary vertex pinning ``a`` to the normal's plane.

    ``a - c0 h8 - c1 h0 = sqrt(7/12) h4``; vertex ``vertices[k]`` must be below
    ``n_l`` since it owns the ``c`` columns with the same index.
    """
    vertices = np.asarray(vertices, dtype=np.int64)
    if len(vertices) == 0:
        return
    h0, h4, h8 = normal_basis(normals)
    m = len(vertices)
    d = np.arange(9)
    cols = np.empty((m, 9, 3), dtype=np.int64)
    cols[:, :, 0] = 9 * vertices[:, None] + d
    cols[:, :, 1] = 9 * n_v + 2 * vertices[:, None]
    cols[:, :, 2] = 9 * n_v + 2 * vertices[:, None] + 1
    vals = np.empty((m, 9, 3))
    vals[:, :, 0] = lam
    vals[:, :, 1] = -lam * h8
    vals[:, :, 2] = -lam * h0
    sys.add_rows(cols.reshape(-1, 3), vals.reshape(-1, 3), (lam * SQ712 * h4).ravel())


def add_lock_rows3(sys, vertices, targets, lam=LAMBDA):
    """Nine rows per vertex ``lam * a = lam * target``."""
    vertices = np.asarray(vertices, dtype=np.int64)
    if len(vertices) == 0:
        return
    cols = 9 * vertices[:, None] + np.arange(9)
    sys.add_rows(cols.ravel(), np.full(cols.size, lam), lam * np.asarray(targets).ravel())


def add_local_optim_constraints(sys, prev_a, n_l, lam=LAMBDA):
    """Tie each vertex to the tangent plane of the feasible set at ``prev_a``.

    ``a - x EX a_prev - y EY a_prev - z EZ a_prev = a_prev`` with the tangent
    coordinates ``(x, y, z)`` as extra unknowns.
    """
    prev_a = np.asarray(prev_a, dtype=float)
    n_v = len(prev_a)
    T = np.stack([prev_a @ E.T for E in sh.generators()], axis=2)  # (n, 9, 3)
    v = np.arange(n_v)
    d = np.arange(9)
    cols = np.empty((n_v, 9, 4), dtype=np.int64)
    cols[:, :, 0] = 9 * v[:, None] + d
    for k in range(3):
        cols[:, :, k + 1] = col_t(n_v, n_l, v, k)[:, None]
    vals = np.empty((n_v, 9, 4))
    vals[:, :, 0] = lam
    vals[:, :, 1:] = -lam * T
    sys.add_rows(cols.reshape(-1, 4), vals.reshape(-1, 4), (lam * prev_a).ravel())


# --- driver ------------------------------------------------------------------------

@dataclass
class Field3:
    a: np.ndarray  # (n, 9) projected coefficients
    frames: np.ndarray  # (n, 3, 3)
    c: np.ndarray = field(default=None)  # (n_l, 2) boundary variables, reordered index
    raw: np.ndarray = field(default=None, repr=False)  # unprojected coefficients
    singularities: SingularityGraph = None


def _project_all(A, edges, projection):
    norm = np.linalg.norm(A, axis=1)
    bad = norm <= 1e-9
    if bad.all():
        raise ValueError("unconstrained field: solve returned zero coefficients everywhere")
    if bad.any():
        log.warning("%d vertices with zero coefficients; copying neighbour frames", bad.sum())
        A = fill_from_neighbours(A, bad, edges)
    return closest_frames(A, **projection)


def optimize3(mesh, n_iter=3, lam=LAMBDA, crease_threshold=np.radians(45.0), hilbert=False,
              tol=1e-10, max_iter=None, locked=None, projection=None):
    """Initialize then smooth a frame field on a tet mesh.

    Vertices are reordered boundary-first internally; the returned field and
    all per-vertex data use the input vertex order. ``locked`` maps interior
    vertex -> 3x3 frame for extra hard constraints. ``projection`` holds
    keyword overrides for :func:`closest_frames` (step, eps, max_steps).
    """
    projection = projection or {}
    t0 = time.perf_counter()
    work, perm = reorder_boundary_first(mesh, hilbert=hilbert)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    n_v, n_l = work.n_v, work.n_l
    normals = estimate_vertex_normals(work, crease_threshold)
    smooth = [vn for vn in normals if not vn.is_crease]
    crease = [vn for vn in normals if vn.is_crease]
    sm_v = np.array([vn.vertex for vn in smooth], dtype=np.int64)
    sm_n = np.array([vn.normal for vn in smooth]).reshape(-1, 3)
    lock_v = [vn.vertex for vn in crease]
    lock_t = [lock_crease_frame(*vn.crease) for vn in crease]
    for v, R in sorted((locked or {}).items()):
        lock_v.append(int(inv[v]))
        lock_t.append(sh.rot9(np.asarray(R, dtype=float)) @ sh.A_REF)
    lock_v = np.array(lock_v, dtype=np.int64)
    lock_t = np.array(lock_t).reshape(-1, 9)

    report = FieldReport(dimension=3)
    n_cols = n_columns(n_v, n_l)
    prev = None
    X = None
    proj_steps = []
    dev_trace = []
    for it in range(n_iter + 1):
        sys = LsqSystem(n_cols)
        add_smoothing_terms(sys, work.edges)
        add_normal_constraints(sys, n_v, sm_v, sm_n, lam)
        add_lock_rows3(sys, lock_v, lock_t, lam)
        if it > 0:
            add_local_optim_constraints(sys, prev, n_l, lam)
        X, stats = sys.solve(tol=tol, max_iter=max_iter, x0=X)
        if not stats.converged:
            log.warning("iteration %d: CG stopped after %d iterations (residual %.3g)",
                        it, stats.iterations, stats.residual)
        report.solver.append(stats)
        raw = X[:9 * n_v].reshape(n_v, 9)
        R, prev, pstats = _project_all(raw, work.edges, projection)
        proj_steps.append(pstats.mean_steps)
        # warm start: projected coefficients, zero tangent coordinates
        X = X.copy()
        X[:9 * n_v] = prev.ravel()
        X[9 * n_v + 2 * n_l:] = 0.0
        dev_trace.append(float(boundary_deviation(prev, normals).max()) if normals else 0.0)
        e = energy3(prev, work)
        if len(report.energy_trace) >= 2 and e > report.energy_trace[-1] * (1 + 1e-6):
            log.info("iteration %d: energy rose from %.6g to %.6g", it, report.energy_trace[-1], e)
        report.energy_trace.append(e)

    c = X[9 * n_v:9 * n_v + 2 * n_l].reshape(n_l, 2)
    dev = boundary_deviation(prev, normals)
    if len(dev) and (dev.min() < -1e-12 or dev.max() > DEVIATION_BOUND + 1e-12):
        raise RuntimeError("boundary deviation outside its theoretical range")
    sing = singular_tets(R, work)

    sing = SingularityGraph(sing.tets, np.sort(perm[sing.triangles], axis=1), sing.mismatch)
    fld = Field3(a=prev[inv], frames=R[inv], c=c, raw=raw[inv], singularities=sing)
    report.energy = report.energy_trace[-1]
    report.curvature = field_curvature3(R, work)
    report.boundary_deviation_avg = float(dev.mean()) if len(dev) else 0.0
    report.boundary_deviation_max = float(dev.max()) if len(dev) else 0.0
    report.n_singular = len(sing)
    c_norm = (c[sm_v] ** 2).sum(axis=1) * 12 / 5 if len(sm_v) else np.zeros(0)
    report.extra = {
        "n_vertices": int(n_v), "n_tets": int(len(work.tets)),
        "n_smooth_boundary": int(len(smooth)), "n_crease": int(len(crease)),
        "projection_mean_steps": proj_steps,
        "boundary_deviation_max_trace": dev_trace,
        "c_norm_ratio": {"mean": float(c_norm.mean()) if len(c_norm) else 0.0,
                         "min": float(c_norm.min()) if len(c_norm) else 0.0,
                         "max": float(c_norm.max()) if len(c_norm) else 0.0},
    }
    report.wall_time = time.perf_counter() - t0
    return fld, report
