import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from framefield import data, sh
from framefield.field3d import (
    DEVIATION_BOUND, LAMBDA, SQ712, add_local_optim_constraints, add_lock_rows3,
    add_normal_constraints, add_smoothing_terms, boundary_deviation, closest_frame,
    closest_frames, energy3, lock_crease_frame, n_columns, normal_basis, optimize3,
    rotation_between_frames3, singular_tets,
)
from framefield.lsq import LsqSystem
from framefield.mesh import box_tet_mesh, estimate_vertex_normals, tet_mesh_from_arrays

TET = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)


def rz(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def random_rotations(rng, n):
    return Rotation.random(n, random_state=int(rng.integers(1 << 31))).as_matrix()


def feasible(R):
    return sh.rot9(R) @ sh.A_REF


# --- rows ----------------------------------------------------------------------

def test_smoothing_rows_single_edge():
    s = LsqSystem(18)
    add_smoothing_terms(s, np.array([[0, 1]]))
    A, b = s.matrix()
    A = A.toarray()
    assert A.shape == (9, 18) and not b.any()
    for d in range(9):
        assert A[d, d] == 1 and A[d, 9 + d] == -1 and np.count_nonzero(A[d]) == 2


def test_smoothing_residual(rng):
    s = LsqSystem(18)
    add_smoothing_terms(s, np.array([[0, 1]]))
    ai, aj = (feasible(R) for R in random_rotations(rng, 2))
    assert np.abs(s.residual(np.r_[ai, ai])).max() == 0
    r = s.residual(np.r_[ai, aj])
    assert abs(r @ r - np.sum((aj - ai) ** 2)) < 1e-12


def test_normal_rows_for_z():
    s = LsqSystem(n_columns(1, 1))
    add_normal_constraints(s, 1, [0], [[0, 0, 1]], lam=LAMBDA)
    A, b = s.matrix()
    A = A.toarray() / LAMBDA
    b = b / LAMBDA
    np.testing.assert_allclose(A[:, :9], np.eye(9), atol=0)
    c0, c1 = A[:, 9], A[:, 10]
    # c0 drives component 8, c1 component 0, and the rest is pinned to sqrt(7/12) e4
    np.testing.assert_allclose(c0, -np.eye(9)[8], atol=1e-15)
    np.testing.assert_allclose(c1, -np.eye(9)[0], atol=1e-15)
    np.testing.assert_allclose(b, SQ712 * np.eye(9)[4], atol=1e-15)
    assert not A[:, 11:].any()


def test_normal_rows_equivariant():
    Q = sh.rotation_z_to(np.array([[1.0, 0, 0]]))[0]
    D = sh.rot9(Q)
    h0z, h4z, h8z = (h[0] for h in normal_basis([[0, 0, 1]]))
    h0, h4, h8 = (h[0] for h in normal_basis([[1, 0, 0]]))
    for hz, h in ((h0z, h0), (h4z, h4), (h8z, h8)):
        np.testing.assert_allclose(D @ hz, h, atol=1e-12)
    # the admissible set is the same for any choice of the z -> x rotation
    Q2 = Q @ rz(0.7)
    s = SQ712 * h4 + 0.3 * h8 + 0.2 * h0
    a = sh.rot9(Q2) @ (SQ712 * h4z + 0.3 * h8z + 0.2 * h0z)
    assert abs(np.linalg.norm(a) - np.linalg.norm(s)) < 1e-12
    assert abs(a @ h4 - SQ712) < 1e-12


def test_normal_rows_reject_unnormalized():
    with pytest.raises(ValueError, match="unit"):
        add_normal_constraints(LsqSystem(n_columns(1, 1)), 1, [0], [[0, 0, 2.0]])


def test_one_tet_penalty_bound():
    m = tet_mesh_from_arrays(TET, [[0, 1, 2, 3]])
    n = np.array([1.0, 1.0, 1.0]) / np.sqrt(3)  # every vertex shares one normal
    s = LsqSystem(n_columns(4, 4))
    add_smoothing_terms(s, m.edges)
    add_normal_constraints(s, 4, np.arange(4), np.tile(n, (4, 1)))
    X, _ = s.solve()
    h0, h4, h8 = (h[0] for h in normal_basis([n]))
    for i in range(4):
        a = X[9 * i:9 * i + 9]
        c0, c1 = X[36 + 2 * i], X[37 + 2 * i]
        assert np.linalg.norm(a - (SQ712 * h4 + c0 * h8 + c1 * h0)) < 10 / LAMBDA


def test_tangent_vectors_at_reference():
    EX, EY, EZ = sh.generators()
    t = EZ @ sh.A_REF
    nz = np.nonzero(np.abs(t) > 1e-14)[0]
    assert nz.tolist() == [0]
    assert abs(abs(t[0]) - 4 * np.sqrt(5 / 12)) < 1e-12
    # tangent vectors are orthogonal to the point on the sphere
    for E in (EX, EY, EZ):
        assert abs(sh.A_REF @ E @ sh.A_REF) < 1e-14


def test_local_optim_fixed_point(rng):
    prev = np.stack([feasible(R) for R in random_rotations(rng, 3)])
    s = LsqSystem(n_columns(3, 0))
    add_local_optim_constraints(s, prev, 0)
    X, _ = s.solve()
    np.testing.assert_allclose(X[:27].reshape(3, 9), prev, atol=1e-10)
    np.testing.assert_allclose(X[27:], 0, atol=1e-10)


def test_local_optim_tangent_plane(rng):
    prev = np.stack([feasible(R) for R in random_rotations(rng, 2)])
    s = LsqSystem(n_columns(2, 0))
    add_smoothing_terms(s, np.array([[0, 1]]))
    add_local_optim_constraints(s, prev, 0)
    X, _ = s.solve()
    for i in range(2):
        a = X[9 * i:9 * i + 9]
        x, y, z = X[18 + 3 * i:21 + 3 * i]
        T = [E @ prev[i] for E in sh.generators()]
        assert np.linalg.norm(a - prev[i] - x * T[0] - y * T[1] - z * T[2]) < 10 / LAMBDA


def test_lock_rows():
    s = LsqSystem(9)
    add_lock_rows3(s, [0], sh.A_REF[None])
    X, _ = s.solve()
    np.testing.assert_allclose(X, sh.A_REF, atol=1e-14)


# --- projection ------------------------------------------------------------------

def test_closest_frame_reference():
    R, a, stats = closest_frames(sh.A_REF[None])
    np.testing.assert_allclose(R[0], np.eye(3), atol=1e-15)
    np.testing.assert_allclose(a[0], sh.A_REF, atol=1e-15)
    assert stats.steps[0] == 0 and stats.converged[0]


def test_closest_frame_feasible_roundtrip():
    q = sh.rot_z_9(np.pi / 9) @ sh.A_REF
    R, a = closest_frame(q)
    assert np.abs(a - q).max() < 1e-3
    # R matches rot z(pi/9) up to one of the 24 symmetries
    M = rz(np.pi / 9).T @ R
    assert np.abs(sh.OCTAHEDRAL - M).reshape(24, -1).max(axis=1).min() < 1e-3
    np.testing.assert_allclose(sh.rot9(R) @ sh.A_REF, a, atol=1e-9)


def test_closest_frame_correlation_on_feasible(rng):
    Q = np.stack([feasible(R) for R in random_rotations(rng, 200)])
    R, a, stats = closest_frames(Q)
    corr = np.einsum("mi,mi->m", Q, a)
    assert corr.min() >= 1 - 1e-6 and stats.converged.all()
    det = np.linalg.det(R)
    assert np.abs(det - 1).max() < 1e-9
    assert np.abs(np.swapaxes(R, 1, 2) @ R - np.eye(3)).max() < 1e-9


def test_closest_frame_local_maximum(rng):
    for _ in range(5):
        q = rng.normal(size=9)
        q /= np.linalg.norm(q)
        R, a = closest_frame(q, eps=1e-8)
        pert = Rotation.from_rotvec(rng.normal(size=(1000, 3)) * 0.05).as_matrix()
        moved = sh.rot9(pert) @ a
        assert (moved @ q <= q @ a + 1e-12).all()


def test_closest_frame_zero_input():
    with pytest.raises(ValueError):
        closest_frame(np.zeros(9))


def test_closest_frame_escapes_flat_start():
    # boundary-type vector for a normal at 45 degrees between x and z
    n = np.array([1.0, 0.0, 1.0]) / np.sqrt(2)
    _, h4, _ = normal_basis([n])
    q = SQ712 * h4[0]
    R, a, stats = closest_frames(q[None])
    # a frame with one axis on the normal reaches the best possible value sqrt(7/12)
    start = sh.A_REF @ q / np.linalg.norm(q)
    corr = a[0] @ q / np.linalg.norm(q)
    assert start < SQ712 - 0.1
    assert corr > SQ712 - 1e-9 and stats.steps[0] > 0
    # one frame axis along the normal
    assert np.abs(R[0].T @ n).max() > 1 - 1e-3


def test_closest_frame_cap_reports(caplog):
    q = np.random.default_rng(3).normal(size=(4, 9))
    with caplog.at_level("WARNING"):
        _, _, stats = closest_frames(q, max_steps=1, eps=1e-12)
    assert (stats.steps <= 1).all() and not stats.converged.all()
    assert "step cap" in caplog.text


# --- frames -------------------------------------------------------------------------

def test_lock_crease_frame_examples(rng):
    x, y, z = np.eye(3)
    np.testing.assert_allclose(lock_crease_frame(x, y), sh.A_REF, atol=1e-15)
    np.testing.assert_allclose(lock_crease_frame(y, z), sh.A_REF, atol=1e-12)
    Q = random_rotations(rng, 1)[0]
    np.testing.assert_allclose(lock_crease_frame(Q[:, 0], Q[:, 1]), feasible(Q), atol=1e-12)
    with pytest.raises(ValueError):
        lock_crease_frame(x, (x + y) / np.sqrt(2))


def _brute_matching(Ri, Rj):
    best = None
    for g, S in enumerate(sh.OCTAHEDRAL):
        c = np.clip((np.trace(Rj @ S.T @ Ri.T) - 1) / 2, -1, 1)
        ang = np.arccos(c)
        if best is None or ang < best[1] - 1e-12:
            best = (g, ang)
    return best


def test_rotation_between_frames3_examples(rng):
    Ri = random_rotations(rng, 1)[0]
    assert rotation_between_frames3(Ri, Ri) == (0, 0.0) or rotation_between_frames3(Ri, Ri)[1] < 1e-7
    assert rotation_between_frames3(Ri, Ri)[0] == 0
    assert rotation_between_frames3(Ri, Ri @ rz(np.pi / 2))[1] < 1e-7
    g, ang = rotation_between_frames3(Ri, Ri @ rz(np.pi / 5))
    assert abs(ang - np.pi / 5) < 1e-9
    with pytest.raises(ValueError):
        rotation_between_frames3(Ri, 2 * Ri)
    with pytest.raises(ValueError):
        rotation_between_frames3(Ri, -Ri)


def test_rotation_between_frames3_brute_force(rng):
    Rs = random_rotations(rng, 200)
    g, ang = rotation_between_frames3(Rs[:100], Rs[100:])
    for k in range(100):
        bg, bang = _brute_matching(Rs[k], Rs[100 + k])
        assert abs(ang[k] - bang) < 1e-9
        # matched frame: R_j = R_i S rotated by the minimal angle
        S = sh.OCTAHEDRAL[g[k]]
        c = (np.trace(Rs[100 + k] @ S @ Rs[k].T) - 1) / 2
        assert abs(np.arccos(np.clip(c, -1, 1)) - bang) < 1e-9
    # quotient by 24 symmetries bounds the minimal angle
    assert ang.max() < np.radians(62.8)


def _tiny_patch():
    # a vertex surrounded by a ring, as tets of a bipyramid
    ring = [(np.cos(t), np.sin(t), 0.0) for t in 2 * np.pi * np.arange(6) / 6]
    V = np.array([(0, 0, 0)] + ring + [(0, 0, 1), (0, 0, -1)], dtype=float)
    tets = []
    for k in range(6):
        a, b = 1 + k, 1 + (k + 1) % 6
        tets += [[0, a, b, 7], [0, b, a, 8]]
    return tet_mesh_from_arrays(V, tets)


def _brute_singular(frames, mesh):
    out = set()
    faces, tet_faces = mesh.triangles()
    for f, (i, j, k) in enumerate(faces):
        P = np.eye(3)
        for u, v in ((i, j), (j, k), (k, i)):
            g, _ = _brute_matching(frames[u], frames[v])
            P = P @ sh.OCTAHEDRAL[g]
        if np.abs(P - np.eye(3)).max() > 1e-9:
            out.add(f)
    return {t for t in range(len(mesh.tets)) if set(tet_faces[t]) & out}


def test_singular_tets_constant_field():
    m = _tiny_patch()
    frames = np.tile(np.eye(3), (m.n_v, 1, 1))
    assert len(singular_tets(frames, m)) == 0


def test_singular_tets_winding_ring():
    m = _tiny_patch()
    # ring frames turn a quarter turn about z in total: the loop around the axis is singular
    frames = np.tile(np.eye(3), (m.n_v, 1, 1))
    for k in range(6):
        frames[1 + k] = rz(k * (np.pi / 2) / 6)
    frames[0] = rz(np.pi / 4)
    sg = singular_tets(frames, m)
    assert set(sg.tets.tolist()) == _brute_singular(frames, m)
    assert len(sg) > 0


def test_singular_tets_random_brute_force(rng):
    m = _tiny_patch()
    for _ in range(5):
        frames = random_rotations(rng, m.n_v)
        assert set(singular_tets(frames, m).tets.tolist()) == _brute_singular(frames, m)


def test_one_rotated_vertex():
    m = box_tet_mesh((2, 2, 2))
    frames = np.tile(np.eye(3), (m.n_v, 1, 1))
    centre = int(np.nonzero(np.all(np.isclose(m.vertices, 0.5), axis=1))[0][0])
    frames[centre] = rz(np.pi / 4)
    sg = singular_tets(frames, m)
    assert set(sg.tets.tolist()) == _brute_singular(frames, m)


# --- deviation ------------------------------------------------------------------------

def test_boundary_deviation_range(rng):
    m = data.load("cylinder")
    normals = estimate_vertex_normals(m)
    for _ in range(3):
        a = np.stack([feasible(R) for R in random_rotations(rng, m.n_v)])
        dev = boundary_deviation(a, normals)
        assert dev.min() >= -1e-12 and dev.max() <= DEVIATION_BOUND + 1e-12
    aligned = np.tile(sh.A_REF, (m.n_v, 1))
    top = [k for k, vn in enumerate(normals) if not vn.is_crease and vn.normal[2] > 1 - 1e-12]
    assert np.abs(boundary_deviation(aligned, normals)[top]).max() < 1e-12


# --- driver ------------------------------------------------------------------------------

def test_box_constant_field():
    m = data.load("box")
    fld, rep = optimize3(m)
    assert rep.energy < 1e-12 and rep.n_singular == 0
    np.testing.assert_allclose(fld.a, np.tile(sh.A_REF, (m.n_v, 1)), atol=1e-8)


def test_iteration_zero_leaves_tangent_columns_unused():
    m = box_tet_mesh((2, 2, 2))
    from framefield.mesh import reorder_boundary_first
    w, _ = reorder_boundary_first(m)
    normals = estimate_vertex_normals(w)
    smooth = [vn for vn in normals if not vn.is_crease]
    s = LsqSystem(n_columns(w.n_v, w.n_l))
    add_smoothing_terms(s, w.edges)
    add_normal_constraints(s, w.n_v, [vn.vertex for vn in smooth], [vn.normal for vn in smooth])
    A, _ = s.matrix()
    assert A.shape[1] == 9 * w.n_v + 2 * w.n_l + 3 * w.n_v
    assert abs(A[:, 9 * w.n_v + 2 * w.n_l:]).sum() == 0


def test_energy_before_projection_equals_smoothing_residual():
    m = data.load("cylinder")
    fld, _ = optimize3(m, n_iter=0)
    s = LsqSystem(9 * m.n_v)
    add_smoothing_terms(s, m.edges)
    r = s.residual(fld.raw.ravel())
    assert abs(energy3(fld.raw, m) - r @ r) < 1e-9


def test_cylinder_run_properties():
    m = data.load("cylinder")
    fld, rep = optimize3(m, n_iter=2)
    assert 0 <= rep.boundary_deviation_avg <= rep.boundary_deviation_max <= DEVIATION_BOUND
    assert rep.extra["boundary_deviation_max_trace"][0] < 1e-5
    assert np.abs(np.linalg.norm(fld.a, axis=1) - 1).max() < 1e-9
    np.testing.assert_allclose(sh.rot9(fld.frames) @ sh.A_REF, fld.a, atol=1e-9)
    tr = rep.energy_trace
    assert all(tr[k] <= tr[k - 1] * (1 + 1e-6) for k in range(2, len(tr)))
    assert rep.n_singular == len(fld.singularities.tets)


def test_hilbert_order_same_field():
    m = data.load("cylinder")
    f1, r1 = optimize3(m, n_iter=1)
    f2, r2 = optimize3(m, n_iter=1, hilbert=True)
    assert abs(r1.energy - r2.energy) < 1e-6 * max(1.0, r1.energy)
    assert np.abs(f1.a - f2.a).max() < 1e-5


def test_rotation_equivariance(rng):
    m = data.load("cylinder")
    Q = random_rotations(rng, 1)[0]
    rotated = tet_mesh_from_arrays(m.vertices @ Q.T, m.tets)
    proj = {"eps": 1e-9, "max_steps": 5000}
    f1, r1 = optimize3(m, n_iter=1, tol=1e-12, projection=proj)
    f2, r2 = optimize3(rotated, n_iter=1, tol=1e-12, projection=proj)
    assert abs(r1.energy - r2.energy) < 1e-6 * max(1.0, r1.energy)
    np.testing.assert_allclose(sh.rot9(Q) @ f1.a.T, f2.a.T, atol=1e-6)
    _, ang = rotation_between_frames3(Q @ f1.frames, f2.frames)
    assert ang.max() < 1e-5


def test_gradient_method_matches_newton(rng):
    Q = np.stack([feasible(R) for R in random_rotations(rng, 100)])
    Q = Q + 0.05 * rng.normal(size=Q.shape)
    _, a_g, st_g = closest_frames(Q, method="gradient")
    _, a_n, st_n = closest_frames(Q, method="newton")
    assert st_g.converged.all() and st_n.converged.all()
    assert np.abs(a_g - a_n).max() < 1e-3
    assert st_n.steps.mean() < st_g.steps.mean()
    with pytest.raises(ValueError, match="method"):
        closest_frames(Q, method="bfgs")
