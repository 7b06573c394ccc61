"""Planar frame fields in the representation ``a = (cos 4t, sin 4t)``."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .lsq import LsqSystem
from .mesh import fill_from_neighbours
from .report import FieldReport

log = logging.getLogger(__name__)

QUARTER = np.pi / 2
LAMBDA = 100.0


def angle_to_coeffs(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(4 * theta), np.sin(4 * theta)], axis=-1)


def coeffs_to_angle(a):
    """Frame angle in [0, pi/2) of a (not necessarily unit) coefficient vector."""
    a = np.asarray(a, dtype=float)
    if np.any(np.linalg.norm(a, axis=-1) <= 1e-9):
        raise ValueError("coefficient vector too close to zero: frame undefined")
    t = np.mod(np.arctan2(a[..., 1], a[..., 0]) / 4, QUARTER)
    return np.where(t >= QUARTER, 0.0, t)  # mod of a tiny negative rounds up to QUARTER


def project2(a):
    a = np.asarray(a, dtype=float)
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(n <= 1e-9):
        bad = np.nonzero(n.reshape(-1) <= 1e-9)[0]
        raise ValueError(f"cannot project near-zero coefficients (vertex {int(bad[0])})")
    return a / n


def rotation_between_frames2(theta_i, theta_j):
    """Smallest rotation taking frame i to frame j, in (-pi/4, pi/4]."""
    d = np.mod(np.asarray(theta_j) - np.asarray(theta_i), QUARTER)
    return np.where(d > np.pi / 4, d - QUARTER, d)


@dataclass
class Field2:
    a: np.ndarray  # (n, 2) unit coefficients
    theta: np.ndarray = field(init=False)

    def __post_init__(self):
        self.theta = coeffs_to_angle(self.a)


def field_curvature2(theta, mesh):
    e = mesh.edges
    d = rotation_between_frames2(theta[e[:, 0]], theta[e[:, 1]])
    return float(np.sum(d * d))


def energy2(a, mesh):
    e = mesh.edges
    return float(np.pi * np.sum((a[e[:, 1]] - a[e[:, 0]]) ** 2))


def triangle_singularity(theta, tri):
    """Index (in quarter turns) of the frame field around a triangle."""
    t = np.asarray(theta)[np.asarray(tri)]
    s = (rotation_between_frames2(t[..., 0], t[..., 1]) + rotation_between_frames2(t[..., 1], t[..., 2])
         + rotation_between_frames2(t[..., 2], t[..., 0]))
    return np.rint(s / QUARTER).astype(int)


def singular_triangles(theta, mesh):
    idx = triangle_singularity(theta, mesh.triangles)
    hit = np.nonzero(idx)[0]
    return hit, idx[hit]


def boundary_misalignment(theta, mesh):
    """|angle| between each boundary frame and its normal frame, per boundary vertex."""
    b = np.nonzero(mesh.boundary)[0]
    return b, np.abs(rotation_between_frames2(theta[b], mesh.boundary_angles[b]))


# --- system assembly ---------------------------------------------------------

def add_smoothing_rows2(sys, mesh):
    e = mesh.edges
    w = np.sqrt(np.pi)
    for d in (0, 1):
        cols = np.stack([2 * e[:, 0] + d, 2 * e[:, 1] + d], axis=1)
        vals = np.tile([w, -w], (len(e), 1))
        sys.add_rows(cols, vals, np.zeros(len(e)))


def add_lock_rows2(sys, vertices, theta, lam):
    """Two penalty rows per vertex fixing ``a = (cos 4t, sin 4t)``."""
    vertices = np.asarray(vertices)
    target = angle_to_coeffs(theta)
    for d in (0, 1):
        sys.add_rows(2 * vertices + d, np.full(len(vertices), lam), lam * target[:, d])


def add_single_boundary_rows2(sys, vertices, theta, lam):
    """One row per vertex, ``a . (cos 4t, sin 4t) = 1`` (only valid for unit a)."""
    vertices = np.asarray(vertices)
    target = angle_to_coeffs(theta)
    cols = np.stack([2 * vertices, 2 * vertices + 1], axis=1)
    sys.add_rows(cols, lam * target, np.full(len(vertices), lam))


def add_linearized_feasibility_rows2(sys, prev, lam):
    n = len(prev)
    v = np.arange(n)
    cols = np.stack([2 * v, 2 * v + 1], axis=1)
    sys.add_rows(cols, lam * prev, np.full(n, lam))


def _project_with_fallback(X, mesh):
    a = X.reshape(-1, 2).copy()
    norm = np.linalg.norm(a, axis=1)
    bad = norm <= 1e-9
    if bad.all():
        raise ValueError("unconstrained field: solve returned zero coefficients everywhere")
    a[~bad] /= norm[~bad, None]
    if bad.any():
        log.warning("%d vertices with zero coefficients; copying neighbour frames", bad.sum())
        try:
            a = fill_from_neighbours(a, bad, mesh.edges)
        except ValueError:
            raise ValueError("unconstrained field: isolated vertices without coefficients") from None
    return a


def optimize2(mesh, n_iter=3, lam=LAMBDA, single_boundary_eq=False, start=None,
              locked=None, tol=1e-10, max_iter=None):
    """Initialize then smooth a planar frame field.

    ``start`` (n, 2) skips the initialization solve and runs ``n_iter``
    smoothing iterations from the given coefficients. ``locked`` maps interior
    vertex -> frame angle for extra hard constraints.
    """
    t0 = time.perf_counter()
    n = mesh.n_v
    bverts = np.nonzero(mesh.boundary)[0]
    btheta = mesh.boundary_angles[bverts]
    lock_v = np.array(sorted(locked), dtype=np.int64) if locked else np.zeros(0, np.int64)
    lock_t = np.array([locked[v] for v in lock_v]) if locked else np.zeros(0)

    report = FieldReport(dimension=2)
    prev = None if start is None else project2(np.asarray(start, dtype=float))
    X = None if prev is None else prev.ravel().copy()
    iterations = range(n_iter + 1) if start is None else range(1, n_iter + 1)
    for it in iterations:
        sys = LsqSystem(2 * n)
        add_smoothing_rows2(sys, mesh)
        if single_boundary_eq:
            add_single_boundary_rows2(sys, bverts, btheta, lam)
        else:
            add_lock_rows2(sys, bverts, btheta, lam)
        if len(lock_v):
            add_lock_rows2(sys, lock_v, lock_t, lam)
        if it > 0:
            add_linearized_feasibility_rows2(sys, prev, lam)
        X, stats = sys.solve(tol=tol, max_iter=max_iter, x0=X)
        if not stats.converged:
            log.warning("iteration %d: CG stopped after %d iterations (residual %.3g)",
                        it, stats.iterations, stats.residual)
        prev = _project_with_fallback(X, mesh)
        X = prev.ravel().copy()
        report.solver.append(stats)
        e = energy2(prev, mesh)
        if len(report.energy_trace) >= 2 and e > report.energy_trace[-1] * (1 + 1e-6):
            log.info("iteration %d: energy rose from %.6g to %.6g", it, report.energy_trace[-1], e)
        report.energy_trace.append(e)

    fld = Field2(prev)
    report.energy = report.energy_trace[-1]
    report.curvature = field_curvature2(fld.theta, mesh)
    _, mis = boundary_misalignment(fld.theta, mesh)
    report.boundary_deviation_avg = float(mis.mean()) if len(mis) else 0.0
    report.boundary_deviation_max = float(mis.max()) if len(mis) else 0.0
    report.n_singular = int(len(singular_triangles(fld.theta, mesh)[0]))
    report.wall_time = time.perf_counter() - t0
    return fld, report


# --- toy chain -----------------------------------------------------------------

#: locked end angles of the 4-vertex chain used for the landscape;
#: the arc between them is just under pi/4, and at grid 64 the two continuous
#: minima sit within 1/6 cell of grid nodes
TOY_LOCKED = (np.pi / 256, np.pi / 256 + 29 * np.pi / 128)


def chain_objectives(theta0, theta1, theta2, theta3):
    """Field curvature and energy of the chain 0-1-2-3 (broadcasting)."""
    th = [np.asarray(t, dtype=float) for t in (theta0, theta1, theta2, theta3)]
    th = np.broadcast_arrays(*th)
    curv = sum(rotation_between_frames2(th[k], th[k + 1]) ** 2 for k in range(3))
    a = [angle_to_coeffs(t) for t in th]
    energy = np.pi * sum(np.sum((a[k + 1] - a[k]) ** 2, axis=-1) for k in range(3))
    return curv, energy


def landscape(theta_left, theta_right, grid_n=64):
    """Both objectives over (t1, t2) in [0, pi/2)^2 for the locked 4-chain.

    Returns ``(thetas, curvature, energy)`` with arrays indexed ``[i1, i2]``.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    g = np.arange(grid_n) * (QUARTER / grid_n)
    T1, T2 = np.meshgrid(g, g, indexing="ij")
    curv, energy = chain_objectives(theta_left, T1, T2, theta_right)
    return g, curv, energy


def grid_local_minima(S):
    """Strict local minima of a periodic 2D grid (8-neighbourhood)."""
    m = np.ones(S.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                m &= S < np.roll(np.roll(S, di, 0), dj, 1)
    return [tuple(int(x) for x in ij) for ij in zip(*np.nonzero(m))]


def toy_chain_mesh(theta_left, theta_right):
    """The locked 4-chain as a degenerate 'mesh' usable by optimize2."""
    from types import SimpleNamespace
    boundary = np.array([True, False, False, True])
    angles = np.array([theta_left, np.nan, np.nan, theta_right])
    return SimpleNamespace(n_v=4, edges=np.array([[0, 1], [1, 2], [2, 3]]), boundary=boundary,
                           boundary_angles=angles, triangles=np.zeros((0, 3), dtype=np.int64))
