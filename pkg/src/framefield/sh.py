"""Degree-4 real spherical harmonics: basis, 9x9 rotations and generators.

Coefficient vectors are ordered as ``(Y_{4,-4}, ..., Y_{4,4})`` using the
tesseral (no Condon-Shortley phase) real harmonics.

Rotation convention (checked by :func:`rot9_matches_sampling`): ``rot9(R)``
is the *active* action of the 3D rotation ``R`` on coefficients, i.e.::

    B(p) . (rot9(R) @ a) == B(R.T @ p) . a      for all unit p

so the function of the frame ``R @ f_ref`` has coefficients ``rot9(R) @ A_REF``
and ``rot9(R1 @ R2) == rot9(R1) @ rot9(R2)``.
"""

import numpy as np

SQ = np.sqrt

#: coefficients of the axis-aligned reference frame function
A_REF = np.array([0, 0, 0, 0, SQ(7 / 12), 0, 0, 0, SQ(5 / 12)])

#: direction of ``R`` vs ``R.T`` in the function-space oracle, frozen from sampling
ACTIVE_CONVENTION = True

_RX90 = np.array([
    [0, 0, 0, 0, 0, SQ(14) / 4, 0, -SQ(2) / 4, 0],
    [0, -3 / 4, 0, SQ(7) / 4, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, SQ(2) / 4, 0, SQ(14) / 4, 0],
    [0, SQ(7) / 4, 0, 3 / 4, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 3 / 8, 0, SQ(5) / 4, 0, SQ(35) / 8],
    [-SQ(14) / 4, 0, -SQ(2) / 4, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, SQ(5) / 4, 0, 1 / 2, 0, -SQ(7) / 4],
    [SQ(2) / 4, 0, -SQ(14) / 4, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, SQ(35) / 8, 0, -SQ(7) / 4, 0, 1 / 8],
])


def _generator_x():
    r2, r72, t, r10 = SQ(2), SQ(7 / 2), 3 / SQ(2), SQ(10)
    E = np.zeros((9, 9))
    for i, j, v in [(0, 7, -r2), (1, 6, -r72), (1, 8, -r2), (2, 5, -t), (2, 7, -r72),
                    (3, 4, -r10), (3, 6, -t)]:
        E[i, j] = v
        E[j, i] = -v
    return E


def _generator_y():
    r2, r72, t, r10 = SQ(2), SQ(7 / 2), 3 / SQ(2), SQ(10)
    E = np.zeros((9, 9))
    for i, j, v in [(0, 1, r2), (1, 2, r72), (2, 3, t), (4, 5, -r10), (5, 6, -t),
                    (6, 7, -r72), (7, 8, -r2)]:
        E[i, j] = v
        E[j, i] = -v
    return E


def _generator_z():
    E = np.zeros((9, 9))
    for i in range(4):
        E[i, 8 - i] = 4 - i
        E[8 - i, i] = -(4 - i)
    return E


EX = _generator_x()
EY = _generator_y()
EZ = _generator_z()

_FREQ = np.arange(4, -5, -1)  # row i rotates with frequency 4 - i
_ANTI = np.arange(8, -1, -1)


def generators():
    """Return ``(EX, EY, EZ)``, the infinitesimal rotation generators."""
    return EX, EY, EZ


def rot_x_quarter_9():
    """Coefficient rotation for a quarter turn about x."""
    return _RX90.copy()


def rot_z_9(gamma):
    """Coefficient rotation about z; ``gamma`` may be an array (leading batch dims)."""
    gamma = np.asarray(gamma, dtype=float)
    c = np.cos(np.multiply.outer(gamma, _FREQ))
    s = np.sin(np.multiply.outer(gamma, _FREQ))
    M = np.zeros(gamma.shape + (9, 9))
    idx = np.arange(9)
    M[..., idx, idx] = c
    M[..., idx, _ANTI] = s
    M[..., 4, 4] = 1.0
    return M


def rot_y_9(beta):
    # Conjugating by the x quarter turn this way round gives +beta about y;
    # the opposite order turns about -y.
    return _RX90.T @ rot_z_9(beta) @ _RX90


_RY90 = rot_y_9(np.pi / 2)


def rot_x_9(alpha):
    return _RY90 @ rot_z_9(alpha) @ _RY90.T


def rot_9_from_euler(alpha, beta, gamma):
    """9x9 rotation matching ``rot3_from_euler(alpha, beta, gamma)``."""
    return rot_x_9(alpha) @ rot_y_9(beta) @ rot_z_9(gamma)


def rz9_apply(gamma, a):
    """``rot_z_9(gamma) @ a`` for batches, without forming the matrices."""
    c = np.cos(np.multiply.outer(gamma, _FREQ))
    s = np.sin(np.multiply.outer(gamma, _FREQ))
    out = c * a + s * a[..., _ANTI]
    out[..., 4] = a[..., 4]
    return out


def euler9_apply(alpha, beta, gamma, a):
    """Apply ``rot_9_from_euler`` row-wise to a batch ``a`` of shape (m, 9)."""
    v = rz9_apply(gamma, a)
    v = rz9_apply(beta, v @ _RX90.T) @ _RX90
    v = rz9_apply(alpha, v @ _RY90) @ _RY90.T
    return v


def _rx(t):
    c, s = np.cos(t), np.sin(t)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1),
                     np.stack([z, s, c], -1)], -2)


def _ry(t):
    c, s = np.cos(t), np.sin(t)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1),
                     np.stack([-s, z, c], -1)], -2)


def _rz(t):
    c, s = np.cos(t), np.sin(t)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1),
                     np.stack([z, z, o], -1)], -2)


def rot3_from_euler(alpha, beta, gamma):
    """``Rx(alpha) @ Ry(beta) @ Rz(gamma)``; broadcasts over array angles."""
    alpha, beta, gamma = (np.asarray(t, dtype=float) for t in (alpha, beta, gamma))
    return _rx(alpha) @ _ry(beta) @ _rz(gamma)


def euler_from_rot3(R, gimbal_tol=1e-12):
    """Inverse of :func:`rot3_from_euler`.

    At gimbal lock (``cos beta ~ 0``) the branch ``gamma = 0`` is returned.
    Accepts a single matrix or a stack of shape (m, 3, 3).
    """
    R = np.asarray(R, dtype=float)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max()
    if err > 1e-9:
        raise ValueError(f"matrix is not orthogonal (|R^T R - I| = {err:.3g})")
    sb = R[..., 0, 2]
    cb = np.hypot(R[..., 0, 0], R[..., 0, 1])
    beta = np.arctan2(sb, cb)  # arcsin loses half the digits near +-pi/2
    locked = cb < gimbal_tol
    alpha = np.arctan2(-R[..., 1, 2], R[..., 2, 2])
    gamma = np.arctan2(-R[..., 0, 1], R[..., 0, 0])
    alpha_l = np.arctan2(R[..., 1, 0] * np.sign(sb), R[..., 1, 1])
    alpha = np.where(locked, alpha_l, alpha)
    gamma = np.where(locked, 0.0, gamma)
    if R.ndim == 2:
        return float(alpha), float(beta), float(gamma)
    return alpha, beta, gamma


def rot9(R):
    """9x9 coefficient rotation of a 3D rotation (or a stack of them)."""
    return rot_9_from_euler(*euler_from_rot3(R))


def rotation_z_to(n):
    """Minimal rotation(s) taking the z axis onto unit vector(s) ``n``."""
    n = np.asarray(n, dtype=float)
    single = n.ndim == 1
    n = np.atleast_2d(n)
    axis = np.stack([-n[:, 1], n[:, 0], np.zeros(len(n))], axis=1)  # z x n
    s = np.linalg.norm(axis, axis=1)
    c = n[:, 2]
    R = np.tile(np.eye(3), (len(n), 1, 1))
    gen = s > 1e-12
    u = axis[gen] / s[gen, None]
    K = np.zeros((len(u), 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -u[:, 2], u[:, 1], -u[:, 0]
    K -= np.swapaxes(K, 1, 2)
    R[gen] += s[gen, None, None] * K + (1 - c[gen])[:, None, None] * (K @ K)
    R[~gen & (c < 0)] = np.diag([1.0, -1.0, -1.0])
    return R[0] if single else R


def sh_basis_eval(p):
    """Evaluate the 9 degree-4 real harmonics at unit vector(s) ``p``."""
    p = np.asarray(p, dtype=float)
    if np.any(np.abs(np.linalg.norm(p, axis=-1) - 1) > 1e-9):
        raise ValueError("sh_basis_eval expects unit vectors")
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    pi = np.pi
    x2, y2, z2 = x * x, y * y, z * z
    return np.stack([
        3 / 4 * SQ(35 / pi) * x * y * (x2 - y2),
        3 / 4 * SQ(35 / (2 * pi)) * (3 * x2 - y2) * y * z,
        3 / 4 * SQ(5 / pi) * x * y * (7 * z2 - 1),
        3 / 4 * SQ(5 / (2 * pi)) * y * z * (7 * z2 - 3),
        3 / 16 * SQ(1 / pi) * (35 * z2 * z2 - 30 * z2 + 3),
        3 / 4 * SQ(5 / (2 * pi)) * x * z * (7 * z2 - 3),
        3 / 8 * SQ(5 / pi) * (x2 - y2) * (7 * z2 - 1),
        3 / 4 * SQ(35 / (2 * pi)) * (x2 - 3 * y2) * x * z,
        3 / 16 * SQ(35 / pi) * (x2 * (x2 - 3 * y2) - y2 * (3 * x2 - y2)),
    ], axis=-1)


def fibonacci_sphere(n):
    """Quasi-uniform unit points."""
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + SQ(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def rot9_matches_sampling(R, a, n_points=128):
    """Max pointwise gap between rotating coefficients and rotating the function."""
    R = np.asarray(R, dtype=float)
    P = fibonacci_sphere(n_points)
    lhs = sh_basis_eval(P) @ (rot9(R) @ a)
    Q = R.T if ACTIVE_CONVENTION else R
    rhs = sh_basis_eval(P @ Q.T) @ a
    return float(np.abs(lhs - rhs).max())


def _octahedral_group():
    mats = []
    import itertools
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            M = np.zeros((3, 3))
            M[range(3), perm] = signs
            if np.linalg.det(M) > 0:
                mats.append(M)
    mats.sort(key=lambda M: (-np.trace(M), tuple(M.ravel())))
    return np.array(mats)


#: the 24 rotations of the cube, identity first; fixed enumeration order
OCTAHEDRAL = _octahedral_group()


def _cayley():
    G = OCTAHEDRAL
    prod = np.einsum("aij,bjk->abik", G, G)
    table = np.full((24, 24), -1, dtype=int)
    for a in range(24):
        for b in range(24):
            hits = np.nonzero(np.abs(G - prod[a, b]).sum(axis=(1, 2)) < 1e-9)[0]
            if len(hits) != 1:
                raise RuntimeError("octahedral group is not closed")
            table[a, b] = hits[0]
    return table


#: ``GROUP_MUL[a, b]`` is the index of ``OCTAHEDRAL[a] @ OCTAHEDRAL[b]``
GROUP_MUL = _cayley()
GROUP_INV = np.argmax(GROUP_MUL == 0, axis=1)
