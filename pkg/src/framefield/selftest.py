"""Numerical checks of the degree-4 rotation machinery, runnable from the CLI.

Constants are looked up on the ``sh`` module at call time, so a patched
constant (e.g. a corrupted generator) is caught.
"""

import numpy as np

from . import sh


def _check_quarter_turn():
    M = sh.rot_x_quarter_9()
    orth = np.abs(M.T @ M - np.eye(9)).max()
    order = np.abs(np.linalg.matrix_power(M, 4) - np.eye(9)).max()
    fix = np.abs(M @ sh.A_REF - sh.A_REF).max()
    return max(orth, order, fix) < 1e-12, f"orth {orth:.1e}, M^4 {order:.1e}, fixes a_ref {fix:.1e}"


def _check_euler_orthogonal(rng, n=1000):
    ang = rng.uniform(-np.pi, np.pi, size=(n, 3))
    D = sh.rot_9_from_euler(ang[:, 0], ang[:, 1], ang[:, 2])
    orth = np.abs(np.swapaxes(D, 1, 2) @ D - np.eye(9)).max()
    norm = np.abs(np.linalg.norm(D @ sh.A_REF, axis=1) - 1).max()
    return orth < 1e-10 and norm < 1e-10, f"orth {orth:.1e}, |D a_ref| - 1 {norm:.1e}"


def _check_symmetries():
    err = np.abs(sh.rot9(sh.OCTAHEDRAL) @ sh.A_REF - sh.A_REF).max()
    return err < 1e-10, f"max |S a_ref - a_ref| {err:.1e} over {len(sh.OCTAHEDRAL)} rotations"


def _check_generators(h=1e-5):
    EX, EY, EZ = sh.generators()
    worst = 0.0
    ratios = []
    for rot, E in ((sh.rot_x_9, EX), (sh.rot_y_9, EY), (sh.rot_z_9, EZ)):
        e1 = np.abs((rot(h) - np.eye(9)) / h - E).max()
        e2 = np.abs((rot(h / 2) - np.eye(9)) / (h / 2) - E).max()
        worst = max(worst, e1)
        ratios.append(e2 / e1 if e1 > 0 else 0.5)
    halving = all(abs(r - 0.5) < 0.1 for r in ratios)
    return worst < 1e-4 and halving, f"slope error {worst:.1e}, halving ratios {np.round(ratios, 3).tolist()}"


def _check_homomorphism(rng, n=50):
    worst = 0.0
    for _ in range(n):
        a1, a2 = rng.uniform(-np.pi, np.pi, size=(2, 3))
        R1, R2 = sh.rot3_from_euler(*a1), sh.rot3_from_euler(*a2)
        worst = max(worst, np.abs(sh.rot9(R1 @ R2) - sh.rot9(R1) @ sh.rot9(R2)).max())
    return worst < 1e-9, f"max |D(R1 R2) - D(R1) D(R2)| {worst:.1e}"


def _check_sampling(rng, n=100):
    worst = 0.0
    for _ in range(n):
        R = sh.rot3_from_euler(*rng.uniform(-np.pi, np.pi, 3))
        a = sh.rot9(sh.rot3_from_euler(*rng.uniform(-np.pi, np.pi, 3))) @ sh.A_REF
        worst = max(worst, sh.rot9_matches_sampling(R, a, n_points=100))
    return worst < 1e-9, f"max pointwise gap {worst:.1e}"


def run_checks(seed=0):
    """Return ``[(name, passed, detail), ...]``."""
    rng = np.random.default_rng(seed)
    checks = [
        ("quarter-turn matrix", _check_quarter_turn),
        ("euler rotations orthogonal", lambda: _check_euler_orthogonal(rng)),
        ("octahedral symmetries fix reference", _check_symmetries),
        ("generator finite differences", _check_generators),
        ("homomorphism", lambda: _check_homomorphism(rng)),
        ("function-space sampling", lambda: _check_sampling(rng)),
    ]
    out = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a broken constant can raise anywhere
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
