"""Command-line front end: ``framefield {design3d,design2d,selftest,landscape}``."""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import field2d, field3d
from .mesh import MeshFormatError, MeshTopologyError, load_tet_mesh, load_tri_mesh

log = logging.getLogger("framefield")


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _fmt(x):
    return f"{x:.12g}"


def write_field3(path, fld):
    lines = []
    for i, (a, R) in enumerate(zip(fld.a, fld.frames)):
        lines.append(" ".join([str(i)] + [_fmt(v) for v in a] + [_fmt(v) for v in R.ravel()]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_field2(path, fld):
    lines = [f"{i} {_fmt(a[0])} {_fmt(a[1])} {_fmt(t)}" for i, (a, t) in enumerate(zip(fld.a, fld.theta))]
    Path(path).write_text("\n".join(lines) + "\n")


def write_lines(path, items):
    Path(path).write_text("".join(f"{x}\n" for x in items))


def write_viz(path, points, axes, scale):
    """Legacy ASCII VTK: one line segment through each vertex per frame axis.

    ``axes`` has shape (n, k, d) with d = 2 or 3.
    """
    n, k, d = axes.shape
    pts = np.zeros((n, k, 2, 3))
    p = np.zeros((n, 3))
    p[:, :d] = points
    dirs = np.zeros((n, k, 3))
    dirs[:, :, :d] = axes
    pts[:, :, 0] = p[:, None] - scale * dirs
    pts[:, :, 1] = p[:, None] + scale * dirs
    pts = pts.reshape(-1, 3)
    m = n * k
    out = ["# vtk DataFile Version 3.0", "frame field", "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(pts)} double"]
    out += [" ".join(_fmt(v) for v in q) for q in pts]
    out.append(f"CELLS {m} {3 * m}")
    out += [f"2 {2 * c} {2 * c + 1}" for c in range(m)]
    out.append(f"CELL_TYPES {m}")
    out += ["3"] * m
    out.append(f"CELL_DATA {m}")
    out.append("SCALARS axis int 1")
    out.append("LOOKUP_TABLE default")
    out += [str(c % k) for c in range(m)]
    Path(path).write_text("\n".join(out) + "\n")


def _prefix(output):
    prefix = Path(output)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    return prefix


def _mean_edge(vertices, edges):
    return float(np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1).mean())


def cmd_design3d(args):
    mesh = _stage("load", load_tet_mesh, args.mesh)
    fld, report = _stage("optimize", field3d.optimize3, mesh, n_iter=args.iters, lam=args.lam,
                         crease_threshold=np.radians(args.crease_deg), hilbert=args.hilbert,
                         tol=args.tol, max_iter=args.max_cg)
    prefix = _prefix(args.output)
    write_field3(f"{prefix}.field", fld)
    write_lines(f"{prefix}.sing", fld.singularities.tets.tolist())
    Path(f"{prefix}.report.json").write_text(report.to_json())
    if args.viz:
        write_viz(f"{prefix}.viz.vtk", mesh.vertices, np.swapaxes(fld.frames, 1, 2),
                  0.3 * _mean_edge(mesh.vertices, mesh.edges))
    print(f"E = {report.energy:.6g}, curvature = {report.curvature:.6g}, "
          f"singular tets = {report.n_singular}, boundary deviation avg/max = "
          f"{report.boundary_deviation_avg:.3g}/{report.boundary_deviation_max:.3g} "
          f"({report.wall_time:.2f} s)")
    return 0


def cmd_design2d(args):
    mesh = _stage("load", load_tri_mesh, args.mesh)
    fld, report = _stage("optimize", field2d.optimize2, mesh, n_iter=args.iters, lam=args.lam,
                         single_boundary_eq=args.single_boundary_eq, tol=args.tol,
                         max_iter=args.max_cg)
    hit, idx = field2d.singular_triangles(fld.theta, mesh)
    prefix = _prefix(args.output)
    write_field2(f"{prefix}.field", fld)
    write_lines(f"{prefix}.sing", [f"{t} {k}" for t, k in zip(hit.tolist(), idx.tolist())])
    report.extra["single_boundary_eq"] = bool(args.single_boundary_eq)
    report.extra["boundary_misaligned"] = bool(report.boundary_deviation_max > 0.1)
    Path(f"{prefix}.report.json").write_text(report.to_json())
    if args.viz:
        t = fld.theta[:, None] + np.array([0.0, np.pi / 2])
        axes = np.stack([np.cos(t), np.sin(t)], axis=2)
        write_viz(f"{prefix}.viz.vtk", mesh.vertices, axes, 0.3 * _mean_edge(mesh.vertices, mesh.edges))
    print(f"E = {report.energy:.6g}, curvature = {report.curvature:.6g}, "
          f"singular triangles = {report.n_singular}, max boundary misalignment = "
          f"{report.boundary_deviation_max:.3g} rad")
    if report.extra["boundary_misaligned"]:
        print("warning: boundary frames deviate from their normals by more than 0.1 rad")
    return 0


def cmd_selftest(args):
    from .selftest import run_checks

    t0 = time.perf_counter()
    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print(f"{sum(ok for _, ok, _ in results)}/{len(results)} checks passed "
          f"in {time.perf_counter() - t0:.2f} s")
    return 0 if all(ok for _, ok, _ in results) else 1


def cmd_landscape(args):
    g, curv, energy = field2d.landscape(args.left, args.right, args.grid)
    rows = ["theta1,theta2,curvature,energy"]
    for i in range(len(g)):
        for j in range(len(g)):
            rows.append(f"{_fmt(g[i])},{_fmt(g[j])},{_fmt(curv[i, j])},{_fmt(energy[i, j])}")
    text = "\n".join(rows) + "\n"
    info = sys.stdout
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
        info = sys.stderr
    for name, S in (("curvature", curv), ("energy", energy)):
        mins = field2d.grid_local_minima(S)
        desc = ", ".join(f"({i},{j}) theta=({g[i]:.4f},{g[j]:.4f}) value={S[i, j]:.6g}" for i, j in mins)
        print(f"{name} minima [{len(mins)}]: {desc}", file=info)
    return 0


def _positive(x):
    v = float(x)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _non_negative_int(x):
    v = int(x)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="framefield", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("mesh", help="ASCII MEDIT mesh")
        sp.add_argument("-o", "--output", required=True, help="output prefix")
        sp.add_argument("--iters", type=_non_negative_int, default=3, help="smoothing iterations")
        sp.add_argument("--lambda", dest="lam", type=_positive, default=100.0, help="penalty weight")
        sp.add_argument("--tol", type=_positive, default=1e-10, help="CG relative tolerance")
        sp.add_argument("--max-cg", type=_non_negative_int, default=None, help="CG iteration cap")
        sp.add_argument("--viz", action="store_true", help="also write <prefix>.viz.vtk")

    d3 = sub.add_parser("design3d", help="frame field on a tet mesh")
    solver_flags(d3)
    d3.add_argument("--crease-deg", type=_positive, default=45.0, help="crease threshold (degrees)")
    d3.add_argument("--hilbert", action="store_true", help="Hilbert-sort vertex blocks")
    d3.set_defaults(func=cmd_design3d)

    d2 = sub.add_parser("design2d", help="frame field on a planar triangulation")
    solver_flags(d2)
    d2.add_argument("--single-boundary-eq", action="store_true",
                    help="use the one-equation boundary constraint (demonstrates misalignment)")
    d2.set_defaults(func=cmd_design2d)

    st = sub.add_parser("selftest", help="check the rotation matrices")
    st.set_defaults(func=cmd_selftest)

    ls = sub.add_parser("landscape", help="objective landscape of the locked 4-vertex chain")
    ls.add_argument("--left", type=float, default=field2d.TOY_LOCKED[0])
    ls.add_argument("--right", type=float, default=field2d.TOY_LOCKED[1])
    ls.add_argument("--grid", type=int, default=64)
    ls.add_argument("-o", "--output", help="CSV path (default stdout)")
    ls.set_defaults(func=cmd_landscape)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        msg = str(exc) if "cannot open" in str(exc) else f"cannot open {exc.filename}: {exc.strerror}"
        print(f"framefield: {msg}", file=sys.stderr)
        return 2
    except StageError as exc:
        kind = "input" if isinstance(exc.__cause__, (MeshFormatError, MeshTopologyError)) else "failure"
        print(f"framefield: {kind} in stage {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"framefield: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
