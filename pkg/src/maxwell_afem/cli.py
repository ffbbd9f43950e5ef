"""Command-line driver.

Subcommands::

    mesh gen     structured cube/box/Fichera mesh to JSON
    mesh import  TetGen .node/.ele pair to JSON
    solve        smallest eigenvalues on one mesh
    study        uniform or adaptive convergence study, CSV output
    fit          log-log slope (and optional extrapolation) of a study CSV
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import study as st
from .eigensolver import solve_smallest
from .fem import DofMap, assemble
from .mesh import DomainSpec, Mesh, generate_structured
from .tetgen import read_tetgen


def _divisions(values):
    if values is None:
        return None
    if len(values) == 1:
        return tuple(values) * 3
    if len(values) != 3:
        raise ValueError("--divisions takes one or three integers")
    return tuple(values)


def _add_mesh_source(p):
    p.add_argument("--domain", default="fichera", help="unit_cube, fichera or box:ax,bx,cx")
    p.add_argument("--divisions", type=int, nargs="+", metavar="N",
                   help="boxes per axis (one value or three); default 4")
    p.add_argument("--mesh", type=Path, help="start from a mesh JSON file instead")


def _domain(args):
    return DomainSpec.from_name(args.domain)


def _mesh(args) -> Mesh:
    if args.mesh is not None:
        return Mesh.from_json(args.mesh.read_text())
    return generate_structured(_domain(args), _divisions(args.divisions) or st.DEFAULT_DIVISIONS)


def _write(text, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_mesh_gen(args):
    mesh = generate_structured(_domain(args), _divisions(args.divisions) or st.DEFAULT_DIVISIONS)
    _write(mesh.to_json() + "\n", args.out)
    print(f"{mesh.n_tets} tets, {mesh.n_vertices} vertices", file=sys.stderr)


def cmd_mesh_import(args):
    mesh = read_tetgen(args.stem)
    _write(mesh.to_json() + "\n", args.out)
    print(f"{mesh.n_tets} tets, {mesh.n_vertices} vertices", file=sys.stderr)


def cmd_solve(args):
    mesh = _mesh(args)
    dofmap = DofMap.from_mesh(mesh)
    system = assemble(mesh, dofmap)
    pairs = solve_smallest(system, nev=args.nev, tol=args.tol, seed=args.seed)
    lines = [f"# {mesh.n_tets} tets, {dofmap.n_dofs} dofs", "k,lambda_h,residual"]
    lines += [f"{k},{p.lambda_h!r},{p.residual!r}" for k, p in enumerate(pairs)]
    _write("\n".join(lines) + "\n", args.out)


def cmd_study(args):
    mesh = Mesh.from_json(args.mesh.read_text()) if args.mesh is not None else None
    domain = _domain(args)
    config = st.StudyConfig(
        domain=domain,
        mode=args.mode,
        theta=args.theta,
        max_iters=args.max_iters,
        max_tets=args.max_tets,
        target_lambda=args.target if args.target is not None else args.lambda_ref,
        lambda_ref=args.lambda_ref,
        nev=args.nev,
        tol=args.tol,
        seed=args.seed,
        divisions=_divisions(args.divisions),
        initial_mesh=mesh,
        record_time=not args.no_timing,
    )
    out = sys.stdout if args.out is None or str(args.out) == "-" else args.out
    try:
        records = st.run_study(config, out)
    except st.StudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if len(records) >= 3:
        slope, _, r2 = st.fit_slope(records, "n_tets", "err_lambda")
        print(f"slope of err_lambda vs n_tets: {slope:.4f} (r2 {r2:.4f})", file=sys.stderr)
    return 0


def cmd_fit(args):
    records = st.read_records(args.csv)
    slope, icpt, r2 = st.fit_slope(records, args.x, args.y, args.skip)
    print(f"slope {slope!r}\nintercept {icpt!r}\nr2 {r2!r}")
    if args.extrapolate:
        ex = st.extrapolate_lambda(records[args.skip:])
        print(f"lambda_ref {ex.lambda_ref!r}\nrate {ex.rate!r}")
    if args.emit_plot is not None:
        xs = st._column(records, args.x)
        ys = st._column(records, args.y)
        lines = [f"# {args.x} {args.y}  fitted slope {slope!r}"]
        lines += [f"{float(x)!r} {float(y)!r}" for x, y in zip(xs, ys)]
        _write("\n".join(lines) + "\n", args.emit_plot)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxwell-afem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="mesh generation and import").add_subparsers(dest="mesh_cmd", required=True)
    gen = mesh.add_parser("gen", help="structured mesh")
    gen.add_argument("--domain", default="fichera")
    gen.add_argument("--divisions", type=int, nargs="+", metavar="N")
    gen.add_argument("--out", type=Path)
    gen.set_defaults(func=cmd_mesh_gen)
    imp = mesh.add_parser("import", help="TetGen .node/.ele import")
    imp.add_argument("stem", type=Path, help="path without extension (or the .node/.ele file)")
    imp.add_argument("--out", type=Path)
    imp.set_defaults(func=cmd_mesh_import)

    solve = sub.add_parser("solve", help="eigenvalues on one mesh")
    _add_mesh_source(solve)
    solve.add_argument("--nev", type=int, default=3)
    solve.add_argument("--tol", type=float, default=1e-8)
    solve.add_argument("--seed", type=int, default=0)
    solve.add_argument("--out", type=Path)
    solve.set_defaults(func=cmd_solve)

    study = sub.add_parser("study", help="convergence study")
    _add_mesh_source(study)
    study.add_argument("--mode", choices=("uniform", "adaptive"), default="adaptive")
    study.add_argument("--theta", type=float, default=0.5)
    study.add_argument("--max-iters", type=int, default=10)
    study.add_argument("--max-tets", type=int, default=200_000)
    study.add_argument("--nev", type=int, default=2)
    study.add_argument("--tol", type=float, default=1e-8)
    study.add_argument("--seed", type=int, default=0)
    study.add_argument("--lambda-ref", type=float, help="reference eigenvalue for err_lambda")
    study.add_argument("--target", type=float, help="eigenvalue to track on the first level")
    study.add_argument("--no-timing", action="store_true", help="write wall_time as 0")
    study.add_argument("--out", type=Path)
    study.set_defaults(func=cmd_study)

    fit = sub.add_parser("fit", help="slope of a study CSV")
    fit.add_argument("csv", type=Path)
    fit.add_argument("--x", default="n_tets")
    fit.add_argument("--y", default="err_lambda")
    fit.add_argument("--skip", type=int, default=0)
    fit.add_argument("--extrapolate", action="store_true", help="also fit lambda + C N^-r")
    fit.add_argument("--emit-plot", type=Path, metavar="FILE",
                     help="write two-column gnuplot data (- for stdout)")
    fit.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
