"""Command line: ``ksafc {blowup,converge,run,mesh-dump}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .assembly import Operators
from .config import RunConfig, build_config, read_config_file
from .experiments import run_blowup, run_convergence, simulate
from .mesh import MeshError, build_uniform_unit_square, quality, write_mesh
from .output import write_fields_csv, write_vtk
from .sparsela import SolverError, write_coordinate
from .stepper import StepFailure

log = logging.getLogger("ksafc")

# per-subcommand defaults, below config file and flags
DEFAULTS = {
    "blowup": dict(M=120, ic="blowup", k_rule="blowup"),
    "converge": dict(ic="gauss5", T=0.01),
    "run": dict(M=20, ic="gauss5", k_rule="h2/2", T=0.01),
    "mesh-dump": dict(M=10),
}


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", type=Path, help="key=value file; flags override it")
    g.add_argument("--M", type=int)
    g.add_argument("--scheme", choices=["standard", "low", "afc"])
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--k", type=float, help="explicit time step (overrides --k-rule)")
    g.add_argument("--k-rule", dest="k_rule", help="blowup | h/<c> | h2/<c>")
    g.add_argument("--T", type=float)
    g.add_argument("--steps", type=int)
    g.add_argument("--q", help="gamma-sum-d | gamma-m-nu:<nu> | m-over-k")
    g.add_argument("--fp-tol", dest="fp_tol", type=float)
    g.add_argument("--fp-max-iters", dest="fp_max_iters", type=int)
    g.add_argument("--solver", choices=["direct", "iterative", "auto"])
    g.add_argument("--coupling", choices=["iterate", "previous"])
    g.add_argument("--ic", choices=["blowup", "gauss5", "sincos"])
    g.add_argument("--out", type=Path)
    g.add_argument("--ref-M", dest="ref_M", type=int)
    g.add_argument("--ref-k", dest="ref_k", type=float)
    g.add_argument("--vtk", action="store_const", const=True)
    g.add_argument("-v", "--verbose", action="count", default=0)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ksafc", description="Keller-Segel P1 solver with flux correction")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("blowup", help="positivity demo on concentrated initial data")
    _common(p)
    p = sub.add_parser("converge", help="convergence study against a fine reference")
    _common(p)
    p.add_argument("--resolutions", type=lambda s: tuple(int(x) for x in s.split(",")),
                   help="comma separated, e.g. 10,20,40")
    p.add_argument("--norms", default="L2,H1")
    p.add_argument("--schemes", default="standard,low,afc")
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("run", help="single scheme run with field output")
    _common(p)
    p = sub.add_parser("mesh-dump", help="write mesh, quality and assembled matrices")
    _common(p)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS[args.command])
    if args.config is not None:
        values.update(read_config_file(args.config))
    flags = {name: getattr(args, name) for name in (
        "M", "scheme", "lam", "k", "k_rule", "T", "steps", "q", "fp_tol", "fp_max_iters",
        "solver", "coupling", "ic", "out", "ref_M", "ref_k", "vtk")}
    if flags["k_rule"] is not None:
        values.pop("k", None)  # a --k-rule flag beats a k from the file
    if getattr(args, "resolutions", None):
        flags["resolutions"] = args.resolutions
    values.update({k: v for k, v in flags.items() if v is not None})
    return build_config(values)


def _cmd_blowup(cfg: RunConfig, args) -> int:
    reports = run_blowup(cfg)
    print("scheme    min u (final)      min u (all steps)   min u on y=0.5    #neg  mass drift  positive")
    for scheme, rep in reports.items():
        print(f"{scheme.value:9s} {rep.final_min_alpha: .6e}  {rep.min_alpha.min(): .6e}     "
              f"{rep.line_min_alpha: .6e}  {len(rep.negative_nodes):5d}  {rep.mass_drift:.2e}    {rep.positive}")
    return 0


def _cmd_converge(cfg: RunConfig, args) -> int:
    norms = tuple(n.strip() for n in args.norms.split(",") if n.strip())
    schemes = tuple(s.strip() for s in args.schemes.split(",") if s.strip())
    study = run_convergence(cfg, schemes=schemes, norms=norms, workers=args.workers)
    for norm, rows in study.tables.items():
        print(f"\n{norm} errors, ic={cfg.ic}, reference M={study.reference_M} k={study.reference_k:g}")
        print("   M        k     " + "".join(f"{s:>14s} {'order':>7s}" for s in study.schemes))
        for row in rows:
            line = f"{row.M:4d} {row.k:10.3e}"
            for s in study.schemes:
                o = "" if row.orders is None else f"{row.orders[s][norm]:.4f}"
                line += f" {row.errors[s][norm]:14.6e} {o:>7s}"
            print(line)
    worst = max(st.max_iterations for st in study.stats.values())
    print(f"\nmax fixed-point iterations per step: {worst}")
    return 0


def _cmd_run(cfg: RunConfig, args) -> int:
    mesh, ops, result = simulate(cfg)
    st = result.final
    print(f"scheme={cfg.scheme.value} M={mesh.resolution} steps={len(result.reports)} t={st.time:.6g}")
    print(f"min u={st.alpha.min():.6e} max u={st.alpha.max():.6e} min c={st.beta.min():.6e}")
    print(f"mass drift={result.mass_drift:.3e} max fixed-point iterations={result.iterations.max(initial=0)}")
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_fields_csv(cfg.out / f"fields_{cfg.scheme.value}.csv", mesh, st)
        if cfg.vtk:
            write_vtk(cfg.out / f"fields_{cfg.scheme.value}.vtk", mesh, st)
        np.savetxt(cfg.out / f"monitor_{cfg.scheme.value}.csv",
                   np.column_stack([np.arange(len(result.masses)), result.masses, result.min_alpha,
                                    result.min_beta]),
                   fmt=["%d", "%.17g", "%.17g", "%.17g"], delimiter=",",
                   header="step,mass,min_u,min_c", comments="")
    return 0


def _cmd_mesh_dump(cfg: RunConfig, args) -> int:
    mesh = build_uniform_unit_square(cfg.M)
    q = quality(mesh)
    print(f"M={cfg.M} nodes={mesh.n_nodes} triangles={mesh.n_triangles} h_max={q.h_max:.6g} "
          f"max angle={np.degrees(q.max_interior_angle):.4f} deg gamma range=[{q.gamma.min():.4g}, {q.gamma.max():.4g}]")
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_mesh(mesh, cfg.out / "nodes.txt", cfg.out / "triangles.txt")
        ops = Operators.build(mesh)
        write_coordinate(ops.M, cfg.out / "mass.txt")
        write_coordinate(ops.S, cfg.out / "stiffness.txt")
        np.savetxt(cfg.out / "lumped_mass.txt", ops.lumped, fmt="%.17g")
    return 0


COMMANDS = {"blowup": _cmd_blowup, "converge": _cmd_converge, "run": _cmd_run, "mesh-dump": _cmd_mesh_dump}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        parser.error(str(exc))
    try:
        return COMMANDS[args.command](cfg, args)
    except (StepFailure, SolverError) as exc:
        print(f"ksafc: {exc}", file=sys.stderr)
        return 1
    except (MeshError, ValueError, OSError) as exc:
        print(f"ksafc: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
