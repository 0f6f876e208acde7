"""Command line entry point: ``sbmrom <command> --config FILE [--set section.key=value ...]``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import PRESETS, load_config
from .io import read_report, write_vtk
from .pipeline import (export_fields, make_mesh, make_surrogate, run_offline, run_online,
                       run_supremizers)
from .solver import newton_solve


def _parse_mu(text: str) -> tuple[float, float, float]:
    vals = tuple(float(t) for t in text.replace(",", " ").split())
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("mu needs three numbers mu0,mu1,mu2")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"INI file or preset name ({', '.join(PRESETS)})")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config entry")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="sbmrom", description="Shifted-boundary POD-Galerkin ROM for channel flow")
    sub = p.add_subparsers(dest="command", required=True)
    m = sub.add_parser("mesh", parents=[common], help="build the background mesh and classify a geometry")
    m.add_argument("--mu", type=_parse_mu, help="parameter to classify")
    m.add_argument("--vtk", type=Path, help="write the mesh (and level set) to this VTK file")
    f = sub.add_parser("fom", parents=[common], help="full-order solve at one parameter")
    f.add_argument("--mu", type=_parse_mu, required=True)
    f.add_argument("--vtk", type=Path, help="write the solution to this VTK file")
    sub.add_parser("offline", parents=[common], help="training solves, POD, persistence")
    sub.add_parser("supremizer", parents=[common], help="supremizers for a stored basis")
    o = sub.add_parser("online", parents=[common], help="reduced solves over the test set")
    o.add_argument("--basis", type=Path, help="directory holding the offline artifacts")
    o.add_argument("--mu", type=_parse_mu, action="append", help="test parameter (repeatable)")
    o.add_argument("--supremizers", action="store_true", help="enrich the velocity basis")
    r = sub.add_parser("report", parents=[common], help="summarize report CSV files")
    r.add_argument("files", nargs="*", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        return _COMMANDS[args.command](cfg, args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"sbmrom {args.command}: error: {exc}", file=sys.stderr)
        return 2


def _cmd_mesh(cfg, args) -> int:
    mesh = make_mesh(cfg)
    print(f"mesh {mesh.signature()}: {mesh.n_nodes} nodes, {mesh.n_elements} triangles, "
          f"h = {mesh.h:.6g}, {3 * mesh.n_nodes} dofs")
    data = {}
    if args.mu is not None:
        s = make_surrogate(cfg, mesh, args.mu)
        print(f"mu = {args.mu}: {int(s.active.sum())} active triangles, "
              f"{len(s.obstacle)} surrogate edges, active area {s.active_area:.6g}")
        data = {"level_set": s.phi, "active": s.active_nodes.astype(float)}
    if args.vtk:
        write_vtk(args.vtk, mesh.nodes, mesh.triangles, data)
        print(f"wrote {args.vtk}")
    return 0


def _cmd_fom(cfg, args) -> int:
    mesh = make_mesh(cfg)
    s = make_surrogate(cfg, mesh, args.mu)
    t0 = time.perf_counter()
    trace = newton_solve(s, cfg.fluid, cfg.boundary, cfg.stabilization, cfg.newton, mu=args.mu)
    dt = time.perf_counter() - t0
    rel = trace.residual_norms[-1] / trace.residual_norms[0]
    print(f"converged={trace.converged} iterations={trace.n_iterations} "
          f"|R|/|R0|={rel:.3e} time={dt:.2f}s")
    if args.vtk:
        export_fields(args.vtk, mesh, s, trace.solution)
        print(f"wrote {args.vtk}")
    return 0 if trace.converged else 1


def _cmd_offline(cfg, args) -> int:
    res = run_offline(cfg)
    print(f"offline: {res.n_converged} converged, {res.n_failed} failed, "
          f"{res.n_snapshots} snapshots, basis ({res.basis.n_u}, {res.basis.n_p}) in {res.out_dir}")
    return 0


def _cmd_supremizer(cfg, args) -> int:
    block = run_supremizers(cfg)
    print(f"supremizer: stored {block.L_sup.shape[1]} vectors in {cfg.output_dir}")
    return 0


def _cmd_online(cfg, args) -> int:
    report = run_online(cfg, basis_dir=args.basis, mus=args.mu, supremizers=args.supremizers)
    _print_summary(report.rows)
    return 0 if all(report.converged) else 1


def _print_summary(rows) -> None:
    print(f"{'N':>5} {'mean e_u':>12} {'mean e_p':>12} {'mean t_online':>14} {'mean t_fom':>11} {'runs':>5}")
    for N in sorted({r["N"] for r in rows}):
        sel = [r for r in rows if r["N"] == N]
        mean = {k: float(np.mean([r[k] for r in sel])) for k in ("e_u", "e_p", "t_online_s", "t_fom_s")}
        print(f"{N:>5} {mean['e_u']:>12.4e} {mean['e_p']:>12.4e} {mean['t_online_s']:>14.3f} "
              f"{mean['t_fom_s']:>11.3f} {len(sel):>5}")


def _cmd_report(cfg, args) -> int:
    files = args.files or [p for p in (cfg.output_dir / "report.csv", cfg.output_dir / "report_sup.csv")
                           if p.exists()]
    if not files:
        raise FileNotFoundError(f"no report files given or found in {cfg.output_dir}")
    for path in files:
        print(f"== {path}")
        _print_summary(read_report(path))
    return 0


_COMMANDS = {"mesh": _cmd_mesh, "fom": _cmd_fom, "offline": _cmd_offline,
             "supremizer": _cmd_supremizer, "online": _cmd_online, "report": _cmd_report}


if __name__ == "__main__":
    sys.exit(main())
