"""Offline (sample, solve, compress) and online (reduce, compare, report) stages."""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .geometry import ParameterMap, SurrogateDomain, classify
from .io import read_matrix, write_matrix, write_report, write_spectrum, write_vtk
from .mesh import BackgroundMesh, build_background_mesh, mass_structure
from .pod import PodBasis, build_basis, collect_snapshots
from .rom import SupremizerBlock, enrich_with, relative_error, rom_newton_solve, supremizer_vectors
from .solver import newton_solve, split_state

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


def sample_parameters(ranges, n: int, seed: int) -> np.ndarray:
    """Uniform i.i.d. draws, one row per sample, from ``default_rng(seed)``.

    ``ranges`` is a :class:`ParameterMap` or a sequence of ``(lo, hi)`` pairs;
    degenerate ranges ``(a, a)`` yield exactly ``a``.
    """
    if isinstance(ranges, ParameterMap):
        ranges = ranges.ranges
    r = np.asarray(ranges, dtype=float).reshape(-1, 2)
    if n < 1:
        raise ValueError("need at least one sample")
    if np.any(r[:, 1] < r[:, 0]):
        raise ValueError(f"empty parameter range in {r.tolist()}")
    rng = np.random.default_rng(seed)
    u = rng.random((n, len(r)))
    out = r[:, 0] + u * (r[:, 1] - r[:, 0])
    fixed = r[:, 1] == r[:, 0]
    out[:, fixed] = r[fixed, 0]
    return out


def make_mesh(cfg: RunConfig) -> BackgroundMesh:
    return build_background_mesh(cfg.bounds, cfg.h)


def make_surrogate(cfg: RunConfig, mesh: BackgroundMesh, mu) -> SurrogateDomain:
    return classify(mesh, cfg.parameter_map.box(mu))


def _fom_task(args):
    cfg, mesh, mu = args
    surrogate = make_surrogate(cfg, mesh, mu)
    t0 = time.perf_counter()
    trace = newton_solve(surrogate, cfg.fluid, cfg.boundary, cfg.stabilization, cfg.newton, mu=mu)
    return trace, time.perf_counter() - t0


def solve_many(cfg: RunConfig, mesh: BackgroundMesh, mus) -> list:
    """FOM traces and wall times for each parameter, in input order."""
    tasks = [(cfg, mesh, tuple(float(m) for m in mu)) for mu in mus]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_fom_task, tasks))
    return [_fom_task(t) for t in tasks]


def pod_mass(cfg: RunConfig, mesh: BackgroundMesh, train_mus=None):
    """Inner product for POD: the whole mesh, or elements active for every training geometry."""
    if cfg.inner_product == "full":
        return mass_structure(mesh)
    if train_mus is None:
        train_mus = sample_parameters(cfg.parameter_map, cfg.n_train, cfg.train_seed)
    common = np.ones(mesh.n_elements, dtype=bool)
    for mu in train_mus:
        common &= make_surrogate(cfg, mesh, mu).active
    return mass_structure(mesh, common)


def _basis_meta(basis: PodBasis, block: str) -> dict:
    lam = basis.lam_u if block == "u" else basis.lam_p
    dom = basis.dominant_u if block == "u" else basis.dominant_p
    return {"block": block, "eigenvalues": [float(x) for x in lam],
            "dominant_snapshot": [int(x) for x in dom],
            "inner_product": basis.inner_product, "mesh_signature": basis.mesh_signature,
            "provenance": basis.provenance if block == "p" else []}


def save_basis(basis: PodBasis, out: Path) -> None:
    write_matrix(out / "basis_u.srom", basis.L_u, _basis_meta(basis, "u"))
    write_matrix(out / "basis_p.srom", basis.L_p, _basis_meta(basis, "p"))


def load_basis(out) -> PodBasis:
    out = Path(out)
    if not (out / "basis_u.srom").exists():
        raise FileNotFoundError(f"no basis found in {out}; run the offline stage first")
    L_u, mu_ = read_matrix(out / "basis_u.srom")
    L_p, mp = read_matrix(out / "basis_p.srom")
    return PodBasis(L_u=L_u, L_p=L_p, lam_u=np.array(mu_["eigenvalues"]), lam_p=np.array(mp["eigenvalues"]),
                    inner_product=mu_["inner_product"], mesh_signature=mu_["mesh_signature"],
                    dominant_u=np.array(mu_["dominant_snapshot"], dtype=int),
                    dominant_p=np.array(mp["dominant_snapshot"], dtype=int),
                    provenance=mp["provenance"])


@dataclass
class OfflineResult:
    basis: PodBasis
    n_snapshots: int
    n_converged: int
    n_failed: int
    t_fom: list
    out_dir: Path
    supremizers: SupremizerBlock | None = None


def run_offline(cfg: RunConfig, out_dir=None) -> OfflineResult:
    """Solve the training set, compress, and persist snapshots, spectra and bases."""
    out = Path(out_dir or cfg.output_dir)
    mesh = make_mesh(cfg)
    mus = sample_parameters(cfg.parameter_map, cfg.n_train, cfg.train_seed)
    log.info("offline: %d training samples on %s", len(mus), mesh.signature())
    results = solve_many(cfg, mesh, mus)
    traces = [r[0] for r in results]
    n_ok = sum(t.converged for t in traces)
    for t in traces:
        if not t.converged:
            log.warning("training solve at mu=%s did not converge; excluded", t.mu)
    if n_ok == 0:
        raise PipelineError("no training solve converged")
    surrogates = [make_surrogate(cfg, mesh, mu) for mu in mus]
    snaps = collect_snapshots(traces, surrogates, mode=cfg.snapshot_mode, band=cfg.ghost_band)
    mass = pod_mass(cfg, mesh, mus)
    basis = build_basis(snaps, mass, n_u=None if cfg.energy else cfg.n_modes, energy=cfg.energy,
                        inner_product=cfg.inner_product, mesh_signature=mesh.signature())
    write_matrix(out / "snapshots_u.srom", snaps.S_u, {"provenance": snaps.provenance})
    write_matrix(out / "snapshots_p.srom", snaps.S_p, {"provenance": snaps.provenance})
    write_spectrum(out / "spectrum_u.csv", basis.lam_u)
    write_spectrum(out / "spectrum_p.csv", basis.lam_p)
    save_basis(basis, out)
    result = OfflineResult(basis=basis, n_snapshots=snaps.n_snapshots, n_converged=n_ok,
                           n_failed=len(traces) - n_ok, t_fom=[r[1] for r in results], out_dir=out)
    if cfg.supremizers:
        result.supremizers = run_supremizers(cfg, out, basis=basis, mesh=mesh)
    summary = {"config_hash": cfg.config_hash, "version": __version__, "n_train": len(mus),
               "n_converged": n_ok, "n_snapshots": snaps.n_snapshots,
               "n_u": basis.n_u, "n_p": basis.n_p, "t_fom_total_s": float(sum(result.t_fom))}
    (out / "offline.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    log.info("offline: %d/%d converged, %d snapshots, basis (%d, %d)",
             n_ok, len(mus), snaps.n_snapshots, basis.n_u, basis.n_p)
    return result


def run_supremizers(cfg: RunConfig, out_dir=None, basis: PodBasis | None = None,
                    mesh: BackgroundMesh | None = None) -> SupremizerBlock:
    """Compute raw supremizers for the leading pressure modes and store them."""
    out = Path(out_dir or cfg.output_dir)
    basis = basis or load_basis(out)
    mesh = mesh or make_mesh(cfg)
    _check_signature(basis, mesh)
    count = min(cfg.n_supremizers, basis.n_p)
    block = supremizer_vectors(basis, lambda mu: make_surrogate(cfg, mesh, mu), count,
                               gamma=cfg.stabilization.gamma, band=cfg.ghost_band)
    write_matrix(out / "supremizers.srom", block.L_sup, {"source_modes": block.source_modes})
    log.info("stored %d supremizer vectors", block.L_sup.shape[1])
    return block


def load_supremizers(out) -> SupremizerBlock:
    path = Path(out) / "supremizers.srom"
    if not path.exists():
        raise FileNotFoundError(f"no supremizers in {out}; run the supremizer stage first")
    L, meta = read_matrix(path)
    return SupremizerBlock(L_sup=L, source_modes=list(meta["source_modes"]))


def _check_signature(basis: PodBasis, mesh: BackgroundMesh) -> None:
    if basis.mesh_signature != mesh.signature():
        raise ValueError(f"basis mesh {basis.mesh_signature!r} does not match configured mesh "
                         f"{mesh.signature()!r}")


@dataclass
class StudyReport:
    rows: list = field(default_factory=list)
    spectra: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    field_errors: dict = field(default_factory=dict)
    converged: list = field(default_factory=list)

    def mean_errors(self) -> dict:
        """``N -> (mean e_u, mean e_p)`` over the test parameters."""
        out = {}
        for N in sorted({r["N"] for r in self.rows}):
            sel = [r for r in self.rows if r["N"] == N]
            out[N] = (float(np.mean([r["e_u"] for r in sel])), float(np.mean([r["e_p"] for r in sel])))
        return out


def run_online(cfg: RunConfig, basis_dir=None, mus=None, supremizers: bool = False,
               report_name: str | None = None) -> StudyReport:
    """Reduced solves over the test parameters and the configured N sweep.

    ``mus`` defaults to ``n_test`` draws with the test seed. Offline artifacts
    are only read. The report CSV is written to the output directory.
    """
    basis_dir = Path(basis_dir or cfg.output_dir)
    out = Path(cfg.output_dir)
    mesh = make_mesh(cfg)
    basis = load_basis(basis_dir)
    _check_signature(basis, mesh)
    sup = load_supremizers(basis_dir) if supremizers else None
    mass = pod_mass(cfg, mesh) if supremizers else None
    if mus is None:
        mus = sample_parameters(cfg.parameter_map, cfg.n_test, cfg.test_seed)
    report = StudyReport(provenance={"config_hash": cfg.config_hash, "version": __version__,
                                     "mesh": mesh.signature(), "supremizers": supremizers},
                         spectra={"u": basis.lam_u.tolist(), "p": basis.lam_p.tolist()},
                         timings={"fom": [], "online": []})
    sweep = [int(N) for N in cfg.n_sweep]
    for N in sweep:
        if N > basis.n_u:
            raise ValueError(f"N={N} exceeds the stored basis size {basis.n_u}")
    for mu in mus:
        mu = tuple(float(m) for m in mu)
        if not sweep:
            continue
        surrogate = make_surrogate(cfg, mesh, mu)
        U_fom, t_fom = None, float("nan")
        if cfg.compare_fom:
            t0 = time.perf_counter()
            trace = newton_solve(surrogate, cfg.fluid, cfg.boundary, cfg.stabilization, cfg.newton, mu=mu)
            t_fom = time.perf_counter() - t0
            U_fom = trace.solution
            report.timings["fom"].append(t_fom)
        active_mass = mass_structure(mesh, surrogate.active)
        for N in sweep:
            b = basis.truncated(N, min(N, basis.n_p))
            if sup is not None:
                keep = [k for k, s in enumerate(sup.source_modes) if s < b.n_p]
                b, _ = enrich_with(b, SupremizerBlock(sup.L_sup[:, keep], [sup.source_modes[k] for k in keep]),
                                   mass)
            res = rom_newton_solve(surrogate, b, cfg.fluid, cfg.boundary, cfg.stabilization,
                                   cfg.newton, mu=mu)
            report.timings["online"].append(res.t_total)
            report.converged.append(res.converged)
            e_u = e_p = float("nan")
            if U_fom is not None:
                e_u, e_p = relative_error(U_fom, res.U, active_mass)
            report.rows.append({"mu0": mu[0], "mu1": mu[1], "mu2": mu[2], "N": N, "e_u": e_u,
                                "e_p": e_p, "t_online_s": res.t_total, "t_fom_s": t_fom,
                                "iters": res.n_iterations})
            log.info("online mu=%s N=%d: e_u=%.3e e_p=%.3e iters=%d (%.2fs)",
                     mu, N, e_u, e_p, res.n_iterations, res.t_total)
        if U_fom is not None:
            err = np.abs(U_fom - res.U).reshape(-1, 3)
            err[~surrogate.active_nodes] = 0.0
            inf = float(err[:, :2].max())
            report.field_errors[mu] = inf
            log.info("online mu=%s N=%d: max nodal velocity error %.6e", mu, sweep[-1], inf)
            if cfg.export_fields:
                tag = "_".join(f"{m:.4f}" for m in mu)
                export_fields(out / "fields" / f"mu_{tag}.vtk", mesh, surrogate, U_fom, res.U)
    name = report_name or ("report_sup.csv" if supremizers else "report.csv")
    write_report(out / name, report.rows)
    return report


def export_fields(path, mesh: BackgroundMesh, surrogate: SurrogateDomain, U_fom, U_rom=None) -> Path:
    """VTK file with FOM (and optionally ROM and nodal error) fields."""
    uf, pf = split_state(U_fom)
    data = {"velocity_fom": uf, "pressure_fom": pf, "level_set": np.where(np.isfinite(surrogate.phi), surrogate.phi, 0.0),
            "active": surrogate.active_nodes.astype(float)}
    if U_rom is not None:
        ur, pr = split_state(U_rom)
        mask = surrogate.active_nodes.astype(float)
        data.update({"velocity_rom": ur, "pressure_rom": pr,
                     "velocity_error": np.linalg.norm(uf - ur, axis=1) * mask,
                     "velocity_error_max_component": np.abs(uf - ur).max(axis=1) * mask,
                     "pressure_error": np.abs(pf - pr) * mask})
    return write_vtk(path, mesh.nodes, mesh.triangles, data)
