"""Galerkin-projected Newton iteration and supremizer enrichment."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .geometry import SurrogateDomain
from .mesh import MassStructure
from .pod import PodBasis, block_mass, orthonormalize, state_blocks
from .poisson import PoissonOperator
from .solver import (BoundaryData, FluidParams, LinearSolveError, NewtonSettings,
                     StabilizationParams, assemble_system, extend_to_ghost)

log = logging.getLogger(__name__)


@dataclass
class ReducedState:
    """Reduced velocity coefficients ``a`` and pressure coefficients ``b``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("reduced state must be finite")

    @property
    def V(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    @classmethod
    def from_vector(cls, V, n_u: int) -> "ReducedState":
        V = np.asarray(V, dtype=float)
        return cls(a=V[:n_u], b=V[n_u:])


@dataclass
class SupremizerBlock:
    """Supremizer vectors (velocity layout) and the pressure modes they came from."""

    L_sup: np.ndarray
    source_modes: list


@dataclass
class RomResult:
    states: list
    residual_norms: list
    converged: bool
    U: np.ndarray
    t_assembly: float = 0.0
    t_solve: float = 0.0
    t_total: float = 0.0
    mu: tuple | None = None

    @property
    def n_iterations(self) -> int:
        return len(self.states) - 1


def project_system(J, R, L):
    """Galerkin projection ``(L^T J L, L^T R)`` with dense output."""
    L = np.asarray(L, dtype=float)
    R = np.asarray(R, dtype=float)
    if J.shape != (L.shape[0], L.shape[0]) or R.shape != (L.shape[0],):
        raise ValueError(f"system {J.shape}/{R.shape} does not match lift {L.shape}")
    JL = J @ L
    return L.T @ np.asarray(JL), L.T @ R


def reconstruct(V, basis: PodBasis) -> np.ndarray:
    """Full node-blocked state ``L V``."""
    V = V.V if isinstance(V, ReducedState) else np.asarray(V, dtype=float)
    if V.shape != (basis.size,):
        raise ValueError(f"reduced vector of length {V.shape} does not match basis size {basis.size}")
    return basis.lift() @ V


def rom_newton_solve(surrogate: SurrogateDomain, basis: PodBasis, fp: FluidParams,
                     bd: BoundaryData, sp_: StabilizationParams,
                     settings: NewtonSettings = NewtonSettings(), V0=None, mu=None) -> RomResult:
    """Reduced Newton iteration: full assembly at ``L V``, dense projected solve.

    Rows of inactive nodes are left empty in the full system, so the projected
    equations only see the active part of each mode.
    """
    if basis.n_u < 1:
        raise ValueError("the velocity basis is empty")
    if basis.mesh_signature and basis.mesh_signature != surrogate.mesh.signature():
        raise ValueError("basis was built on a different background mesh")
    t0 = time.perf_counter()
    L = basis.lift()
    V = np.zeros(basis.size) if V0 is None else np.array(V0, dtype=float)
    t_asm = t_sol = 0.0

    def system(V):
        nonlocal t_asm
        ta = time.perf_counter()
        R, J = assemble_system(L @ V, surrogate, fp, bd, sp_, pin_inactive=False,
                               tau_derivative=settings.tau_derivative)
        Jr, Rr = project_system(J, R, L)
        t_asm += time.perf_counter() - ta
        return Jr, Rr

    Jr, Rr = system(V)
    r0 = np.linalg.norm(Rr)
    states = [ReducedState.from_vector(V, basis.n_u)]
    norms = [r0]
    target = max(settings.tol_rel * r0, settings.tol_abs)
    converged = r0 <= target
    it = 0
    while not converged and it < settings.max_iter:
        it += 1
        ts = time.perf_counter()
        try:
            dV = -np.linalg.solve(Jr, Rr)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveError(f"singular reduced system: {exc}", it) from exc
        t_sol += time.perf_counter() - ts
        rn = norms[-1]
        alpha = 1.0
        while True:
            Jt, Rt = system(V + alpha * dV)
            rt = np.linalg.norm(Rt)
            if not settings.line_search or rt < rn or alpha <= 1 / 64:
                break
            alpha *= 0.5
        V = V + alpha * dV
        Jr, Rr = Jt, Rt
        states.append(ReducedState.from_vector(V, basis.n_u))
        norms.append(rt)
        converged = rt <= target
    if not converged:
        log.warning("reduced Newton did not converge at mu=%s (|R|/|R0| = %.2e)",
                    mu, norms[-1] / r0 if r0 else 0.0)
    return RomResult(states=states, residual_norms=norms, converged=converged, U=L @ V,
                     t_assembly=t_asm, t_solve=t_sol, t_total=time.perf_counter() - t0,
                     mu=None if mu is None else tuple(mu))


def relative_error(U_fom, U_rom, m: MassStructure) -> tuple[float, float]:
    """Relative L2 errors ``(e_u, e_p)`` in the inner product of ``m``.

    Pass a mass structure over the active elements of the test geometry.
    """
    uf, pf = state_blocks(U_fom)
    ur, pr = state_blocks(U_rom)
    Mu = block_mass(m, 2)
    M = m.matrix
    den_u = float(uf @ (Mu @ uf))
    den_p = float(pf @ (M @ pf))
    if den_u <= 0 or den_p <= 0:
        raise ValueError("reference fields have zero norm")
    eu, ep = uf - ur, pf - pr
    return (float(np.sqrt(max(eu @ (Mu @ eu), 0.0) / den_u)),
            float(np.sqrt(max(ep @ (M @ ep), 0.0) / den_p)))


def supremizer_vectors(basis: PodBasis, surrogate, count: int, gamma: float = 10.0,
                       band: float = 3.0) -> SupremizerBlock:
    """Solve ``-lap(s) = grad(chi)``, ``s = 0`` on the boundary, for leading pressure modes.

    ``surrogate`` is a surrogate domain or a callable ``mu -> SurrogateDomain``;
    in the latter case each mode is solved on the geometry of its dominant
    snapshot.
    """
    if not 0 <= count <= basis.n_p:
        raise ValueError(f"supremizer count {count} exceeds {basis.n_p} pressure modes")
    domains: dict = {}
    operators: dict = {}
    vectors, sources = [], []
    for i in range(count):
        if callable(surrogate):
            j = int(basis.dominant_p[i]) if basis.dominant_p is not None else 0
            mu = tuple(basis.provenance[j]["mu"])
            if mu not in domains:
                domains[mu] = surrogate(mu)
            dom = domains[mu]
        else:
            dom = surrogate
        key = id(dom)
        try:
            if key not in operators:
                operators[key] = PoissonOperator(dom, gamma=gamma)
            op = operators[key]
            load = op.element_gradient_load(basis.L_p[:, i])
            s = np.column_stack([op.solve(load[:, 0]), op.solve(load[:, 1])])
        except RuntimeError as exc:
            raise RuntimeError(f"supremizer solve failed for pressure mode {i}: {exc}") from exc
        U = np.zeros((dom.mesh.n_nodes, 3))
        U[:, :2] = s
        U = extend_to_ghost(U.ravel(), dom, band)
        vectors.append(state_blocks(U)[0])
        sources.append(i)
    L_sup = np.column_stack(vectors) if vectors else np.zeros((2 * basis.n_nodes, 0))
    return SupremizerBlock(L_sup=L_sup, source_modes=sources)


def enrich_with(basis: PodBasis, block: SupremizerBlock, mass: MassStructure,
                floor: float = 1e-8) -> tuple[PodBasis, SupremizerBlock]:
    """Append raw supremizer vectors to the velocity basis and re-orthonormalize it.

    Vectors whose component outside the current span falls below ``floor``
    (relative) are dropped. Returns the enriched basis and the kept block.
    """
    D = block_mass(mass, 2)
    combined = np.column_stack([basis.L_u, block.L_sup])
    Q, keep = orthonormalize(combined, D, floor=floor)
    kept_sup = [k - basis.n_u for k in keep if k >= basis.n_u]
    if len(keep) - len(kept_sup) != basis.n_u:
        raise ValueError("existing velocity modes are not linearly independent")
    dropped = block.L_sup.shape[1] - len(kept_sup)
    if dropped:
        log.info("dropped %d supremizer(s) below the norm floor", dropped)
    kept = SupremizerBlock(L_sup=Q[:, basis.n_u:], source_modes=[block.source_modes[k] for k in kept_sup])
    enriched = replace(basis, L_u=Q, n_supremizers=basis.n_supremizers + len(kept_sup))
    return enriched, kept


def supremizer_enrich(basis: PodBasis, surrogate, count: int, mass: MassStructure,
                      gamma: float = 10.0, floor: float = 1e-8) -> tuple[PodBasis, SupremizerBlock]:
    """Compute supremizers for the first ``count`` pressure modes and enrich ``basis``."""
    block = supremizer_vectors(basis, surrogate, count, gamma=gamma)
    return enrich_with(basis, block, mass, floor=floor)
