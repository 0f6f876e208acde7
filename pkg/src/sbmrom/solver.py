"""Shifted-boundary SUPG/PSPG Navier-Stokes residual, Jacobian and Newton solver.

Unknowns are P1 velocity and pressure on every background node, stored
node-blocked as ``(ux, uy, p)``. Only active elements contribute; the dofs of
nodes without an active element are pinned by identity rows so that the
global dimension does not depend on the geometry.

The stabilization times and the backflow indicator are evaluated on a
*frozen* state, which defaults to the state itself. The Jacobian is the exact
derivative at fixed frozen state, optionally plus the derivative of the
stabilization times; the indicators are never linearized.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .fem import DOFS_PER_NODE, assemble, assemble_vector, element_dofs, element_geometry
from .geometry import BoundaryEdges, SurrogateDomain

log = logging.getLogger(__name__)


class LinearSolveError(RuntimeError):
    """The linearized system could not be factorized."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (Newton iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class FluidParams:
    rho: float = 1.0
    nu: float = 0.02
    body_force: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.rho > 0 and self.nu > 0):
            raise ValueError("density and viscosity must be positive")


@dataclass(frozen=True)
class BoundaryData:
    """Boundary conditions of the channel problem.

    ``u_in`` is the inflow x-velocity: a number, or a callable of points
    ``(n, 2)`` returning velocities ``(n, 2)``. Walls are ``"slip"`` (no
    penetration) or ``"noslip"``.

    ``inflow_rule`` selects how the inflow part of a Dirichlet boundary is
    found: ``"data"`` uses ``g_D . n < 0``; ``"state"`` uses the extrapolated
    velocity ``(g_D - (grad u) d) . n < 0`` of the frozen iterate. The state
    rule switches the Taylor shift on and off between iterates and can stall
    Newton.
    """

    u_in: float | Callable[[np.ndarray], np.ndarray] = 1.0
    obstacle_velocity: tuple[float, float] = (0.0, 0.0)
    traction: tuple[float, float] = (0.0, 0.0)
    walls: str = "slip"
    inflow_rule: str = "data"

    def __post_init__(self):
        if self.walls not in ("slip", "noslip"):
            raise ValueError(f"unknown wall condition {self.walls!r}")
        if self.inflow_rule not in ("data", "state"):
            raise ValueError(f"unknown inflow rule {self.inflow_rule!r}")

    def inflow(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if callable(self.u_in):
            return np.asarray(self.u_in(points), dtype=float).reshape(points.shape)
        out = np.zeros_like(points)
        out[..., 0] = self.u_in
        return out


@dataclass(frozen=True)
class StabilizationParams:
    gamma: float = 10.0
    c1: float = 4.0
    c2: float = 2.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.c1 > 0 and self.c2 >= 0):
            raise ValueError("stabilization constants must be positive")

    def tau(self, nu, h, speed):
        return 1.0 / (self.c1 * nu / h ** 2 + self.c2 * speed / h)


@dataclass(frozen=True)
class NewtonSettings:
    tol_rel: float = 1e-10
    tol_abs: float = 1e-12
    max_iter: int = 25
    line_search: bool = True
    # include d(tau)/dU in the Jacobian; without it tau is frozen per step (Picard)
    tau_derivative: bool = True


@dataclass
class NewtonTrace:
    """Iterates, increments and residual history of one Newton solve."""

    iterates: list = field(default_factory=list)
    increments: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    converged: bool = False
    mu: tuple | None = None

    @property
    def solution(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def n_iterations(self) -> int:
        return len(self.increments)


# ---------------------------------------------------------------------------
# assembly

def _check_state(U, n_nodes):
    U = np.asarray(U, dtype=float)
    if U.shape != (DOFS_PER_NODE * n_nodes,):
        raise ValueError(f"state has shape {U.shape}, expected ({DOFS_PER_NODE * n_nodes},)")
    if not np.all(np.isfinite(U)):
        raise ValueError("state contains non-finite entries")
    return U


def _element_terms(U, Uf, surrogate, fp, sp_, convection, jacobian, tau_derivative=False):
    mesh = surrogate.mesh
    elements = np.flatnonzero(surrogate.active)
    geo = element_geometry(mesh, elements)
    dofs = element_dofs(mesh.triangles[elements])
    G, A, hK = geo.grads, geo.area, geo.diameter
    rho, nu = fp.rho, fp.nu
    g = np.asarray(fp.body_force, dtype=float)

    Ue = U[dofs].reshape(-1, 3, 3)
    u, p = Ue[:, :, :2], Ue[:, :, 2]
    uf = Uf[dofs].reshape(-1, 3, 3)[:, :, :2]
    speed = np.linalg.norm(uf.mean(axis=1), axis=1)
    tau = sp_.tau(nu, hK, speed)

    N = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])  # (q, a)
    wq = A[:, None] / 3.0 * np.ones((1, 3))
    Gu = np.einsum("eai,eaj->eij", u, G)
    gp = np.einsum("ea,eaj->ej", p, G)
    uq = np.einsum("qa,eai->eqi", N, u)
    conv = np.einsum("eij,eqj->eqi", Gu, uq)
    eps = 0.5 * (Gu + Gu.transpose(0, 2, 1))
    cflag = 1.0 if convection else 0.0

    r = rho * cflag * conv + gp[:, None, :] - rho * g
    adv = np.einsum("eqj,ebj->eqb", uq, G) * cflag  # u . grad N_b at q

    Rm = rho * cflag * np.einsum("eq,qb,eqi->ebi", wq, N, conv)
    Rm += 2 * nu * A[:, None, None] * np.einsum("eik,ebk->ebi", eps, G)
    Rm -= (A * p.mean(axis=1))[:, None, None] * G
    Rm -= rho * (A / 3.0)[:, None, None] * g
    Rm += tau[:, None, None] * np.einsum("eq,eqb,eqi->ebi", wq, adv, r)
    Rc = -(A / 3.0 * np.trace(Gu, axis1=1, axis2=2))[:, None] * np.ones((1, 3))
    Rc -= tau[:, None] * np.einsum("eq,ebj,eqj->eb", wq, G, r)

    Rloc = np.concatenate([Rm, Rc[:, :, None]], axis=2).reshape(-1, 9)
    if not jacobian:
        return dofs, Rloc, None

    n = len(elements)
    I2 = np.eye(2)
    # d conv[q, i] / d u[c, k]
    Dconv = (np.einsum("ik,ecj,eqj->eqick", I2, G, uq)
             + np.einsum("eik,qc->eqick", Gu, N)) * cflag
    Dr_u = rho * Dconv

    Juu = rho * np.einsum("eq,qb,eqick->ebick", wq, N, Dconv)
    Juu += nu * A[:, None, None, None, None] * (
        np.einsum("ik,ecj,ebj->ebick", I2, G, G) + np.einsum("eci,ebk->ebick", G, G))
    Juu += tau[:, None, None, None, None] * (
        np.einsum("eq,qc,ebk,eqi->ebick", wq, N, G, r) * cflag
        + np.einsum("eq,eqb,eqick->ebick", wq, adv, Dr_u))
    Jup = -(A / 3.0)[:, None, None, None] * np.einsum("ebi,c->ebic", G, np.ones(3))
    Jup += tau[:, None, None, None] * np.einsum("eq,eqb,eci->ebic", wq, adv, G)
    Jpu = -(A / 3.0)[:, None, None, None] * np.einsum("b,eck->ebck", np.ones(3), G)
    Jpu -= tau[:, None, None, None] * np.einsum("eq,ebi,eqick->ebck", wq, G, Dr_u)
    Jpp = -(tau * A)[:, None, None] * np.einsum("ebj,ecj->ebc", G, G)

    J = np.zeros((n, 3, 3, 3, 3))
    J[:, :, :2, :, :2] = Juu
    J[:, :, :2, :, 2] = Jup
    J[:, :, 2, :, :2] = Jpu
    J[:, :, 2, :, 2] = Jpp
    if tau_derivative:
        # tau depends on the element-mean velocity; zero derivative at rest
        Rt = np.concatenate([np.einsum("eq,eqb,eqi->ebi", wq, adv, r),
                             -np.einsum("eq,ebj,eqj->eb", wq, G, r)[:, :, None]], axis=2)
        ubar = uf.mean(axis=1)
        safe = np.where(speed > 0, speed, 1.0)
        dtau = np.where(speed > 0, -tau**2 * sp_.c2 / (hK * safe), 0.0)[:, None] * ubar / 3.0
        J[:, :, :, :, :2] += np.einsum("ebi,ek->ebik", Rt, dtau)[:, :, :, None, :]
    return dofs, Rloc, J.reshape(n, 9, 9)


def _edge_points(mesh, edges: BoundaryEdges):
    """Flatten edge quadrature to points and evaluate owner-element shape data."""
    ng = edges.points.shape[1]
    elements = np.repeat(edges.elements, ng)
    geo = element_geometry(mesh, elements)
    x = edges.points.reshape(-1, 2)
    centroid = geo.vertices.mean(axis=1)
    N = 1.0 / 3.0 + np.einsum("maj,mj->ma", geo.grads, x - centroid)
    return dict(
        elements=elements, dofs=element_dofs(mesh.triangles[elements]), G=geo.grads, N=N,
        h=geo.diameter, w=edges.weights.reshape(-1), nt=np.repeat(edges.normal, ng, axis=0),
        d=edges.d.reshape(-1, 2), x=x, closest=edges.closest.reshape(-1, 2),
    )


def _local_fields(U, pts):
    Ue = U[pts["dofs"]].reshape(-1, 3, 3)
    u_a, p_a = Ue[:, :, :2], Ue[:, :, 2]
    u = np.einsum("ma,mai->mi", pts["N"], u_a)
    p = np.einsum("ma,ma->m", pts["N"], p_a)
    S = np.einsum("mai,maj->mij", u_a, pts["G"])
    return u, p, S


def _pack(Rm, Rc, Juu=None, Jup=None, Jpu=None):
    m = Rm.shape[0]
    R = np.concatenate([Rm, Rc[:, :, None]], axis=2).reshape(m, 9)
    if Juu is None:
        return R, None
    J = np.zeros((m, 3, 3, 3, 3))
    J[:, :, :2, :, :2] = Juu
    if Jup is not None:
        J[:, :, :2, :, 2] = Jup
    if Jpu is not None:
        J[:, :, 2, :, :2] = Jpu
    return R, J.reshape(m, 9, 9)


def _dirichlet_terms(U, Uf, pts, gD, fp, sp_, convection, jacobian, rule="data"):
    """Shifted Nitsche terms on Dirichlet edges (plain Nitsche when d = 0)."""
    rho, nu = fp.rho, fp.nu
    w, N, G, nt = pts["w"], pts["N"], pts["G"], pts["nt"]
    d = pts["d"]
    pen = sp_.gamma * nu / pts["h"]
    u, p, S = _local_fields(U, pts)
    _, _, Sf = _local_fields(Uf, pts)

    Sd = np.einsum("mij,mj->mi", S, d)
    beta = np.einsum("mi,mi->m", gD - Sd, nt)
    if rule == "state":
        beta_f = np.einsum("mi,mi->m", gD - np.einsum("mij,mj->mi", Sf, d), nt)
    else:
        beta_f = np.einsum("mi,mi->m", gD, nt)
    chim = (beta_f < 0).astype(float) * (1.0 if convection else 0.0)
    chip = (beta_f >= 0).astype(float)
    v = u + Sd - gD
    e = u + chip[:, None] * Sd - gD
    eps = 0.5 * (S + S.transpose(0, 2, 1))
    Gd = np.einsum("maj,mj->ma", G, d)
    Gn = np.einsum("maj,mj->ma", G, nt)
    P = N + chip[:, None] * Gd
    M = N + Gd

    sig_n = 2 * nu * np.einsum("mij,mj->mi", eps, nt) - p[:, None] * nt
    Rm = -(w * chim * rho * beta)[:, None, None] * N[:, :, None] * v[:, None, :]
    Rm -= w[:, None, None] * N[:, :, None] * sig_n[:, None, :]
    Rm -= (w * nu)[:, None, None] * (Gn[:, :, None] * e[:, None, :]
                                     + np.einsum("mbj,mj->mb", G, e)[:, :, None] * nt[:, None, :])
    Rm += (w * pen)[:, None, None] * P[:, :, None] * e[:, None, :]
    Rc = w[:, None] * N * np.einsum("mi,mi->m", e, nt)[:, None]
    if not jacobian:
        return _pack(Rm, Rc)

    I2 = np.eye(2)
    # inflow term
    dv = np.einsum("ik,mc->mick", I2, M)
    dbeta = -np.einsum("mc,mk->mck", Gd, nt)
    Juu = -(w * chim * rho)[:, None, None, None, None] * N[:, :, None, None, None] * (
        np.einsum("mck,mi->mick", dbeta, v)[:, None] + beta[:, None, None, None, None] * dv[:, None])
    # consistency
    Juu -= (w * nu)[:, None, None, None, None] * np.einsum(
        "mb,mick->mbick", N, np.einsum("ik,mc->mick", I2, Gn) + np.einsum("mci,mk->mick", G, nt))
    # adjoint consistency
    Juu -= (w * nu)[:, None, None, None, None] * np.einsum(
        "mc,mbik->mbick", P, np.einsum("ik,mb->mbik", I2, Gn) + np.einsum("mbk,mi->mbik", G, nt))
    # penalty
    Juu += (w * pen)[:, None, None, None, None] * np.einsum("mb,mc,ik->mbick", P, P, I2)
    Jup = w[:, None, None, None] * np.einsum("mb,mc,mi->mbic", N, N, nt)
    Jpu = w[:, None, None, None] * np.einsum("mb,mc,mk->mbck", N, P, nt)
    return _pack(Rm, Rc, Juu, Jup, Jpu)


def _neumann_terms(U, Uf, pts, gN, fp, convection, jacobian):
    rho = fp.rho
    w, N, nt = pts["w"], pts["N"], pts["nt"]
    u, _, _ = _local_fields(U, pts)
    uf, _, _ = _local_fields(Uf, pts)
    un = np.einsum("mi,mi->m", u, nt)
    back = (np.einsum("mi,mi->m", uf, nt) < 0).astype(float) * (1.0 if convection else 0.0)

    Rm = -w[:, None, None] * N[:, :, None] * gN[:, None, :]
    Rm -= (w * back * rho * un)[:, None, None] * N[:, :, None] * u[:, None, :]
    Rc = np.zeros_like(N)
    if not jacobian:
        return _pack(Rm, Rc)
    # d[(u.n) u_i]/du_k = n_k u_i + (u.n) delta_ik
    flux = np.einsum("mi,mk->mik", u, nt) + un[:, None, None] * np.eye(2)
    Juu = -(w * back * rho)[:, None, None, None, None] * np.einsum("mb,mc,mik->mbick", N, N, flux)
    return _pack(Rm, Rc, Juu)


def _slip_terms(U, pts, fp, sp_, jacobian):
    """Nitsche no-penetration condition on the normal velocity only."""
    nu = fp.nu
    w, N, G, n = pts["w"], pts["N"], pts["G"], pts["nt"]
    pen = sp_.gamma * nu / pts["h"]
    u, p, S = _local_fields(U, pts)
    un = np.einsum("mi,mi->m", u, n)
    snn = np.einsum("mi,mij,mj->m", n, S, n)
    Gn = np.einsum("maj,mj->ma", G, n)

    Rm = -(w * (2 * nu * snn - p))[:, None, None] * N[:, :, None] * n[:, None, :]
    Rm -= (w * 2 * nu * un)[:, None, None] * Gn[:, :, None] * n[:, None, :]
    Rm += (w * pen * un)[:, None, None] * N[:, :, None] * n[:, None, :]
    Rc = (w * un)[:, None] * N
    if not jacobian:
        return _pack(Rm, Rc)
    nn = np.einsum("mi,mk->mik", n, n)
    Juu = (-2 * nu * (np.einsum("mb,mc->mbc", N, Gn) + np.einsum("mb,mc->mbc", Gn, N))
           + pen[:, None, None] * np.einsum("mb,mc->mbc", N, N))
    Juu = (w[:, None, None] * Juu)[:, :, None, :, None] * nn[:, None, :, None, :]
    Jup = w[:, None, None, None] * np.einsum("mb,mc,mi->mbic", N, N, n)
    Jpu = w[:, None, None, None] * np.einsum("mb,mc,mk->mbck", N, N, n)
    return _pack(Rm, Rc, Juu, Jup, Jpu)


def boundary_groups(surrogate: SurrogateDomain, bd: BoundaryData):
    """Split surrogate and channel edges into (kind, edges, data) groups."""
    obs = surrogate.obstacle
    out = surrogate.outer
    groups = []
    kinds = surrogate.obstacle_kinds
    if len(obs):
        ng = obs.points.shape[1]
        dmask = kinds == "dirichlet"
        if dmask.any():
            e = obs.subset(dmask)
            gD = np.broadcast_to(np.asarray(bd.obstacle_velocity, float), (len(e) * ng, 2)).copy()
            groups.append(("dirichlet", e, gD))
        if (~dmask).any():
            e = obs.subset(~dmask)
            gN = np.broadcast_to(np.asarray(bd.traction, float), (len(e) * ng, 2)).copy()
            groups.append(("neumann", e, gN))
    if len(out):
        ng = out.points.shape[1]
        inflow = out.subset(out.tags == "inflow")
        if len(inflow):
            groups.append(("dirichlet", inflow, bd.inflow(inflow.closest.reshape(-1, 2))))
        outflow = out.subset(out.tags == "outflow")
        if len(outflow):
            gN = np.broadcast_to(np.asarray(bd.traction, float), (len(outflow) * ng, 2)).copy()
            groups.append(("neumann", outflow, gN))
        walls = out.subset((out.tags == "wall_top") | (out.tags == "wall_bottom"))
        if len(walls):
            if bd.walls == "slip":
                groups.append(("slip", walls, None))
            else:
                groups.append(("dirichlet", walls, np.zeros((len(walls) * ng, 2))))
    return groups


def assemble_system(U, surrogate: SurrogateDomain, fp: FluidParams, bd: BoundaryData,
                    sp_: StabilizationParams, frozen=None, jacobian: bool = True,
                    convection: bool = True, pin_inactive: bool = True,
                    tau_derivative: bool = False):
    """Residual ``R(U)`` and (optionally) Jacobian at a fixed frozen state.

    ``frozen`` defaults to ``U``. With ``pin_inactive`` the dofs of inactive
    nodes get identity rows pinning them to zero; otherwise those rows are empty.
    ``tau_derivative`` adds the derivative of the stabilization times with
    respect to the state (only meaningful when ``frozen`` is ``U``), making the
    Jacobian the derivative of ``U -> R(U; frozen=U)`` away from indicator
    switches.
    Returns ``(R, J)`` with ``J`` a CSR matrix or ``None``.
    """
    mesh = surrogate.mesh
    U = _check_state(U, mesh.n_nodes)
    Uf = U if frozen is None else _check_state(frozen, mesh.n_nodes)
    n_dofs = DOFS_PER_NODE * mesh.n_nodes

    vec_parts, mat_parts = [], []
    dofs, Rl, Jl = _element_terms(U, Uf, surrogate, fp, sp_, convection, jacobian,
                                  tau_derivative=tau_derivative and frozen is None)
    vec_parts.append((dofs, Rl))
    mat_parts.append((dofs, Jl))

    for kind, edges, data in boundary_groups(surrogate, bd):
        pts = _edge_points(mesh, edges)
        if kind == "dirichlet":
            Rl, Jl = _dirichlet_terms(U, Uf, pts, data, fp, sp_, convection, jacobian,
                                      rule=bd.inflow_rule)
        elif kind == "neumann":
            Rl, Jl = _neumann_terms(U, Uf, pts, data, fp, convection, jacobian)
        else:
            Rl, Jl = _slip_terms(U, pts, fp, sp_, jacobian)
        vec_parts.append((pts["dofs"], Rl))
        mat_parts.append((pts["dofs"], Jl))

    R = assemble_vector(vec_parts, n_dofs)
    ghost = ghost_dofs(surrogate)
    if pin_inactive:
        R[ghost] = U[ghost]
    if not jacobian:
        return R, None
    J = assemble(mat_parts, n_dofs)
    if pin_inactive and len(ghost):
        J = J + sp.csr_matrix((np.ones(len(ghost)), (ghost, ghost)), shape=J.shape)
    return R, J


def ghost_dofs(surrogate: SurrogateDomain) -> np.ndarray:
    nodes = np.flatnonzero(~surrogate.active_nodes)
    return (DOFS_PER_NODE * nodes[:, None] + np.arange(DOFS_PER_NODE)).ravel()


def active_dofs(surrogate: SurrogateDomain) -> np.ndarray:
    nodes = np.flatnonzero(surrogate.active_nodes)
    return (DOFS_PER_NODE * nodes[:, None] + np.arange(DOFS_PER_NODE)).ravel()


def assemble_residual(U, surrogate, fp, bd, sp_, **kw) -> np.ndarray:
    return assemble_system(U, surrogate, fp, bd, sp_, jacobian=False, **kw)[0]


def assemble_jacobian(U, surrogate, fp, bd, sp_, **kw) -> sp.csr_matrix:
    return assemble_system(U, surrogate, fp, bd, sp_, jacobian=True, **kw)[1]


# ---------------------------------------------------------------------------
# Newton

def newton_solve(surrogate: SurrogateDomain, fp: FluidParams, bd: BoundaryData,
                 sp_: StabilizationParams, settings: NewtonSettings = NewtonSettings(),
                 U0=None, mu=None) -> NewtonTrace:
    """Solve ``R(U) = 0`` by Newton's method, keeping every iterate.

    Convergence is ``|R(U^n)| <= max(tol_rel |R(U^0)|, tol_abs)``. When the full
    step increases the residual the step is halved (at most six times); the
    recorded increment is the step actually taken.
    """
    n_dofs = DOFS_PER_NODE * surrogate.mesh.n_nodes
    U = np.zeros(n_dofs) if U0 is None else np.array(U0, dtype=float)
    trace = NewtonTrace(mu=None if mu is None else tuple(mu))
    R, J = assemble_system(U, surrogate, fp, bd, sp_, tau_derivative=settings.tau_derivative)
    r0 = np.linalg.norm(R)
    trace.iterates.append(U.copy())
    trace.residual_norms.append(r0)
    target = max(settings.tol_rel * r0, settings.tol_abs)
    if r0 <= target:
        trace.converged = True
        return trace

    for it in range(1, settings.max_iter + 1):
        try:
            lu = spla.splu(J.tocsc())
        except RuntimeError as exc:
            raise LinearSolveError(str(exc), it) from exc
        dU = -lu.solve(R)
        if not np.all(np.isfinite(dU)):
            raise LinearSolveError("non-finite increment", it)

        rn = np.linalg.norm(R)
        alpha = 1.0
        while True:
            U_try = U + alpha * dU
            R_try, J_try = assemble_system(U_try, surrogate, fp, bd, sp_,
                                           tau_derivative=settings.tau_derivative)
            r_try = np.linalg.norm(R_try)
            if not settings.line_search or r_try < rn or alpha <= 1 / 64:
                break
            alpha *= 0.5
        U, R, J = U_try, R_try, J_try
        trace.iterates.append(U.copy())
        trace.increments.append(alpha * dU)
        trace.residual_norms.append(r_try)
        log.debug("newton %d: |R| = %.3e (alpha %.3g)", it, r_try, alpha)
        if r_try <= target:
            trace.converged = True
            break
    if not trace.converged:
        log.warning("Newton did not converge in %d iterations (|R|/|R0| = %.2e)",
                    settings.max_iter, trace.residual_norms[-1] / r0)
    return trace


def extend_to_ghost(U, surrogate: SurrogateDomain, band: float = 3.0) -> np.ndarray:
    """Smoothly extend a solved state into the inactive nodes.

    Each inactive node takes the value of its nearest surrogate-boundary node,
    scaled by ``max(0, 1 - s / (band * h))`` where ``s = |phi|`` is the node's
    distance to the obstacle boundary. Active entries are returned unchanged.
    """
    mesh = surrogate.mesh
    U = np.asarray(U, dtype=float)
    out = U.copy().reshape(-1, DOFS_PER_NODE)
    ghost = np.flatnonzero(~surrogate.active_nodes)
    if len(ghost) == 0:
        return out.ravel()
    sources = surrogate.surrogate_nodes()
    if len(sources) == 0:
        out[ghost] = 0.0
        return out.ravel()
    _, nearest = cKDTree(mesh.nodes[sources]).query(mesh.nodes[ghost])
    s = np.abs(surrogate.phi[ghost])
    weight = np.maximum(0.0, 1.0 - s / (band * mesh.h))
    out[ghost] = U.reshape(-1, DOFS_PER_NODE)[sources[nearest]] * weight[:, None]
    return out.ravel()


def split_state(U):
    """View a state as ``(velocity (n, 2), pressure (n,))``."""
    V = np.asarray(U).reshape(-1, DOFS_PER_NODE)
    return V[:, :2], V[:, 2]


def join_state(velocity, pressure) -> np.ndarray:
    return np.column_stack([np.asarray(velocity).reshape(-1, 2), np.asarray(pressure)]).ravel()
