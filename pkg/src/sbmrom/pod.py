"""Snapshot collection and proper orthogonal decomposition.

Velocity blocks are stored as interleaved nodal vectors ``(ux0, uy0, ux1, ...)``
of length ``2 n_nodes``; pressure blocks have length ``n_nodes``. The inner
product is the consistent P1 mass matrix, expanded componentwise for velocity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .fem import DOFS_PER_NODE
from .mesh import MassStructure
from .solver import NewtonTrace, extend_to_ghost

log = logging.getLogger(__name__)

SNAPSHOT_MODES = ("iterates", "increments", "converged")


@dataclass
class SnapshotSet:
    """Velocity and pressure snapshot matrices with per-column provenance.

    ``provenance[j]`` is a dict with keys ``mu``, ``iteration`` and ``kind``.
    """

    S_u: np.ndarray
    S_p: np.ndarray
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        self.S_u = np.asarray(self.S_u, dtype=float)
        self.S_p = np.asarray(self.S_p, dtype=float)
        if self.S_u.ndim != 2 or self.S_p.ndim != 2:
            raise ValueError("snapshot blocks must be 2-d arrays")
        if self.S_u.shape[1] != self.S_p.shape[1]:
            raise ValueError("velocity and pressure blocks need the same column count")
        if self.S_u.shape[1] < 1:
            raise ValueError("a snapshot set needs at least one column")
        if self.S_u.shape[0] != 2 * self.S_p.shape[0]:
            raise ValueError("velocity block must have two rows per pressure row")
        if not (np.all(np.isfinite(self.S_u)) and np.all(np.isfinite(self.S_p))):
            raise ValueError("snapshots must be finite")
        if self.provenance and len(self.provenance) != self.n_snapshots:
            raise ValueError("provenance length does not match the column count")

    @property
    def n_snapshots(self) -> int:
        return self.S_u.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.S_p.shape[0]


def state_blocks(U) -> tuple[np.ndarray, np.ndarray]:
    """Split full node-blocked states ``(3n,)`` or ``(3n, k)`` into (velocity, pressure)."""
    U = np.asarray(U, dtype=float)
    flat = U.ndim == 1
    W = U.reshape(-1, DOFS_PER_NODE, 1 if flat else U.shape[1])
    u = W[:, :2].reshape(-1, W.shape[2])
    p = W[:, 2]
    return (u[:, 0], p[:, 0]) if flat else (u, p)


def state_from_blocks(u, p) -> np.ndarray:
    """Inverse of :func:`state_blocks`."""
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    flat = p.ndim == 1
    k = 1 if flat else p.shape[1]
    W = np.empty((p.shape[0], DOFS_PER_NODE, k))
    W[:, :2] = u.reshape(-1, 2, k)
    W[:, 2] = p.reshape(-1, k)
    return W.reshape(-1) if flat else W.reshape(-1, k)


def collect_snapshots(traces: Sequence[NewtonTrace], surrogates, mode: str = "iterates",
                      extend: bool = True, band: float = 3.0) -> SnapshotSet:
    """Gather snapshot columns from Newton traces.

    ``surrogates[i]`` is the surrogate domain trace ``i`` was solved on; it is
    used for the ghost extension. Non-converged traces are skipped.
    """
    if mode not in SNAPSHOT_MODES:
        raise ValueError(f"snapshot mode must be one of {SNAPSHOT_MODES}, got {mode!r}")
    traces = list(traces)
    surrogates = list(surrogates)
    if len(traces) != len(surrogates):
        raise ValueError("one surrogate domain is needed per trace")
    cols, prov = [], []
    for trace, surrogate in zip(traces, surrogates):
        if not trace.converged:
            log.warning("skipping non-converged trace at mu=%s", trace.mu)
            continue
        if mode == "iterates":
            picked = [(n, U) for n, U in enumerate(trace.iterates)]
        elif mode == "increments":
            picked = [(n + 1, dU) for n, dU in enumerate(trace.increments)]
        else:
            picked = [(len(trace.iterates) - 1, trace.solution)]
        for n, U in picked:
            cols.append(extend_to_ghost(U, surrogate, band) if extend else np.asarray(U, float))
            prov.append({"mu": None if trace.mu is None else list(trace.mu),
                         "iteration": int(n), "kind": mode})
    if not cols:
        raise ValueError("no converged trace to collect snapshots from")
    S_u, S_p = state_blocks(np.column_stack(cols))
    return SnapshotSet(S_u=S_u, S_p=S_p, provenance=prov)


def block_mass(m, components: int) -> sp.csr_matrix:
    """Inner-product matrix for ``components``-interleaved nodal vectors."""
    M = m.matrix if isinstance(m, MassStructure) else sp.csr_matrix(m)
    if components == 1:
        return M.tocsr()
    return sp.kron(M, sp.identity(components), format="csr")


def _as_operator(m, rows: int):
    if isinstance(m, MassStructure):
        n = m.matrix.shape[0]
        if rows == n:
            return m.matrix
        if rows == 2 * n:
            return block_mass(m, 2)
        raise ValueError(f"{rows} snapshot rows do not match a {n}-node mass matrix")
    if m.shape != (rows, rows):
        raise ValueError(f"inner-product matrix {m.shape} does not match {rows} rows")
    return m


def correlation(S, m) -> np.ndarray:
    """Correlation matrix ``X_ij = (s_i, s_j)`` of the snapshot columns."""
    S = np.asarray(S, dtype=float)
    D = _as_operator(m, S.shape[0])
    X = S.T @ (D @ S)
    return 0.5 * (X + X.T)


def pod_modes(S, X, n_modes: int, m, drop_tol: float = 1e-12):
    """POD modes from snapshots ``S`` and their correlation matrix ``X``.

    Returns ``(modes, eigenvalues, Q)`` where ``eigenvalues`` is the full
    nonincreasing spectrum of ``X`` and ``Q`` its eigenvectors (same order).
    Modes are the snapshot combinations ``S q_k / sqrt(lambda_k)``, then
    re-orthonormalized in the ``m`` inner product.
    """
    S = np.asarray(S, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape != (S.shape[1], S.shape[1]):
        raise ValueError("correlation matrix does not match the snapshot count")
    lam, Q = np.linalg.eigh(X)
    lam, Q = lam[::-1], Q[:, ::-1]
    lam = np.where(np.abs(lam) < 1e-300, 0.0, lam)
    rank = numerical_rank(lam, drop_tol)
    if n_modes < 1:
        raise ValueError("at least one mode must be requested")
    if n_modes > rank:
        raise ValueError(f"requested {n_modes} modes but the numerical rank is {rank}")
    D = _as_operator(m, S.shape[0])
    modes = S @ (Q[:, :n_modes] / np.sqrt(lam[:n_modes]))
    modes = orthonormalize(modes, D)
    return modes, lam, Q


def numerical_rank(lam, drop_tol: float = 1e-12) -> int:
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0 or lam[0] <= 0:
        return 0
    return int(np.sum(lam > drop_tol * lam[0]))


def orthonormalize(V, D, floor: float = 0.0, passes: int = 2):
    """Modified Gram-Schmidt in the ``D`` inner product, repeated ``passes`` times.

    With ``floor > 0`` columns whose norm drops below ``floor`` times their
    original norm are discarded and the kept column indices are also returned.
    """
    V = np.array(V, dtype=float, copy=True)
    keep = []
    for j in range(V.shape[1]):
        v = V[:, j]
        n0 = np.sqrt(max(v @ (D @ v), 0.0))
        for _ in range(passes):
            for i in keep:
                q = V[:, i]
                v = v - (q @ (D @ v)) * q
        nv = np.sqrt(max(v @ (D @ v), 0.0))
        if floor > 0 and (n0 == 0 or nv <= floor * n0):
            continue
        if nv == 0:
            raise ValueError("cannot orthonormalize a rank-deficient set")
        V[:, j] = v / nv
        keep.append(j)
    if floor > 0:
        return V[:, keep], keep
    return V


def truncate(lam, n: int | None = None, energy: float | None = None,
             drop_tol: float = 1e-12) -> int:
    """Number of modes to keep: a fixed ``n`` capped at the numerical rank, or
    the smallest count whose cumulative energy fraction reaches ``energy``."""
    lam = np.asarray(lam, dtype=float)
    if lam.size == 0:
        raise ValueError("cannot truncate an empty spectrum")
    if (n is None) == (energy is None):
        raise ValueError("give exactly one of n and energy")
    rank = numerical_rank(lam, drop_tol)
    if n is not None:
        if n < 1:
            raise ValueError("n must be positive")
        return min(int(n), rank)
    if not 0 < energy < 1:
        raise ValueError("energy fraction must lie in (0, 1)")
    frac = cumulative_energy(lam)
    return min(int(np.searchsorted(frac, energy - 1e-15) + 1), max(rank, 1))


def cumulative_energy(lam) -> np.ndarray:
    lam = np.clip(np.asarray(lam, dtype=float), 0.0, None)
    total = lam.sum()
    if total <= 0:
        return np.ones_like(lam)
    return np.cumsum(lam) / total


def projection_residual(S, modes, D) -> float:
    """``sum_i |s_i - P s_i|^2`` for the ``D``-orthogonal projector onto ``modes``."""
    S = np.asarray(S, dtype=float)
    C = modes.T @ (D @ S)
    E = S - modes @ C
    return float(np.sum(E * (D @ E)))


@dataclass
class PodBasis:
    """Orthonormal velocity and pressure bases on one background mesh.

    ``dominant_u`` / ``dominant_p`` give, per mode, the snapshot column with
    the largest weight in the mode; ``provenance`` is the snapshot provenance.
    """

    L_u: np.ndarray
    L_p: np.ndarray
    lam_u: np.ndarray
    lam_p: np.ndarray
    inner_product: str = "full"
    mesh_signature: str = ""
    dominant_u: np.ndarray | None = None
    dominant_p: np.ndarray | None = None
    provenance: list = field(default_factory=list)
    n_supremizers: int = 0

    def __post_init__(self):
        if self.L_u.shape[0] != 2 * self.L_p.shape[0]:
            raise ValueError("velocity modes must have two rows per pressure row")
        if self.L_u.shape[1] < 1:
            raise ValueError("a basis needs at least one velocity mode")

    @property
    def n_nodes(self) -> int:
        return self.L_p.shape[0]

    @property
    def n_u(self) -> int:
        return self.L_u.shape[1]

    @property
    def n_p(self) -> int:
        return self.L_p.shape[1]

    @property
    def size(self) -> int:
        return self.n_u + self.n_p

    def truncated(self, n_u: int, n_p: int | None = None) -> "PodBasis":
        """Leading ``n_u`` velocity and ``n_p`` pressure modes (supremizers dropped)."""
        n_p = n_u if n_p is None else n_p
        pod_u = self.n_u - self.n_supremizers
        if not 1 <= n_u <= pod_u or not 0 <= n_p <= self.n_p:
            raise ValueError(f"cannot truncate a ({pod_u}, {self.n_p}) basis to ({n_u}, {n_p})")
        return replace(self, L_u=self.L_u[:, :n_u], L_p=self.L_p[:, :n_p],
                       dominant_u=None if self.dominant_u is None else self.dominant_u[:n_u],
                       dominant_p=None if self.dominant_p is None else self.dominant_p[:n_p],
                       n_supremizers=0)

    def lift(self) -> np.ndarray:
        """Dense ``(3 n_nodes, n_u + n_p)`` map from reduced to full node-blocked dofs."""
        n = self.n_nodes
        L = np.zeros((n, DOFS_PER_NODE, self.size))
        L[:, :2, :self.n_u] = self.L_u.reshape(n, 2, self.n_u)
        L[:, 2, self.n_u:] = self.L_p
        return L.reshape(DOFS_PER_NODE * n, self.size)


def build_basis(snapshots: SnapshotSet, mass: MassStructure, n_u: int | None = None,
                n_p: int | None = None, energy: float | None = None,
                inner_product: str = "full", mesh_signature: str = "",
                drop_tol: float = 1e-12) -> PodBasis:
    """Run POD on both blocks.

    Give either mode counts (``n_u``, optionally ``n_p``; each capped at the
    numerical rank) or an energy fraction applied to each block.
    """
    out = {}
    for name, S, count in (("u", snapshots.S_u, n_u), ("p", snapshots.S_p, n_p if n_p is not None else n_u)):
        X = correlation(S, mass)
        lam = np.linalg.eigvalsh(X)[::-1]
        if numerical_rank(lam, drop_tol) == 0:
            raise ValueError(f"the {name} snapshots are all zero")
        k = truncate(lam, n=count, drop_tol=drop_tol) if energy is None else truncate(lam, energy=energy)
        modes, lam, Q = pod_modes(S, X, k, mass, drop_tol=drop_tol)
        dominant = np.argmax(np.abs(Q[:, :k]) * np.sqrt(np.diag(X))[:, None], axis=0)
        out[name] = (modes, lam, dominant)
        log.info("POD %s: %d snapshots, keeping %d modes", name, S.shape[1], k)
    return PodBasis(L_u=out["u"][0], L_p=out["p"][0], lam_u=out["u"][1], lam_p=out["p"][1],
                    inner_product=inner_product, mesh_signature=mesh_signature,
                    dominant_u=out["u"][2], dominant_p=out["p"][2],
                    provenance=list(snapshots.provenance))
