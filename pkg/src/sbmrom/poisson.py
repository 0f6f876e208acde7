"""Scalar Poisson problem on the surrogate domain with shifted Nitsche conditions.

Solves ``-lap(s) = f`` with ``s = g`` on the true boundary. On obstacle
surrogate edges the boundary value is reached through the Taylor shift
``s + grad(s) . d``; channel edges have ``d = 0`` and reduce to plain Nitsche.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import element_geometry, triangle_quadrature
from .geometry import SurrogateDomain


class PoissonOperator:
    """Factorized SBM Poisson operator for one surrogate domain.

    The operator is assembled once; :meth:`solve` can then be called with
    several right-hand sides (e.g. the two components of a supremizer).
    """

    def __init__(self, surrogate: SurrogateDomain, gamma: float = 10.0):
        self.surrogate = surrogate
        self.gamma = gamma
        mesh = surrogate.mesh
        n = mesh.n_nodes
        elements = np.flatnonzero(surrogate.active)
        geo = element_geometry(mesh, elements)
        tri = mesh.triangles[elements]
        K = geo.area[:, None, None] * np.einsum("eaj,ebj->eab", geo.grads, geo.grads)
        rows = [np.repeat(tri, 3, axis=1).ravel()]
        cols = [np.tile(tri, (1, 3)).ravel()]
        vals = [K.ravel()]

        self._edges = []
        for edges in (surrogate.obstacle, surrogate.outer):
            if len(edges) == 0:
                continue
            ng = edges.points.shape[1]
            el = np.repeat(edges.elements, ng)
            eg = element_geometry(mesh, el)
            x = edges.points.reshape(-1, 2)
            N = 1.0 / 3.0 + np.einsum("maj,mj->ma", eg.grads, x - eg.vertices.mean(axis=1))
            nt = np.repeat(edges.normal, ng, axis=0)
            d = edges.d.reshape(-1, 2)
            w = edges.weights.reshape(-1)
            Gn = np.einsum("maj,mj->ma", eg.grads, nt)
            M = N + np.einsum("maj,mj->ma", eg.grads, d)
            pen = gamma / eg.diameter
            B = (-np.einsum("mb,mc->mbc", N, Gn) - np.einsum("mb,mc->mbc", Gn, M)
                 + pen[:, None, None] * np.einsum("mb,mc->mbc", M, M))
            t = mesh.triangles[el]
            rows.append(np.repeat(t, 3, axis=1).ravel())
            cols.append(np.tile(t, (1, 3)).ravel())
            vals.append((w[:, None, None] * B).ravel())
            self._edges.append(dict(nodes=t, w=w, Gn=Gn, M=M, pen=pen,
                                    target=edges.closest.reshape(-1, 2)))

        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
        ghost = np.flatnonzero(~surrogate.active_nodes)
        self.ghost = ghost
        A = A + sp.csr_matrix((np.ones(len(ghost)), (ghost, ghost)), shape=(n, n))
        self.matrix = A
        self._lu = spla.splu(A.tocsc())

    def load(self, f: Callable[[np.ndarray], np.ndarray] | None = None,
             g: Callable[[np.ndarray], np.ndarray] | None = None) -> np.ndarray:
        """Right-hand side for source ``f`` and boundary data ``g`` (callables of points)."""
        mesh = self.surrogate.mesh
        b = np.zeros(mesh.n_nodes)
        if f is not None:
            elements = np.flatnonzero(self.surrogate.active)
            geo = element_geometry(mesh, elements)
            bary, wts = triangle_quadrature(5)
            pts = np.einsum("qa,ead->eqd", bary, geo.vertices)
            fv = np.asarray(f(pts.reshape(-1, 2)), dtype=float).reshape(pts.shape[:2])
            loc = np.einsum("e,q,eq,qa->ea", geo.area, wts, fv, bary)
            b += np.bincount(mesh.triangles[elements].ravel(), weights=loc.ravel(),
                             minlength=mesh.n_nodes)
        if g is not None:
            for e in self._edges:
                gv = np.asarray(g(e["target"]), dtype=float)
                loc = e["w"][:, None] * gv[:, None] * (-e["Gn"] + e["pen"][:, None] * e["M"])
                b += np.bincount(e["nodes"].ravel(), weights=loc.ravel(), minlength=mesh.n_nodes)
        return b

    def element_gradient_load(self, chi) -> np.ndarray:
        """Loads ``(grad chi, v)`` for a nodal P1 field ``chi``; shape ``(n_nodes, 2)``."""
        mesh = self.surrogate.mesh
        elements = np.flatnonzero(self.surrogate.active)
        geo = element_geometry(mesh, elements)
        tri = mesh.triangles[elements]
        grad = np.einsum("ea,eaj->ej", np.asarray(chi)[tri], geo.grads)
        loc = (geo.area / 3.0)[:, None, None] * grad[:, None, :] * np.ones((1, 3, 1))
        out = np.zeros((mesh.n_nodes, 2))
        for j in range(2):
            out[:, j] = np.bincount(tri.ravel(), weights=loc[:, :, j].ravel(), minlength=mesh.n_nodes)
        return out

    def solve(self, rhs) -> np.ndarray:
        rhs = np.array(rhs, dtype=float)
        rhs[self.ghost] = 0.0
        return self._lu.solve(rhs)


def solve_sbm_poisson(surrogate: SurrogateDomain, f=None, g=None, gamma: float = 10.0) -> np.ndarray:
    op = PoissonOperator(surrogate, gamma=gamma)
    return op.solve(op.load(f, g))


def l2_error(surrogate: SurrogateDomain, uh, exact: Callable[[np.ndarray], np.ndarray]) -> float:
    """L2 norm of ``uh - exact`` over the active elements, degree-5 quadrature."""
    mesh = surrogate.mesh
    elements = np.flatnonzero(surrogate.active)
    geo = element_geometry(mesh, elements)
    bary, wts = triangle_quadrature(5)
    pts = np.einsum("qa,ead->eqd", bary, geo.vertices)
    vals = np.einsum("qa,ea->eq", bary, np.asarray(uh)[mesh.triangles[elements]])
    ex = np.asarray(exact(pts.reshape(-1, 2))).reshape(vals.shape)
    return float(np.sqrt(np.einsum("e,q,eq->", geo.area, wts, (vals - ex) ** 2)))
