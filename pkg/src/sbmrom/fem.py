"""P1 shape functions, quadrature rules and sparse assembly helpers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import BackgroundMesh

DOFS_PER_NODE = 3  # (ux, uy, p), node-blocked

# barycentric points and weights (normalised to sum 1)
_TRIANGLE_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]), np.full(3, 1 / 3)),
}


def _dunavant5():
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    w0, w1, w2 = 0.225, 0.132394152788506, 0.125939180544827
    pts = [[1 / 3, 1 / 3, 1 / 3],
           [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
           [a2, b2, b2], [b2, a2, b2], [b2, b2, a2]]
    return np.array(pts), np.array([w0, w1, w1, w1, w2, w2, w2])


# degree-5 rule, only used for error norms of non-polynomial fields
_TRIANGLE_RULES[5] = _dunavant5()


def triangle_quadrature(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric points ``(n, 3)`` and weights summing to one.

    Order 1 is the centroid rule, order 2 the edge-midpoint rule. Order 5 is a
    7-point rule kept for measuring errors against smooth exact solutions.
    """
    if order not in _TRIANGLE_RULES:
        raise ValueError(f"unsupported triangle quadrature order {order!r}")
    pts, w = _TRIANGLE_RULES[order]
    return pts.copy(), w.copy()


def edge_quadrature(n_points: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points on [0, 1] and weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class ElementGeometry:
    """Geometry of a batch of triangles.

    ``grads[e, a]`` is the constant gradient of the shape function of local node ``a``.
    """

    vertices: np.ndarray  # (n, 3, 2)
    area: np.ndarray      # (n,)
    grads: np.ndarray     # (n, 3, 2)
    diameter: np.ndarray  # (n,)

    def quadrature(self, order: int = 2):
        """Physical points ``(n, q, 2)``, weights ``(n, q)`` and shape values ``(q, 3)``."""
        bary, w = triangle_quadrature(order)
        points = np.einsum("qa,nad->nqd", bary, self.vertices)
        return points, self.area[:, None] * w[None, :], bary


def element_geometry(mesh: BackgroundMesh, elements=None) -> ElementGeometry:
    tri = mesh.triangles if elements is None else mesh.triangles[np.asarray(elements)]
    return geometry_from_vertices(mesh.nodes[tri])


def geometry_from_vertices(vertices) -> ElementGeometry:
    v = np.asarray(vertices, dtype=float).reshape(-1, 3, 2)
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(det <= 0):
        raise ValueError("triangles must be counter-clockwise with positive area")
    # rows of inv(J)^T give grads of the reference shape functions N1, N2
    g1 = np.column_stack([e2[:, 1], -e2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-e1[:, 1], e1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    lengths = np.linalg.norm(v[:, [1, 2, 0]] - v[:, [2, 0, 1]], axis=2)
    return ElementGeometry(vertices=v, area=0.5 * det, grads=grads, diameter=lengths.max(axis=1))


def barycentric(vertices, x) -> np.ndarray:
    """Barycentric coordinates of points ``x`` (``(..., 2)``) in one triangle."""
    v = np.asarray(vertices, dtype=float)
    x = np.asarray(x, dtype=float)
    T = np.column_stack([v[1] - v[0], v[2] - v[0]])
    lam = np.linalg.solve(T, (x - v[0]).T).T
    return np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)


def shape_eval(elem: ElementGeometry, x, index: int = 0) -> np.ndarray:
    """Values of the three P1 shape functions of element ``index`` at ``x``."""
    v = elem.vertices[index]
    lam = barycentric(v, x)
    if np.any(lam < -1e-12 * max(1.0, elem.diameter[index])):
        raise ValueError(f"point {x!r} lies outside the element")
    return lam


@dataclass(frozen=True)
class EdgeGeometry:
    """A batch of straight edges with Gauss points along each."""

    endpoints: np.ndarray  # (n, 2, 2)
    length: np.ndarray     # (n,)
    normal: np.ndarray     # (n, 2) unit
    points: np.ndarray     # (n, g, 2)
    weights: np.ndarray    # (n, g)


def edge_geometry(endpoints, outward_to=None, n_points: int = 2) -> EdgeGeometry:
    """Build edge geometry; normals point away from the ``outward_to`` reference points.

    ``outward_to`` is typically the vertex of the owning element opposite the edge.
    """
    ends = np.asarray(endpoints, dtype=float).reshape(-1, 2, 2)
    t = ends[:, 1] - ends[:, 0]
    length = np.linalg.norm(t, axis=1)
    normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
    if outward_to is not None:
        flip = np.einsum("nd,nd->n", normal, np.asarray(outward_to) - ends[:, 0]) > 0
        normal[flip] *= -1
    s, w = edge_quadrature(n_points)
    points = ends[:, None, 0] + s[None, :, None] * t[:, None, :]
    return EdgeGeometry(endpoints=ends, length=length, normal=normal,
                        points=points, weights=length[:, None] * w[None, :])


def element_dofs(triangles) -> np.ndarray:
    """Global dof indices ``(n, 9)`` in local order (node a, component c) -> 3a + c."""
    tri = np.asarray(triangles)
    return (DOFS_PER_NODE * tri[:, :, None] + np.arange(DOFS_PER_NODE)).reshape(len(tri), -1)


def assemble(contributions, n_dofs: int) -> sp.csr_matrix:
    """Sum local blocks into a global sparse matrix.

    ``contributions`` is an iterable of ``(dofs, blocks)`` with ``dofs`` of shape
    ``(n, k)`` and ``blocks`` of shape ``(n, k, k)``. Duplicates accumulate.
    """
    rows, cols, vals = [], [], []
    for dofs, blocks in contributions:
        dofs = np.asarray(dofs)
        blocks = np.asarray(blocks, dtype=float)
        if dofs.size == 0:
            continue
        if dofs.min() < 0 or dofs.max() >= n_dofs:
            raise IndexError(f"dof index out of range for {n_dofs} dofs")
        k = dofs.shape[1]
        rows.append(np.repeat(dofs, k, axis=1).ravel())
        cols.append(np.tile(dofs, (1, k)).ravel())
        vals.append(blocks.reshape(len(dofs), -1).ravel())
    if not rows:
        return sp.csr_matrix((n_dofs, n_dofs))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_dofs, n_dofs))
    return A.tocsr()


def assemble_vector(contributions, n_dofs: int) -> np.ndarray:
    """Sum local vectors ``(dofs (n, k), values (n, k))`` into a global vector."""
    out = np.zeros(n_dofs)
    for dofs, values in contributions:
        dofs = np.asarray(dofs)
        if dofs.size == 0:
            continue
        if dofs.min() < 0 or dofs.max() >= n_dofs:
            raise IndexError(f"dof index out of range for {n_dofs} dofs")
        out += np.bincount(dofs.ravel(), weights=np.asarray(values, dtype=float).ravel(),
                           minlength=n_dofs)
    return out
