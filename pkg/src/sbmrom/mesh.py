"""Fixed Cartesian background triangulation and P1 mass structures.

The background mesh never depends on the obstacle parameters: every geometry
is described on top of it through a level set (see :mod:`sbmrom.geometry`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp

BOUNDARY_SIDES = ("inflow", "outflow", "wall_bottom", "wall_top")

# local edge k of a triangle is the one opposite to vertex k
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class BackgroundMesh:
    """Structured triangulation of a rectangular channel.

    Attributes
    ----------
    nodes : (n_nodes, 2) array
        Node coordinates.
    triangles : (n_elements, 3) int array
        Counter-clockwise node triples.
    edges : (n_edges, 2) int array
        Unique node pairs, sorted within each pair.
    edge_elements : (n_edges, 2) int array
        Owning triangles of each edge, ``-1`` when the edge is on the outer boundary.
    element_edges : (n_elements, 3) int array
        Edge index of the local edge opposite to each vertex.
    boundary_tags : (n_edges,) object array
        One of ``BOUNDARY_SIDES`` for outer edges, ``""`` for interior edges.
    h : float
        Largest edge length over all triangles.
    """

    bounds: tuple[float, float, float, float]
    nx: int
    ny: int
    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    edge_elements: np.ndarray
    element_edges: np.ndarray
    boundary_tags: np.ndarray
    h: float
    areas: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def cell_size(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.bounds
        return (x1 - x0) / self.nx, (y1 - y0) / self.ny

    def signature(self) -> str:
        """Short identity string; bases built on one mesh are only valid on it."""
        x0, x1, y0, y1 = self.bounds
        return f"rect[{x0!r},{x1!r}]x[{y0!r},{y1!r}]:{self.nx}x{self.ny}"

    def boundary_edge_ids(self, tag: str | None = None) -> np.ndarray:
        if tag is None:
            return np.flatnonzero(self.boundary_tags != "")
        return np.flatnonzero(self.boundary_tags == tag)

    def element_diameters(self) -> np.ndarray:
        xy = self.nodes[self.triangles]
        lengths = np.linalg.norm(xy[:, LOCAL_EDGES[:, 0]] - xy[:, LOCAL_EDGES[:, 1]], axis=2)
        return lengths.max(axis=1)

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Return the containing element and barycentric coordinates of each point.

        Points on shared edges are attributed to one of the neighbours
        deterministically. Points outside the channel raise ``ValueError``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        x0, x1, y0, y1 = self.bounds
        dx, dy = self.cell_size
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        if (np.any(pts[:, 0] < x0 - tol) or np.any(pts[:, 0] > x1 + tol)
                or np.any(pts[:, 1] < y0 - tol) or np.any(pts[:, 1] > y1 + tol)):
            raise ValueError("point outside the background mesh")
        sx = (pts[:, 0] - x0) / dx
        sy = (pts[:, 1] - y0) / dy
        i = np.clip(np.floor(sx).astype(int), 0, self.nx - 1)
        j = np.clip(np.floor(sy).astype(int), 0, self.ny - 1)
        fx = sx - i
        fy = sy - j
        # lower-right triangle holds fx >= fy
        upper = fy > fx
        elem = 2 * (j * self.nx + i) + upper.astype(int)
        bary = np.empty((len(pts), 3))
        # lower: (n00, n10, n11); upper: (n00, n11, n01)
        bary[~upper] = np.column_stack([1 - fx, fx - fy, fy])[~upper]
        bary[upper] = np.column_stack([1 - fy, fx, fy - fx])[upper]
        return elem, bary

    def interpolate(self, values, points) -> np.ndarray:
        """Evaluate a nodal P1 field (shape ``(n_nodes, ...)``) at arbitrary points."""
        values = np.asarray(values)
        elem, bary = self.locate(points)
        return np.einsum("pa,pa...->p...", bary, values[self.triangles[elem]])


def build_background_mesh(bounds, h_target: float) -> BackgroundMesh:
    """Build the SW-NE split structured triangulation of ``[x0,x1]x[y0,y1]``.

    ``bounds`` is ``(x0, x1, y0, y1)``; the grid has ``ceil(width/h_target)`` by
    ``ceil(height/h_target)`` cells, each split into two triangles.
    """
    x0, x1, y0, y1 = (float(b) for b in bounds)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate channel bounds {bounds!r}")
    if not h_target > 0:
        raise ValueError(f"h_target must be positive, got {h_target!r}")

    # guard against ceil(4/0.1) = 41 from floating point noise
    nx = max(1, math.ceil((x1 - x0) / h_target - 1e-9))
    ny = max(1, math.ceil((y1 - y0) / h_target - 1e-9))

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    n00 = (jj * (nx + 1) + ii).ravel()
    n10 = n00 + 1
    n01 = n00 + nx + 1
    n11 = n01 + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([n00, n10, n11])
    triangles[1::2] = np.column_stack([n00, n11, n01])

    local = np.sort(triangles[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
    edges, inverse = np.unique(local, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    element_edges = inverse.reshape(-1, 3)

    owner = np.repeat(np.arange(len(triangles)), 3)
    edge_elements = -np.ones((len(edges), 2), dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_edges[1:] != sorted_edges[:-1]
    edge_elements[sorted_edges[first], 0] = owner[order][first]
    edge_elements[sorted_edges[~first], 1] = owner[order][~first]

    tags = np.full(len(edges), "", dtype=object)
    boundary = edge_elements[:, 1] < 0
    mid = nodes[edges].mean(axis=1)
    tol = 1e-9 * max(x1 - x0, y1 - y0)
    for tag, mask in (
        ("inflow", np.abs(mid[:, 0] - x0) < tol),
        ("outflow", np.abs(mid[:, 0] - x1) < tol),
        ("wall_bottom", np.abs(mid[:, 1] - y0) < tol),
        ("wall_top", np.abs(mid[:, 1] - y1) < tol),
    ):
        tags[boundary & mask] = tag

    xy = nodes[triangles]
    e1 = xy[:, 1] - xy[:, 0]
    e2 = xy[:, 2] - xy[:, 0]
    areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    lengths = np.linalg.norm(xy[:, LOCAL_EDGES[:, 0]] - xy[:, LOCAL_EDGES[:, 1]], axis=2)

    for arr in (nodes, triangles, edges, edge_elements, element_edges, tags, areas):
        arr.setflags(write=False)
    return BackgroundMesh(
        bounds=(x0, x1, y0, y1), nx=nx, ny=ny, nodes=nodes, triangles=triangles,
        edges=edges, edge_elements=edge_elements, element_edges=element_edges,
        boundary_tags=tags, h=float(lengths.max()), areas=areas,
    )


@dataclass(frozen=True, eq=False)
class MassStructure:
    """Consistent P1 mass matrix restricted to a subset of elements."""

    matrix: sp.csr_matrix
    elements: np.ndarray
    measure: float

    @property
    def lumped(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def local_mass(areas) -> np.ndarray:
    """Consistent P1 element mass blocks, shape ``(n, 3, 3)``."""
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return np.asarray(areas)[:, None, None] * base


def mass_structure(mesh: BackgroundMesh, active=None) -> MassStructure:
    """Assemble the consistent P1 mass matrix over ``active`` elements.

    ``active`` may be a boolean mask or an index array; ``None`` means the whole mesh.
    """
    if active is None:
        elements = np.arange(mesh.n_elements)
    else:
        active = np.asarray(active)
        elements = np.flatnonzero(active) if active.dtype == bool else np.unique(active)
    if len(elements) == 0:
        raise ValueError("mass structure needs a nonempty element subset")

    tri = mesh.triangles[elements]
    blocks = local_mass(mesh.areas[elements])
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    M = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    return MassStructure(matrix=M, elements=elements, measure=float(mesh.areas[elements].sum()))


def inner_product(f, g, m: MassStructure) -> float:
    """L2 inner product of two nodal P1 fields over the element subset of ``m``.

    Fields are ``(n_nodes,)`` scalars or ``(n_nodes, k)`` vector fields.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n = m.matrix.shape[0]
    if f.shape != g.shape or f.shape[0] != n:
        raise ValueError(f"field shapes {f.shape} and {g.shape} do not match {n} nodes")
    return float(np.sum(f * (m.matrix @ g)))
