"""Level-set description of the embedded box and the surrogate domain.

Sign convention: the level set is negative inside the obstacle and positive
in the fluid. An element is active when all three vertices are on the fluid
side; the surrogate boundary is the set of edges between active and
non-active elements.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .fem import edge_geometry
from .mesh import BackgroundMesh


class DegenerateDomainError(ValueError):
    """The obstacle leaves no active element on the background mesh."""


class BoundaryConfigurationError(ValueError):
    """A surrogate edge maps onto a boundary portion without a valid condition."""


BC_KINDS = ("dirichlet", "neumann")


@dataclass(frozen=True)
class ParamBox:
    center: tuple[float, float]
    half_extents: tuple[float, float]

    def __post_init__(self):
        if not (self.half_extents[0] > 0 and self.half_extents[1] > 0):
            raise ValueError(f"box half extents must be positive, got {self.half_extents!r}")

    @property
    def perimeter(self) -> float:
        return 4.0 * (self.half_extents[0] + self.half_extents[1])


@dataclass(frozen=True)
class ParameterMap:
    """Map a 3-vector ``(mu0, mu1, mu2)`` to a box.

    The box has center ``(mu0, center_y)`` and half extents ``(mu1, mu2 / 4)``.
    Coordinates with a degenerate range ``[a, a]`` are fixed; the remaining
    ones are the free parameters of the experiment.
    """

    experiment: str
    ranges: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    center_y: float = 0.0

    def __post_init__(self):
        if len(self.ranges) != 3:
            raise ValueError("a parameter map needs ranges for (mu0, mu1, mu2)")
        for lo, hi in self.ranges:
            if hi < lo:
                raise ValueError(f"empty parameter range [{lo}, {hi}]")
        if self.n_free not in (1, 3):
            raise ValueError(f"experiments have 1 or 3 free parameters, got {self.n_free}")

    @property
    def n_free(self) -> int:
        return sum(hi > lo for lo, hi in self.ranges)

    def box(self, mu) -> ParamBox:
        mu0, mu1, mu2 = (float(m) for m in mu)
        for value, (lo, hi) in zip((mu0, mu1, mu2), self.ranges):
            if not lo - 1e-12 <= value <= hi + 1e-12:
                raise ValueError(f"parameter {tuple(mu)!r} outside ranges {self.ranges!r}")
        return ParamBox(center=(mu0, self.center_y), half_extents=(mu1, mu2 / 4.0))


def levelset_eval(box: ParamBox, x) -> np.ndarray:
    """Exact signed distance to the box boundary (negative inside)."""
    x = np.asarray(x, dtype=float)
    q = np.abs(x - np.asarray(box.center)) - np.asarray(box.half_extents)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


# features returned by closest_point: faces 0..3, corners 4..7
FACE_LEFT, FACE_RIGHT, FACE_BOTTOM, FACE_TOP = 0, 1, 2, 3


def closest_point(box: ParamBox, xt, tol: float = 1e-12, allow_inside: bool = False):
    """Closest point on the box boundary from fluid-side points ``xt``.

    Returns ``(x, d, n, feature)`` with ``d = x - xt`` and ``n`` the unit normal
    of the box pointing into the fluid. At a corner the normal is taken along
    ``-d`` so that it varies continuously around the corner.

    Points inside the box are rejected unless ``allow_inside`` is set, in which
    case they are projected onto the nearest face. This happens for quadrature
    points of a surrogate edge that clips a box corner.
    """
    xt = np.asarray(xt, dtype=float)
    single = xt.ndim == 1
    pts = np.atleast_2d(xt)
    c = np.asarray(box.center)
    w = np.asarray(box.half_extents)
    rel = pts - c
    s = np.where(rel >= 0, 1.0, -1.0)
    q = np.abs(rel) - w
    scale = tol * max(1.0, float(np.max(w)))
    inside = np.max(q, axis=1) < -scale
    if inside.any() and not allow_inside:
        raise ValueError("closest_point expects points outside the obstacle")

    x = pts.copy()
    n = np.zeros_like(pts)
    feature = np.empty(len(pts), dtype=np.int64)

    corner = (q[:, 0] >= -scale) & (q[:, 1] >= -scale)
    xface = (q[:, 0] >= -scale) & ~corner
    yface = ~corner & ~xface
    xface |= inside & (q[:, 0] >= q[:, 1])
    yface &= ~(inside & (q[:, 0] >= q[:, 1]))

    x[xface, 0] = c[0] + s[xface, 0] * w[0]
    n[xface, 0] = s[xface, 0]
    feature[xface] = np.where(s[xface, 0] < 0, FACE_LEFT, FACE_RIGHT)

    x[yface, 1] = c[1] + s[yface, 1] * w[1]
    n[yface, 1] = s[yface, 1]
    feature[yface] = np.where(s[yface, 1] < 0, FACE_BOTTOM, FACE_TOP)

    x[corner] = c + s[corner] * w
    away = pts[corner] - x[corner]
    norm = np.linalg.norm(away, axis=1)
    diag = s[corner] / np.sqrt(2.0)
    n[corner] = np.where(norm[:, None] > scale, away / np.maximum(norm, scale)[:, None], diag)
    feature[corner] = 4 + (s[corner, 0] > 0) + 2 * (s[corner, 1] > 0)

    d = x - pts
    if single:
        return x[0], d[0], n[0], int(feature[0])
    return x, d, n, feature


@dataclass(frozen=True, eq=False)
class BoundaryEdges:
    """Edges of the surrogate boundary with their quadrature records.

    ``closest``, ``d`` and ``true_normal`` are zero-shift records for edges that
    lie on the outer channel boundary (``d = 0``, true normal = edge normal).
    """

    edge_ids: np.ndarray
    elements: np.ndarray
    normal: np.ndarray
    length: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    closest: np.ndarray
    d: np.ndarray
    true_normal: np.ndarray
    tags: np.ndarray

    def __len__(self) -> int:
        return len(self.edge_ids)

    def subset(self, mask) -> "BoundaryEdges":
        return BoundaryEdges(**{k: getattr(self, k)[mask] for k in self.__dataclass_fields__})


@dataclass(frozen=True, eq=False)
class SurrogateDomain:
    """Per-parameter classification of the background mesh."""

    mesh: BackgroundMesh
    box: ParamBox | None
    phi: np.ndarray
    active: np.ndarray
    active_nodes: np.ndarray
    obstacle: BoundaryEdges
    outer: BoundaryEdges
    obstacle_kinds: np.ndarray

    @property
    def inactive(self) -> np.ndarray:
        return ~self.active

    @property
    def active_area(self) -> float:
        return float(self.mesh.areas[self.active].sum())

    def surrogate_nodes(self) -> np.ndarray:
        return np.unique(self.mesh.edges[self.obstacle.edge_ids])


def _boundary_edges(mesh: BackgroundMesh, edge_ids, elements, tags, box) -> BoundaryEdges:
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    elements = np.asarray(elements, dtype=np.int64)
    ends = mesh.nodes[mesh.edges[edge_ids]]
    tri = mesh.triangles[elements]
    pair = mesh.edges[edge_ids]
    opposite = tri[(tri != pair[:, :1]) & (tri != pair[:, 1:])]
    if len(edge_ids) == 0:
        opposite = np.zeros(0, dtype=np.int64)
    geo = edge_geometry(ends, outward_to=mesh.nodes[opposite])
    if box is None:
        closest = geo.points.copy()
        d = np.zeros_like(closest)
        true_normal = np.repeat(geo.normal[:, None, :], geo.points.shape[1], axis=1)
    else:
        flat = geo.points.reshape(-1, 2)
        if len(flat):
            x, d, n, _ = closest_point(box, flat, allow_inside=True)
        else:
            x = d = n = np.zeros((0, 2))
        closest = x.reshape(geo.points.shape)
        d = d.reshape(geo.points.shape)
        true_normal = n.reshape(geo.points.shape)
    return BoundaryEdges(edge_ids=edge_ids, elements=elements, normal=geo.normal,
                         length=geo.length, points=geo.points, weights=geo.weights,
                         closest=closest, d=d, true_normal=true_normal,
                         tags=np.asarray(tags, dtype=object))


def classify(mesh: BackgroundMesh, box: ParamBox | None) -> SurrogateDomain:
    """Split the background mesh into active and inactive elements for ``box``.

    ``box=None`` gives the obstacle-free channel.
    """
    if box is None:
        phi = np.full(mesh.n_nodes, np.inf)
    else:
        phi = levelset_eval(box, mesh.nodes)
    active = np.all(phi[mesh.triangles] > 0, axis=1)
    if not active.any():
        raise DegenerateDomainError("no active element: the obstacle covers the channel")

    active_nodes = np.zeros(mesh.n_nodes, dtype=bool)
    active_nodes[mesh.triangles[active]] = True

    ee = mesh.edge_elements
    interior = ee[:, 1] >= 0
    a0 = active[ee[:, 0]]
    a1 = np.where(interior, active[np.maximum(ee[:, 1], 0)], False)
    cut = interior & (a0 != a1)
    obstacle_ids = np.flatnonzero(cut)
    owners = np.where(a0[cut], ee[cut, 0], ee[cut, 1])
    obstacle = _boundary_edges(mesh, obstacle_ids, owners,
                               np.full(len(obstacle_ids), "obstacle", dtype=object), box)

    outer_ids = np.flatnonzero(~interior & a0)
    outer = _boundary_edges(mesh, outer_ids, ee[outer_ids, 0], mesh.boundary_tags[outer_ids], None)

    return SurrogateDomain(mesh=mesh, box=box, phi=phi, active=active, active_nodes=active_nodes,
                           obstacle=obstacle, outer=outer,
                           obstacle_kinds=np.full(len(obstacle_ids), "dirichlet", dtype=object))


def partition_surrogate_dirichlet(
    surrogate: SurrogateDomain,
    bc: Callable[[np.ndarray], np.ndarray] | None = None,
) -> SurrogateDomain:
    """Tag each obstacle surrogate edge with the condition of its image on the box.

    ``bc`` maps true-boundary points ``(n, 2)`` to kinds in ``BC_KINDS``; ``None``
    means a fully Dirichlet obstacle. Each edge is sampled at its quadrature
    points and midpoint; the kind held by the majority of the sample images wins.
    """
    edges = surrogate.obstacle
    if bc is None or len(edges) == 0:
        kinds = np.full(len(edges), "dirichlet", dtype=object)
        return replace(surrogate, obstacle_kinds=kinds)

    mesh = surrogate.mesh
    mid = mesh.nodes[mesh.edges[edges.edge_ids]].mean(axis=1)
    samples = np.concatenate([edges.points, mid[:, None, :]], axis=1)
    images, _, _, _ = closest_point(surrogate.box, samples.reshape(-1, 2), allow_inside=True)
    point_kinds = np.asarray(bc(images), dtype=object).reshape(samples.shape[:2])
    bad = ~np.isin(point_kinds, BC_KINDS)
    if bad.any():
        raise BoundaryConfigurationError(
            f"{int(bad.sum())} surrogate points map onto boundary without a condition "
            f"(got {sorted(set(point_kinds[bad].tolist()))!r})")
    dirichlet = 2 * np.sum(point_kinds == "dirichlet", axis=1) > samples.shape[1]
    kinds = np.where(dirichlet, "dirichlet", "neumann").astype(object)
    return replace(surrogate, obstacle_kinds=kinds)
