import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbmrom.fem import element_geometry
from sbmrom.mesh import (BOUNDARY_SIDES, build_background_mesh, inner_product, local_mass,
                         mass_structure)


def test_minimal_grid():
    m = build_background_mesh((0, 1, 0, 1), 1.0)
    assert (m.nx, m.ny, m.n_elements, m.n_nodes) == (1, 1, 2, 4)


def test_channel_counts():
    m = build_background_mesh((-2, 2, -1, 1), 0.5)
    assert (m.nx, m.ny) == (8, 4)
    assert m.n_elements == 2 * 8 * 4 == 64
    assert m.n_nodes == 9 * 5 == 45


@pytest.mark.parametrize("h", [0.5, 0.25, 0.1, 0.035])
def test_areas_partition_channel(h):
    m = build_background_mesh((-2, 2, -1, 1), h)
    assert m.areas.sum() == pytest.approx(8.0, rel=1e-13)
    assert np.all(m.areas > 0)


def test_cell_count_is_not_fooled_by_rounding():
    # 4 / 0.1 is 40.00000000000001 in floating point
    assert build_background_mesh((-2, 2, -1, 1), 0.1).nx == 40


@pytest.mark.parametrize("bounds,h", [((0, 0, 0, 1), 0.1), ((0, 1, 1, 0), 0.1), ((0, 1, 0, 1), 0.0),
                                      ((0, 1, 0, 1), -1.0)])
def test_rejects_bad_input(bounds, h):
    with pytest.raises(ValueError):
        build_background_mesh(bounds, h)


def test_mesh_invariants(coarse_mesh):
    m = coarse_mesh
    ee = m.edge_elements
    interior = ee[:, 1] >= 0
    tagged = m.boundary_tags != ""
    assert np.array_equal(~interior, tagged)
    assert set(m.boundary_tags[tagged]) == set(BOUNDARY_SIDES)
    # each element lists each of its edges once, and the edge owners agree
    for e in range(m.n_elements):
        for k in m.element_edges[e]:
            assert e in ee[k]
    counts = np.bincount(m.element_edges.ravel(), minlength=len(m.edges))
    assert np.array_equal(counts, np.where(interior, 2, 1))
    x0, x1, y0, y1 = m.bounds
    assert np.all((m.nodes[:, 0] >= x0) & (m.nodes[:, 0] <= x1))
    assert np.all((m.nodes[:, 1] >= y0) & (m.nodes[:, 1] <= y1))
    assert m.h == pytest.approx(element_geometry(m).diameter.max())
    assert m.h == pytest.approx(np.hypot(*m.cell_size))


def test_boundary_tags_by_side(coarse_mesh):
    m = coarse_mesh
    mid = m.nodes[m.edges].mean(axis=1)
    assert np.allclose(mid[m.boundary_edge_ids("inflow"), 0], -2)
    assert np.allclose(mid[m.boundary_edge_ids("outflow"), 0], 2)
    assert np.allclose(mid[m.boundary_edge_ids("wall_bottom"), 1], -1)
    assert np.allclose(mid[m.boundary_edge_ids("wall_top"), 1], 1)
    assert len(m.boundary_edge_ids("inflow")) == m.ny


def test_deterministic():
    a = build_background_mesh((-2, 2, -1, 1), 0.3)
    b = build_background_mesh((-2, 2, -1, 1), 0.3)
    for name in ("nodes", "triangles", "edges", "edge_elements", "element_edges"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.signature() == b.signature()


def test_local_mass_unit_triangle():
    M = local_mass(np.array([0.5]))[0]
    assert np.allclose(np.diag(M), 0.5 / 6)
    assert np.allclose(M[~np.eye(3, dtype=bool)], 0.5 / 12)


@pytest.fixture(scope="module")
def unit_square():
    return build_background_mesh((0, 1, 0, 1), 0.2)


def test_mass_structure_invariants(unit_square, rng):
    ms = mass_structure(unit_square)
    assert ms.measure == pytest.approx(1.0)
    assert abs(ms.matrix - ms.matrix.T).max() < 1e-15
    subset = rng.random(unit_square.n_elements) < 0.4
    sub = mass_structure(unit_square, subset)
    assert sub.measure == pytest.approx(unit_square.areas[subset].sum(), rel=1e-14)
    lumped = np.zeros(unit_square.n_nodes)
    for e in np.flatnonzero(subset):
        lumped[unit_square.triangles[e]] += unit_square.areas[e] / 3
    assert np.allclose(sub.lumped, lumped, atol=1e-15)
    with pytest.raises(ValueError):
        mass_structure(unit_square, np.zeros(unit_square.n_elements, dtype=bool))


def test_inner_product_examples(unit_square):
    ms = mass_structure(unit_square)
    x, y = unit_square.nodes.T
    one = np.ones(unit_square.n_nodes)
    assert inner_product(one, one, ms) == pytest.approx(1.0, abs=1e-13)
    assert inner_product(one, x, ms) == pytest.approx(0.5, abs=1e-13)
    assert abs(inner_product(x, y, ms) - 0.25) < 1e-12
    with pytest.raises(ValueError):
        inner_product(one[:-1], one[:-1], ms)


@given(st.integers(0, 2**32 - 1))
def test_inner_product_symmetric_bilinear(seed):
    m = build_background_mesh((0, 1, 0, 1), 0.25)
    ms = mass_structure(m)
    r = np.random.default_rng(seed)
    f, g, k = r.normal(size=(3, m.n_nodes))
    a, b = r.normal(size=2)
    assert inner_product(f, g, ms) == pytest.approx(inner_product(g, f, ms), rel=1e-12, abs=1e-14)
    lhs = inner_product(a * f + b * k, g, ms)
    rhs = a * inner_product(f, g, ms) + b * inner_product(k, g, ms)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)
    assert inner_product(f, f, ms) >= 0


def test_vector_fields_inner_product(unit_square):
    ms = mass_structure(unit_square)
    x, y = unit_square.nodes.T
    u = np.column_stack([x, y])
    # P1 interpolants of x and y are exact, so int x^2 + y^2 = 2/3 exactly
    assert abs(inner_product(u, u, ms) - 2 / 3) < 1e-12


def test_locate_and_interpolate(coarse_mesh, rng):
    pts = np.column_stack([rng.uniform(-2, 2, 200), rng.uniform(-1, 1, 200)])
    elem, bary = coarse_mesh.locate(pts)
    assert np.allclose(bary.sum(axis=1), 1)
    assert bary.min() > -1e-12
    rebuilt = np.einsum("pa,pad->pd", bary, coarse_mesh.nodes[coarse_mesh.triangles[elem]])
    assert np.allclose(rebuilt, pts)
    f = 2 * coarse_mesh.nodes[:, 0] - 3 * coarse_mesh.nodes[:, 1] + 1
    assert np.allclose(coarse_mesh.interpolate(f, pts), 2 * pts[:, 0] - 3 * pts[:, 1] + 1)
    with pytest.raises(ValueError):
        coarse_mesh.locate([[3.0, 0.0]])
