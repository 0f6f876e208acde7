import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbmrom.geometry import ParamBox, classify
from sbmrom.mesh import build_background_mesh
from sbmrom.poisson import PoissonOperator, l2_error, solve_sbm_poisson

CHANNEL = (-2.0, 2.0, -1.0, 1.0)
BOX = ParamBox((-0.55, 0.02), (0.35, 0.3375))


def exact(x):
    return np.sin(np.pi * x[:, 0] / 2) * np.cos(np.pi * x[:, 1] / 2) + 0.5 * x[:, 0] * x[:, 1]


def forcing(x):
    return np.pi ** 2 / 2 * np.sin(np.pi * x[:, 0] / 2) * np.cos(np.pi * x[:, 1] / 2)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_linear_solutions_are_reproduced(a, b, c):
    # the Taylor shift is exact for linear fields, so P1 recovers them up to round-off
    mesh = build_background_mesh(CHANNEL, 0.25)
    s = classify(mesh, ParamBox((0.1, -0.05), (0.42, 0.33)))

    def lin(x):
        return a + b * x[:, 0] + c * x[:, 1]

    uh = solve_sbm_poisson(s, g=lin)
    act = s.active_nodes
    assert np.abs(uh[act] - lin(mesh.nodes[act])).max() < 1e-9
    assert np.all(uh[~act] == 0)


def test_operator_is_symmetric_without_shift(coarse_mesh):
    A = PoissonOperator(classify(coarse_mesh, None)).matrix
    assert abs(A - A.T).max() < 1e-12


def test_shift_only_breaks_symmetry_on_obstacle_edges(coarse_surrogate):
    s = coarse_surrogate
    A = PoissonOperator(s).matrix.tocoo()
    asym = abs(A - A.T).tocoo()
    touched = np.unique(s.mesh.triangles[s.obstacle.elements])
    bad = asym.data > 1e-12
    assert bad.any()
    assert np.isin(asym.row[bad], touched).all() and np.isin(asym.col[bad], touched).all()


def test_homogeneous_problem_has_zero_solution(coarse_surrogate):
    assert np.all(solve_sbm_poisson(coarse_surrogate) == 0)


def test_gradient_load_of_constant_vanishes(coarse_surrogate):
    op = PoissonOperator(coarse_surrogate)
    load = op.element_gradient_load(np.full(coarse_surrogate.mesh.n_nodes, 3.7))
    assert np.abs(load).max() < 1e-14


def test_gradient_load_matches_mass_times_gradient(coarse_mesh):
    # (grad chi, v) for chi = 2x - y is the row sum of the mass matrix times (2, -1)
    s = classify(coarse_mesh, None)
    chi = 2 * coarse_mesh.nodes[:, 0] - coarse_mesh.nodes[:, 1]
    load = PoissonOperator(s).element_gradient_load(chi)
    lumped = np.bincount(coarse_mesh.triangles.ravel(),
                         weights=np.repeat(coarse_mesh.areas / 3, 3), minlength=coarse_mesh.n_nodes)
    assert np.allclose(load, lumped[:, None] * np.array([2.0, -1.0]), atol=1e-14)


@pytest.mark.parametrize("box", [BOX, ParamBox((0.113, -0.071), (0.41, 0.29))])
def test_manufactured_solution_converges_at_second_order(box):
    errs = []
    for h in (0.1, 0.05):
        s = classify(build_background_mesh(CHANNEL, h), box)
        errs.append(l2_error(s, solve_sbm_poisson(s, forcing, exact), exact))
    assert np.log2(errs[0] / errs[1]) >= 1.8


def test_l2_error_of_exact_interpolant_is_small(desk_mesh):
    s = classify(desk_mesh, BOX)
    err = l2_error(s, exact(desk_mesh.nodes), exact)
    assert 0 < err < 1e-2
    assert l2_error(s, np.zeros(desk_mesh.n_nodes), lambda x: np.zeros(len(x))) == 0.0
