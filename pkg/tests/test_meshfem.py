import json

import numpy as np
import pytest
from scipy.sparse.linalg import spsolve

from pyrafem import spaces as sp
from pyrafem.element import CoefficientTensor
from pyrafem.errors import IndefiniteSystemError, NonconformingMeshError
from pyrafem.meshfem import (COEFFICIENTS, COLUMNS, SOLUTIONS, PyramidMesh, StudyResult, _entity_tables, _scatter,
                             assemble_poisson, build_cube_mesh, check_conformity, consistency_study,
                             convergence_study, dof_map, element_load, element_mass, error_norms, fit_rate,
                             global_interpolant, lattice_nodes, nodal_element, pair_rate)


def test_single_cube_counts():
    mesh = build_cube_mesh(1)
    assert mesh.n_elements == 6
    assert len(mesh.vertices) == 9
    assert mesh.volume() == pytest.approx(1.0, abs=1e-14)
    assert np.all(mesh.dets > 0)


@pytest.mark.parametrize("n", [2, 3])
def test_refined_mesh(n):
    mesh = build_cube_mesh(n)
    assert mesh.n_elements == 6 * n ** 3
    assert mesh.volume() == pytest.approx(1.0, abs=1e-13)
    assert mesh.h == pytest.approx(build_cube_mesh(1).h / n, rel=1e-14)
    # every interior face has two owners
    assert all(len(o) == 2 for k, o in mesh.faces.items() if k not in mesh.boundary_faces())
    # each boundary subcube face is the base of one pyramid
    assert len(mesh.boundary_faces()) == 6 * n ** 2


def test_rho_constant_under_refinement():
    assert build_cube_mesh(1).rho_max == build_cube_mesh(4).rho_max


def test_mesh_json_dump():
    mesh = build_cube_mesh(1)
    data = json.loads(mesh.to_json())
    assert len(data["vertices"]) == 9 and len(data["elements"]) == 6
    assert set(data["elements"][0]) == {"v0", "e1", "e2", "apex", "global_vertex_ids"}


def test_nonconforming_mesh_detected():
    mesh = build_cube_mesh(1)
    cells = mesh.cells[1:]
    faces, edges = _entity_tables(cells)
    broken = PyramidMesh(mesh.vertices, cells, mesh.elements[1:], faces, edges, mesh.h, mesh.rho_max, mesh.grid)
    with pytest.raises(NonconformingMeshError):
        check_conformity(broken)


def test_lattice_nodes():
    assert len(lattice_nodes(1)) == 5
    assert len(lattice_nodes(2)) == 14


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_nodal_element_duality(k):
    el = nodal_element(k)
    np.testing.assert_allclose(el.functionals @ el.coeffs, np.eye(el.ndof), atol=1e-10)


def test_dof_count_lowest_order():
    mesh = build_cube_mesh(1)
    system = assemble_poisson(mesh, 1, CoefficientTensor.identity(1), None, 1)
    assert system.ndof == 9
    assert system.dirichlet.sum() == 8


def test_zero_source_gives_zero_solution():
    system = assemble_poisson(build_cube_mesh(1), 1, CoefficientTensor.identity(1), lambda p: np.zeros(len(p)), 1)
    assert np.abs(system.solve()).max() == 0.0


def test_matrix_symmetric_and_residual():
    a, sol = COEFFICIENTS["poly1"], SOLUTIONS["sin3"]
    system = assemble_poisson(build_cube_mesh(2), 2, a.tensor(1), sol.source(a), 2)
    assert abs(system.matrix - system.matrix.T).max() == 0.0
    system.solve()
    assert system.residual() <= 1e-10


@pytest.mark.parametrize("k", [1, 2])
def test_stiffness_independent_of_rule(k):
    mesh = build_cube_mesh(1)
    A = CoefficientTensor.constant(1, [[2.0, 0.5, 0.0], [0.5, 1.0, 0.25], [0.0, 0.25, 3.0]])
    K1 = assemble_poisson(mesh, k, A, None, k).matrix
    K2 = assemble_poisson(mesh, k, A, None, k + 3).matrix
    assert abs(K1 - K2).max() <= 1e-12


def test_indefinite_system_rejected():
    system = assemble_poisson(build_cube_mesh(2), 1, CoefficientTensor.constant(1, -np.eye(3)),
                              lambda p: np.ones(len(p)), 1)
    with pytest.raises(IndefiniteSystemError):
        system.solve()


@pytest.mark.parametrize("k", [1, 2])
def test_constant_reproduced_by_mass_projection(k):
    mesh = build_cube_mesh(2)
    el = nodal_element(k)
    dmap, ndof, _ = dof_map(mesh, el)
    M = _scatter(dmap, element_mass(mesh, el, None, k + 2), ndof)
    b = np.zeros(ndof)
    np.add.at(b, dmap, element_load(mesh, el, lambda p: np.ones(len(p)), k + 2))
    c = spsolve(M.tocsc(), b)
    system = assemble_poisson(mesh, k, CoefficientTensor.identity(1), None, k)
    l2, h1 = error_norms(system, lambda p: np.ones(len(p)), lambda p: np.zeros((len(p), 3)), coeffs=c)
    assert l2 <= 1e-12 and h1 <= 1e-11
    # the lattice values are all one
    assert np.abs(c[:dmap[:, :el.n_nodes].max() + 1] - 1).max() <= 1e-12


@pytest.mark.parametrize("family", [sp.REDUCED, sp.CONFORMING])
@pytest.mark.parametrize("k", [1, 2])
def test_interpolant_of_space_member(family, k):
    mesh = build_cube_mesh(2)

    def u(p):
        return 1 + p[:, 0] - 2 * p[:, 1] + 0.5 * p[:, 2] + (k - 1) * p[:, 0] * p[:, 2]

    def du(p):
        return np.column_stack([1 + (k - 1) * p[:, 2], -2 * np.ones(len(p)), 0.5 + (k - 1) * p[:, 0]])

    c, mismatch = global_interpolant(mesh, k, u, du, family)
    assert mismatch <= 1e-11
    system = assemble_poisson(mesh, k, CoefficientTensor.identity(1), None, k, family)
    l2, h1 = error_norms(system, u, du, coeffs=c)
    assert l2 <= 1e-11 and h1 <= 1e-11


def test_error_norms_of_zero_exact_solution():
    mesh = build_cube_mesh(1)
    a, sol = COEFFICIENTS["identity"], SOLUTIONS["poly_bubble"]
    system = assemble_poisson(mesh, 2, a.tensor(1), sol.source(a), 2)
    system.solve()
    zero = lambda p: np.zeros(len(p))  # noqa: E731
    l2, h1 = error_norms(system, zero, lambda p: np.zeros((len(p), 3)))
    el = system.element
    dmap = system.dofmap
    M = _scatter(dmap, element_mass(mesh, el, None, 5), system.ndof)
    assert l2 == pytest.approx(np.sqrt(system.solution @ (M @ system.solution)), rel=1e-12)
    assert h1 == pytest.approx(np.sqrt(system.solution @ (system.matrix @ system.solution)), rel=1e-12)


def test_manufactured_source():
    a, sol = COEFFICIENTS["poly1"], SOLUTIONS["sin3"]
    p = np.random.default_rng(0).uniform(0.1, 0.9, (5, 3))
    h = 1e-4
    flux = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        flux.append((a.value(p + e) * sol.grad(p + e)[:, i] - a.value(p - e) * sol.grad(p - e)[:, i]) / (2 * h))
    np.testing.assert_allclose(sol.source(a)(p), -sum(flux), rtol=1e-6)


def test_rates_helpers():
    assert pair_rate(1.0, 0.5, 4.0, 1.0) == pytest.approx(2.0)
    assert fit_rate([1, 0.5, 0.25], [1, 0.125, 1 / 64]) == pytest.approx(3.0)
    assert np.isnan(fit_rate([1, 0.5], [0.0, 0.0]))


def test_study_csv_format():
    res = StudyResult("convergence", 1)
    res.add(1, 1.0, 9, 0.5, 1.0)
    res.add(2, 0.5, 50, 0.125, 0.5)
    lines = res.to_csv().splitlines()
    assert lines[0] == ",".join(COLUMNS)
    assert lines[0] == "n,h,dofs,l2_error,h1_error,consistency,rate_l2,rate_h1,rate_consistency"
    last = lines[2].split(",")
    assert float(last[6]) == pytest.approx(2.0) and float(last[7]) == pytest.approx(1.0)
    assert last[5] == "" and last[8] == ""
    d = res.to_dict()
    assert d["rows"][0]["consistency"] is None
    json.dumps(d, allow_nan=False)


def test_convergence_study_small():
    res = convergence_study(1, 1, [1, 2])
    assert [r["n"] for r in res.rows] == [1, 2]
    assert res.rows[1]["h1_error"] < res.rows[0]["h1_error"]
    assert res.extra["max_residual"] <= 1e-10


def test_consistency_study_small():
    res = consistency_study(1, [1, 2])
    assert res.rows[1]["consistency"] < res.rows[0]["consistency"]
    assert res.extra["mismatch"] <= 1e-12
    assert max(res.extra["elliptic"]) <= 1e-12


def test_unknown_preset():
    with pytest.raises(ValueError):
        convergence_study(1, 1, [1], A="nope")
