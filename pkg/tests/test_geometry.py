from fractions import Fraction

import numpy as np
import pytest

from pyrafem.errors import DegenerateElementError
from pyrafem.geometry import (AffinePyramid, affine_map, affine_weight, det3_poly, exact_affine_weight,
                              infinite_weight, is_identity, jacobian, matmul_poly, projective_map_jacobian,
                              reference_entities, shape_params)
from pyrafem.meshfem import build_cube_mesh
from pyrafem.ratpoly import RationalPoly as R

SKEW = AffinePyramid((0.1, -0.2, 0.3), (1.0, 0.2, 0.0), (0.1, 0.8, 0.2), (0.4, 0.5, 1.3))


def test_reference_map_and_jacobian():
    K = AffinePyramid.reference()
    np.testing.assert_allclose(affine_map(K, (0.5, 0.5, 0.0)), (0.5, 0.5, 0.0))
    J, d = jacobian(K)
    np.testing.assert_array_equal(J, np.eye(3))
    assert d == 1.0


def test_scaled_pyramid():
    h = 0.5
    K = AffinePyramid((0, 0, 0), (h, 0, 0), (0, h, 0), (0, 0, h))
    J, d = jacobian(K)
    np.testing.assert_allclose(J, h * np.eye(3))
    assert d == pytest.approx(h ** 3)
    sp = shape_params(K)
    assert sp.h == pytest.approx(h) and sp.rho == pytest.approx(1.0)


def test_cube_split_pyramid_det():
    K = AffinePyramid((0, 0, 0), (1, 0, 0), (0, 1, 0), (0.5, 0.5, 0.5))
    assert K.det == pytest.approx(0.5)


def test_degenerate_rejected():
    with pytest.raises(DegenerateElementError):
        AffinePyramid((0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 0, 1))


def test_shape_params_reference():
    sp = shape_params(AffinePyramid.reference())
    assert sp.h == pytest.approx(1.0) and sp.rho == pytest.approx(1.0)


def test_rho_equal_over_one_cube():
    mesh = build_cube_mesh(1)
    rhos = [shape_params(K).rho for K in mesh.elements]
    assert max(rhos) - min(rhos) < 1e-12
    assert all(r >= 1 for r in rhos)


def test_inverse_map_roundtrip():
    pts = np.random.default_rng(3).uniform(0, 0.3, (10, 3))
    np.testing.assert_allclose(SKEW.inverse_map(SKEW.map(pts)), pts, atol=1e-14)


@pytest.mark.parametrize("s", range(4))
def test_infinite_weight_inverse_exact(s):
    W = infinite_weight(s)
    assert is_identity(matmul_poly(W.matrix, W.inverse))
    assert is_identity(matmul_poly(W.inverse, W.matrix))


def test_infinite_weight_examples():
    assert infinite_weight(0).matrix[0][0] == R.constant(1)
    assert infinite_weight(3).matrix[0][0] == R.monomial(0, 0, -4)
    inv = infinite_weight(1).inverse
    opz = R.monomial(0, 0, -1)
    w = R.monomial(0, 0, 2)
    expected = [[opz, R(), R()], [R(), opz, R()], [-R.monomial(1, 0, 0), -R.monomial(0, 1, 0), R.constant(1)]]
    assert all(inv[i][j] == expected[i][j] * w for i in range(3) for j in range(3))


def test_weights_against_projective_jacobian():
    # an independent symbolic Jacobian of phi(x, y, z) = (x, y, z) / (1 + z)
    J = projective_map_jacobian()
    det = det3_poly(J)
    assert det == R.monomial(0, 0, 4)
    JT = [[J[j][i] for j in range(3)] for i in range(3)]
    assert is_identity(matmul_poly(infinite_weight(1).matrix, JT))
    w2 = infinite_weight(2).matrix
    assert all(w2[i][j] == J[i][j] * R.monomial(0, 0, -4) for i in range(3) for j in range(3))
    assert infinite_weight(3).matrix[0][0] * det == R.constant(1)


def _fd_grad(f, p, h=1e-5):
    out = np.zeros((len(p), 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        out[:, i] = (f(p + e) - f(p - e)) / (2 * h)
    return out


def _fd_curl(F, p, h=1e-5):
    D = np.zeros((len(p), 3, 3))  # D[:, i, j] = dF_i/dx_j
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        D[:, :, j] = (F(p + e) - F(p - e)) / (2 * h)
    return np.column_stack([D[:, 2, 1] - D[:, 1, 2], D[:, 0, 2] - D[:, 2, 0], D[:, 1, 0] - D[:, 0, 1]])


def test_affine_weights_by_finite_differences():
    rng = np.random.default_rng(0)
    ref = rng.uniform(0.05, 0.3, (8, 3))
    J = SKEW.jacobian

    def f(x):
        return np.sin(x[:, 0]) * np.exp(x[:, 1]) + x[:, 2] ** 2

    # 1-forms: grad of the pulled back function is the reference proxy
    hat = _fd_grad(lambda r: f(SKEW.map(r)), ref)
    phys = _fd_grad(f, SKEW.map(ref))
    np.testing.assert_allclose(hat @ affine_weight(SKEW, 1).T, phys, atol=1e-8)

    # 2-forms: curl of a pulled back 1-form
    def A(x):
        return np.column_stack([x[:, 1] ** 2, np.cos(x[:, 0]), x[:, 0] * x[:, 2]])

    hatA = lambda r: A(SKEW.map(r)) @ J  # noqa: E731
    hat2 = _fd_curl(hatA, ref)
    phys2 = _fd_curl(A, SKEW.map(ref))
    np.testing.assert_allclose(hat2 @ affine_weight(SKEW, 2).T, phys2, atol=1e-8)

    # 3-forms: densities scale by the inverse volume factor
    assert affine_weight(SKEW, 3)[0, 0] == pytest.approx(1 / abs(SKEW.det))


def test_exact_affine_weight_matches_float():
    K = AffinePyramid((0, 0, 0), (Fraction(1, 2), 0, 0), (Fraction(1, 4), 1, 0), (0, Fraction(1, 8), 1))
    for s in range(4):
        ex = np.array([[float(v) for v in row] for row in exact_affine_weight(K, s)])
        np.testing.assert_allclose(ex, affine_weight(K, s), rtol=1e-14)


def test_reference_entities():
    ents = reference_entities()
    assert [len(ents[d]) for d in range(3)] == [5, 8, 5]
    kinds = [f.kind for f in ents[2]]
    assert kinds.count("quad") == 1 and kinds.count("triangle") == 4
