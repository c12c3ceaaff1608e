from fractions import Fraction
from math import comb

import numpy as np
import pytest

from pyrafem import spaces as sp
from pyrafem.element import (CoefficientTensor, analytic_bilinear_matrix, consistency_error_element,
                             counterexample_integrand, counterexample_sums, derivative_matrix,
                             evaluate_combination, exact_coordinates, interpolate, local_bilinear_matrix,
                             physical_field)
from pyrafem.errors import DimensionMismatchError, DivergentIntegralError
from pyrafem.geometry import AffinePyramid
from pyrafem.quadrature import conical_rule, integrate_on_pyramid
from pyrafem.ratpoly import RationalPoly as R
from pyrafem.ratpoly import integrate_reference
from pyrafem.verify import _smooth_fields, random_pyramid, random_spd

REF = AffinePyramid.reference()
SKEW = AffinePyramid((0.125, -0.25, 0.5), (1.0, 0.25, 0.0), (0.125, 0.75, 0.25), (0.5, 0.5, 1.5))


def test_scalar_mass_of_constant():
    basis = sp.SpaceBasis(0, 1, "custom", [sp.FormPoly(0, (R.constant(1),))])
    A = CoefficientTensor.identity(0)
    assert local_bilinear_matrix(basis, A, REF).values[0, 0] == pytest.approx(1 / 3)
    assert local_bilinear_matrix(basis, A, SKEW).values[0, 0] == pytest.approx(abs(SKEW.det) / 3)
    assert analytic_bilinear_matrix(basis, A, REF).exact.fraction(0, 0) == Fraction(1, 3)


def test_three_form_mass():
    U3 = sp.build_underlying_basis(3, 1)
    (f,) = U3.basis
    assert f.components[0] == R.monomial(0, 0, 4)
    # the pulled-back density is 1, so the element mass is the volume
    A = CoefficientTensor.identity(3)
    assert analytic_bilinear_matrix(U3, A, REF).exact.fraction(0, 0) == Fraction(1, 3)
    assert local_bilinear_matrix(U3, A, REF).values[0, 0] == pytest.approx(1 / 3, abs=1e-15)
    # the squared infinite-coordinate component integrates to 1/11
    sq = f.components[0] * f.components[0]
    assert integrate_reference(sq) == Fraction(1, 11)
    assert integrate_on_pyramid(sq, None, conical_rule(4)) == pytest.approx(1 / 11, abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        local_bilinear_matrix(sp.build_reduced_basis(1, 1), CoefficientTensor.identity(0), REF)
    with pytest.raises(DimensionMismatchError):
        CoefficientTensor.constant(1, np.eye(2))


@pytest.mark.parametrize("s", range(4))
@pytest.mark.parametrize("k", [1, 2])
def test_quadrature_matches_exact_matrix(s, k):
    rng = np.random.default_rng(10 * s + k)
    basis = sp.build_underlying_basis(s, k)
    A = CoefficientTensor.constant(s, random_spd(rng, comb(3, s)))
    for K in (REF, random_pyramid(rng)):
        exact = analytic_bilinear_matrix(basis, A, K)
        vals = exact.values
        approx = local_bilinear_matrix(basis, A, K, rule=k).values
        assert np.abs(approx - vals).max() <= 1e-12 * np.abs(vals).max()
        assert all(exact.exact.fraction(i, j) == exact.exact.fraction(j, i)
                   for i in range(len(basis)) for j in range(i))
        if s == 3:
            low = local_bilinear_matrix(basis, A, K, reduced=True).values
            assert np.abs(low - vals).max() <= 1e-12 * np.abs(vals).max()


def test_float_constant_tensor_oracle():
    A = CoefficientTensor.constant(1, np.diag([1.5, 0.25, 2.0]))
    basis = sp.build_reduced_basis(1, 1)
    exact = analytic_bilinear_matrix(basis, A, SKEW).values
    approx = local_bilinear_matrix(basis, A, SKEW).values
    assert np.abs(exact - approx).max() <= 1e-13 * np.abs(exact).max()


@pytest.mark.parametrize("family", [sp.REDUCED, sp.CONFORMING])
@pytest.mark.parametrize("s", range(4))
@pytest.mark.parametrize("k", [1, 2])
def test_interpolation_is_projection(family, s, k):
    basis = sp.build_reduced_basis(s, k) if family == sp.REDUCED else sp.build_conforming_basis(s, k)
    for i, f in enumerate(basis.basis):
        du = physical_field(sp.exterior_derivative(f), SKEW) if s < 3 else None
        c = interpolate(physical_field(f, SKEW), k, SKEW, s=s, du=du, family=family)
        c[i] -= 1.0
        assert np.abs(c).max() <= 1e-11


@pytest.mark.parametrize("s", range(3))
@pytest.mark.parametrize("k", [1, 2])
def test_interpolation_commutes(s, k):
    u, du, ddu = _smooth_fields(s)
    a = interpolate(u, k, SKEW, s=s, du=du, family=sp.REDUCED)
    b = interpolate(du, k, SKEW, s=s + 1, du=ddu, family=sp.REDUCED)
    assert np.abs(derivative_matrix(sp.REDUCED, s, k) @ a - b).max() <= 1e-10


def _pointwise_residual(u, du, k, K, family=sp.CONFORMING):
    basis = sp.build_conforming_basis(0, k) if family == sp.CONFORMING else sp.build_reduced_basis(0, k)
    c = interpolate(u, k, K, s=0, du=du, family=family)
    rng = np.random.default_rng(5)
    ref = rng.uniform(0, 1, (50, 3))
    ref[:, 2] *= 0.95
    ref[:, :2] *= (1 - ref[:, 2:3])
    pts = K.map(ref)
    return np.abs(evaluate_combination(basis, c, K, pts) - u(pts)).max()


def test_reproduces_linear():
    u = lambda p: p[:, 0]  # noqa: E731
    du = lambda p: np.tile([1.0, 0.0, 0.0], (len(p), 1))  # noqa: E731
    assert _pointwise_residual(u, du, 1, REF) <= 1e-13


def test_reproduces_cubic():
    u = lambda p: p[:, 0] ** 2 * p[:, 1]  # noqa: E731
    du = lambda p: np.column_stack([2 * p[:, 0] * p[:, 1], p[:, 0] ** 2, np.zeros(len(p))])  # noqa: E731
    assert _pointwise_residual(u, du, 3, REF) <= 1e-11
    assert _pointwise_residual(u, du, 3, SKEW, sp.REDUCED) <= 1e-11


@pytest.mark.parametrize("s", range(4))
def test_consistency_vanishes_for_constant_tensor(s):
    rng = np.random.default_rng(s)
    A = CoefficientTensor.constant(s, random_spd(rng, comb(3, s)))
    u = _smooth_fields(s)[0] if s < 3 else (lambda p: np.exp(p[:, 0]) * np.cos(p[:, 2]))
    du = _smooth_fields(s)[1] if s < 3 else None
    assert consistency_error_element(u, A, SKEW, 2, du=du) <= 1e-12


def test_polynomial_tensor_on_exact_weight_pairs():
    k = 2
    for r in range(k + 1):
        X = sp.build_exact_weight_basis(0, k, r)
        d = k - r
        A = CoefficientTensor.field(0, lambda p, d=d: 1 + p[:, 0] ** d + p[:, 1] * p[:, 2] ** max(d - 1, 0),
                                    smoothness=d)
        E = local_bilinear_matrix(X, A, SKEW, rule=k).values - local_bilinear_matrix(X, A, SKEW, rule=k + 6).values
        assert np.abs(E).max() <= 1e-12


def test_smooth_tensor_gives_nonzero_consistency():
    A = CoefficientTensor.field(0, lambda p: np.exp(p[:, 0]))
    u, du = _smooth_fields(0)[:2]
    assert consistency_error_element(u, A, SKEW, 1, du=du) > 1e-8


def test_exact_coordinates_roundtrip():
    basis = sp.build_reduced_basis(1, 2)
    f = basis.basis[3] + basis.basis[7].scale(Fraction(2))
    c = exact_coordinates(basis, f)
    expected = np.zeros(len(basis))
    expected[3], expected[7] = 1, 2
    np.testing.assert_array_equal(c, expected)


def test_counterexample_integral_diverges():
    p = counterexample_integrand()
    assert p == R.monomial(2, 2, -4, 36)
    with pytest.raises(DivergentIntegralError):
        integrate_reference(p)
    sums = counterexample_sums([5, 10, 15, 20])
    assert all(b > a for a, b in zip(sums, sums[1:]))
