"""Invariant suite behind ``pyrafem verify``."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb

import numpy as np

from . import spaces as sp
from .element import (CoefficientTensor, analytic_bilinear_matrix, derivative_matrix, interpolate,
                       local_bilinear_matrix, physical_field)
from .errors import PyrafemError
from .geometry import AffinePyramid
from .quadrature import monomial_integral, separable_sums
from .ratpoly import SpaceSpec, membership


@dataclass
class Check:
    name: str
    passed: bool
    worst_residual: float = 0.0
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "status": "pass" if self.passed else "fail",
                "worst_residual": self.worst_residual, "detail": self.detail}


def random_pyramid(rng: np.random.Generator) -> AffinePyramid:
    """Affine pyramid with dyadic vertex data, so the rational oracle stays small."""
    while True:
        J = np.eye(3) + np.round(rng.uniform(-0.4, 0.4, (3, 3)) * 64) / 64
        if np.linalg.det(J) > 0.2:
            break
    v0 = np.round(rng.uniform(-1, 1, 3) * 64) / 64
    return AffinePyramid(tuple(v0), tuple(J[:, 0]), tuple(J[:, 1]), tuple(v0 + J[:, 2]))


def random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    X = np.round(rng.normal(size=(n, n)) * 16) / 16
    return X @ X.T + n * np.eye(n)


def check_quadrature(k_max: int) -> Check:
    worst = 0.0
    for k in range(k_max + 1):
        top = 2 * k + 1
        for a in range(top + 1):
            for b in range(top + 1):
                for c in range(top + 1):
                    sx, sy, sz = separable_sums(a, b, c, k)
                    exact = float(monomial_integral(a, b, c))
                    worst = max(worst, abs(sx * sy * sz - exact) / max(1.0, abs(exact)))
    return Check("quadrature_exactness", worst <= 1e-13, worst)


def check_pullback(k_max: int, degrees) -> Check:
    bad = 0
    for k in range(1, k_max + 1):
        spec = SpaceSpec.tensor(k, k, k, k)
        for s in degrees:
            for f in sp.build_underlying_basis(s, k).basis:
                bad += not all(membership(c, spec) for c in sp.pullback_components(f))
    return Check("pullback_membership", bad == 0, float(bad))


def check_gram_exactness(k_max: int, degrees, rng: np.random.Generator, n_tensors: int = 2,
                      n_pyramids: int = 1) -> Check:
    pyramids = [AffinePyramid.reference()] + [random_pyramid(rng) for _ in range(n_pyramids)]
    worst = 0.0
    for s in degrees:
        for k in range(1, min(k_max, 3) + 1):
            basis = sp.build_underlying_basis(s, k)
            for _ in range(n_tensors):
                A = CoefficientTensor.constant(s, random_spd(rng, comb(3, s)))
                for K in pyramids:
                    exact = analytic_bilinear_matrix(basis, A, K).values
                    scale = np.abs(exact).max()
                    orders = [k, k - 1] if s == 3 else [k]
                    for q in orders:
                        approx = local_bilinear_matrix(basis, A, K, rule=q).values
                        worst = max(worst, float(np.abs(approx - exact).max() / scale))
    return Check("gram_exactness", worst <= 1e-12, worst)


def check_inclusions(k_max: int, degrees) -> Check:
    bad = 0
    for k in range(1, k_max + 1):
        for s in degrees:
            R, C, U = (sp.build_reduced_basis(s, k), sp.build_conforming_basis(s, k),
                       sp.build_underlying_basis(s, k))
            bad += sum(not U.contains(f) for f in R.basis)
            bad += sum(not C.contains(f) for f in R.basis)
    return Check("reduced_inclusions", bad == 0, float(bad))


def check_embedding(k_max: int, degrees) -> Check:
    count = bad = 0
    for k in range(1, k_max + 1):
        for s in degrees:
            degree = k if s == 0 else k - 1
            ncomp = comb(3, s)
            for mono in sp.reference_monomials(degree):
                for i in range(ncomp):
                    comps = [{} for _ in range(ncomp)]
                    comps[i] = {mono: Fraction(1)}
                    count += 1
                    try:
                        sp.polynomial_embed(s, k, comps)
                    except PyrafemError:
                        bad += 1
    return Check("polynomial_embedding", bad == 0, float(bad), {"monomials": count})


def check_sequence(k_max: int) -> Check:
    reports = [sp.exact_sequence_report(k) for k in range(1, k_max + 1)]
    ok = all(r.exact and r.euler == 1 for r in reports)
    return Check("exact_sequence", ok, 0.0, {"dims": {r.k: list(r.dims) for r in reports}})


def check_decomposition(k_max: int, degrees) -> Check:
    bad = 0
    for k in range(1, k_max + 1):
        for s in degrees:
            R = sp.build_reduced_basis(s, k)
            total = sum(len(sp.build_exact_weight_basis(s, k, r)) for r in range(k + 1))
            bad += total != len(R)
            for f in R.basis:
                parts = sp.decompose_exact_weight(f, k)
                acc = sp.FormPoly.zero(s)
                for r, part in parts.items():
                    acc = acc + part
                    bad += not sp.is_exactly_weighted(part, r) or not R.contains(part)
                bad += acc != f
    return Check("exact_weight_decomposition", bad == 0, float(bad))


def check_interpolation(k_max: int, degrees, rng: np.random.Generator) -> Check:
    K = random_pyramid(rng)
    worst_proj = worst_comm = 0.0
    for k in range(1, min(k_max, 3) + 1):
        for s in degrees:
            basis = sp.build_reduced_basis(s, k)
            for i, f in enumerate(basis.basis):
                du = physical_field(sp.exterior_derivative(f), K) if s < 3 else None
                c = interpolate(physical_field(f, K), k, K, s=s, du=du, family=sp.REDUCED)
                c[i] -= 1.0
                worst_proj = max(worst_proj, float(np.abs(c).max()))
            if s < 3:
                u, du, ddu = _smooth_fields(s)
                a = interpolate(u, k, K, s=s, du=du, family=sp.REDUCED)
                b = interpolate(du, k, K, s=s + 1, du=ddu, family=sp.REDUCED)
                worst_comm = max(worst_comm, float(np.abs(derivative_matrix(sp.REDUCED, s, k) @ a - b).max()))
    worst = max(worst_proj, worst_comm)
    return Check("interpolation", worst_proj <= 1e-10 and worst_comm <= 1e-10, worst,
                 {"projection": worst_proj, "commuting": worst_comm})


def _smooth_fields(s: int):
    if s == 0:
        def u(p):
            return np.exp(p[:, 0]) * np.sin(p[:, 1] + p[:, 2])

        def du(p):
            e, c = np.exp(p[:, 0]), np.cos(p[:, 1] + p[:, 2])
            return np.column_stack([u(p), e * c, e * c])

        return u, du, lambda p: np.zeros((len(p), 3))
    if s == 1:
        def u(p):
            return np.column_stack([np.sin(p[:, 2]), p[:, 0] * p[:, 1] ** 2, np.cos(p[:, 0])])

        def du(p):
            return np.column_stack([np.zeros(len(p)), np.cos(p[:, 2]) + np.sin(p[:, 0]), p[:, 1] ** 2])

        return u, du, lambda p: np.zeros(len(p))

    def u(p):
        return np.column_stack([np.sin(p[:, 1]), p[:, 0] * p[:, 2], np.exp(p[:, 2])])

    return u, (lambda p: np.exp(p[:, 2])), None


def run_suite(k_max: int, degrees=(0, 1, 2, 3), seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    checks = []
    steps = [
        lambda: check_quadrature(k_max),
        lambda: check_pullback(k_max, degrees),
        lambda: check_gram_exactness(k_max, degrees, rng),
        lambda: check_inclusions(k_max, degrees),
        lambda: check_embedding(k_max, degrees),
        lambda: check_sequence(k_max),
        lambda: check_decomposition(k_max, degrees),
        lambda: check_interpolation(k_max, degrees, rng),
    ]
    for step in steps:
        checks.append(step())
    t31 = next(c for c in checks if c.name == "gram_exactness")
    return {"k_max": k_max, "degrees": list(degrees), "seed": seed,
            "passed": all(c.passed for c in checks),
            "theorem_3_1_max_residual": t31.worst_residual,
            "checks": [c.as_dict() for c in checks]}
