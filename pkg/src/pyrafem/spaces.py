"""Pyramid approximation spaces for the four slots of the de Rham complex.

Forms are stored through their proxy components in infinite-pyramid
coordinates: one scalar for 0- and 3-forms, ``(u1, u2, u3)`` for 1-forms and
``(u23, -u13, u12)`` for 2-forms.  Then grad, curl and div act component-wise.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Mapping, Sequence

from . import exact
from .errors import (DegreeError, DegreeTooHighError, InvalidOrderError,
                     NotInSpaceError)
from .geometry import infinite_weight
from .ratpoly import RationalPoly, SpaceSpec, compose_reference_polynomial

R = RationalPoly

UNDERLYING = "underlying"
CONFORMING = "conforming"
REDUCED = "reduced"
EXACT_WEIGHT = "exact_weight"


@dataclass(frozen=True)
class FormPoly:
    """An s-form given by its ``C(3, s)`` proxy components."""

    s: int
    components: tuple

    def __post_init__(self):
        if self.s not in (0, 1, 2, 3):
            raise ValueError("form degree must be 0..3")
        comps = tuple(c if isinstance(c, RationalPoly) else R.constant(c) for c in self.components)
        if len(comps) != comb(3, self.s):
            raise ValueError(f"a {self.s}-form has {comb(3, self.s)} components, got {len(comps)}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def zero(cls, s: int) -> "FormPoly":
        return cls(s, (R(),) * comb(3, s))

    @classmethod
    def scalar(cls, s: int, p: RationalPoly) -> "FormPoly":
        return cls(s, (p,))

    def __add__(self, other: "FormPoly") -> "FormPoly":
        self._check(other)
        return FormPoly(self.s, tuple(a + b for a, b in zip(self.components, other.components)))

    def __sub__(self, other: "FormPoly") -> "FormPoly":
        self._check(other)
        return FormPoly(self.s, tuple(a - b for a, b in zip(self.components, other.components)))

    def __neg__(self) -> "FormPoly":
        return FormPoly(self.s, tuple(-a for a in self.components))

    def scale(self, r) -> "FormPoly":
        return FormPoly(self.s, tuple(a.scale(r) for a in self.components))

    def _check(self, other):
        if not isinstance(other, FormPoly) or other.s != self.s:
            raise ValueError("forms of different degree")

    def is_zero(self) -> bool:
        return all(c.is_zero() for c in self.components)

    def vector(self) -> dict:
        """Sparse coefficient vector keyed by ``(component, a, b, c)``."""
        return {(i,) + key: v for i, comp in enumerate(self.components) for key, v in comp.items()}

    @classmethod
    def from_vector(cls, s: int, vec: Mapping) -> "FormPoly":
        comps = [{} for _ in range(comb(3, s))]
        for (i, a, b, c), v in vec.items():
            comps[i][(a, b, c)] = v
        return cls(s, tuple(R(c) for c in comps))


def combine(forms: Sequence[FormPoly], coeffs: Mapping[int, Fraction], s: int) -> FormPoly:
    out = FormPoly.zero(s)
    for j, v in coeffs.items():
        out = out + forms[j].scale(v)
    return out


class SpaceBasis:
    """Ordered, linearly independent list of forms spanning one space."""

    def __init__(self, s: int, k: int, family: str, basis: Sequence[FormPoly], r: int | None = None):
        self.s = s
        self.k = k
        self.family = family
        self.r = r
        self.basis = tuple(basis)
        self._ech = None
        self._lock = threading.Lock()
        self.memo: dict = {}

    def __len__(self) -> int:
        return len(self.basis)

    def __iter__(self):
        return iter(self.basis)

    def __getitem__(self, i):
        return self.basis[i]

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def __repr__(self) -> str:
        tag = self.family if self.r is None else f"{self.family}(r={self.r})"
        return f"SpaceBasis(s={self.s}, k={self.k}, {tag}, dim={len(self.basis)})"

    def _echelon(self) -> exact.Echelon:
        with self._lock:
            if self._ech is None:
                ech = exact.Echelon(track=True)
                for f in self.basis:
                    ech.add(f.vector())
                self._ech = ech
        return self._ech

    def contains(self, u: FormPoly) -> bool:
        return u.s == self.s and self._echelon().contains(u.vector())

    def coordinates(self, u: FormPoly) -> dict | None:
        """Exact coefficients of ``u`` in this basis, or None if ``u`` is not a member."""
        v, combo = self._echelon().reduce(u.vector(), {})
        if v:
            return None
        return {j: -x for j, x in combo.items()}

    def vectors(self) -> list[dict]:
        return [f.vector() for f in self.basis]


def _dedupe(forms: Sequence[FormPoly]) -> list[FormPoly]:
    keep = exact.independent_subset([f.vector() for f in forms])
    return [forms[i] for i in keep]


def _check_order(k: int):
    if not isinstance(k, int) or k < 1:
        raise InvalidOrderError(f"order k must be an integer >= 1, got {k!r}")


def _check_degree(s: int):
    if s not in (0, 1, 2, 3):
        raise ValueError(f"form degree must be 0..3, got {s!r}")


_cache: dict = {}
_cache_lock = threading.Lock()


def _cached(key, builder):
    with _cache_lock:
        hit = _cache.get(key)
    if hit is not None:
        return hit
    value = builder()
    with _cache_lock:
        return _cache.setdefault(key, value)


# ---------------------------------------------------------------------------
# exterior derivative and pullback

def grad(p: RationalPoly) -> tuple:
    return (p.diff("x"), p.diff("y"), p.diff("z"))


def curl(u: Sequence[RationalPoly]) -> tuple:
    u1, u2, u3 = u
    return (u3.diff("y") - u2.diff("z"), u1.diff("z") - u3.diff("x"), u2.diff("x") - u1.diff("y"))


def div(u: Sequence[RationalPoly]) -> RationalPoly:
    return u[0].diff("x") + u[1].diff("y") + u[2].diff("z")


def exterior_derivative(u: FormPoly) -> FormPoly:
    if u.s == 0:
        return FormPoly(1, grad(u.components[0]))
    if u.s == 1:
        return FormPoly(2, curl(u.components))
    if u.s == 2:
        return FormPoly(3, (div(u.components),))
    raise DegreeError("the exterior derivative of a 3-form is not defined here")


def pullback_components(u: FormPoly) -> tuple:
    """Components of ``hat_u o phi = w @ tilde_u`` in reference coordinates."""
    return infinite_weight(u.s).apply(u.components)


def from_reference_components(s: int, hat: Sequence[RationalPoly]) -> FormPoly:
    """Inverse of :func:`pullback_components`."""
    return FormPoly(s, infinite_weight(s).apply(tuple(hat), inverse=True))


# ---------------------------------------------------------------------------
# underlying spaces

def _tensor(l, m, n, k) -> list[RationalPoly]:
    return SpaceSpec.tensor(l, m, n, k).spanning_set()


def _bracket(l, m, k) -> list[RationalPoly]:
    return SpaceSpec.bracket(l, m, k).spanning_set()


def _component_forms(s: int, blocks: Sequence[list[RationalPoly]]) -> list[FormPoly]:
    out = []
    for i, block in enumerate(blocks):
        for p in block:
            comps = [R(), R(), R()]
            comps[i] = p
            out.append(FormPoly(s, tuple(comps)))
    return out


def _underlying_generators(s: int, k: int) -> list[FormPoly]:
    zn = R.from_z_numerator
    if s == 0:
        gens = [FormPoly(0, (p,)) for p in _tensor(k, k, k - 1, k)]
        gens.append(FormPoly(0, (zn(0, 0, k, k),)))
        return gens
    if s == 1:
        gens = _component_forms(1, [_tensor(k - 1, k, k - 1, k + 1),
                                    _tensor(k, k - 1, k - 1, k + 1),
                                    _tensor(k, k, k - 2, k + 1)])
        # z^(k-1)/(1+z)^(k+1) * (r_x z, r_y z, -r) for r = x^a y^b
        for a in range(k + 1):
            for b in range(k + 1):
                c1 = zn(a - 1, b, k, k + 1, a) if a else R()
                c2 = zn(a, b - 1, k, k + 1, b) if b else R()
                c3 = -zn(a, b, k - 1, k + 1)
                gens.append(FormPoly(1, (c1, c2, c3)))
        return gens
    if s == 2:
        gens = _component_forms(2, [_tensor(k, k - 1, k - 2, k + 2),
                                    _tensor(k - 1, k, k - 2, k + 2),
                                    _tensor(k - 1, k - 1, k - 1, k + 2)])
        # z^(k-1)/(1+z)^(k+2) * (0, 2 s, s_y (1+z)) for s = x^a y^b in Q^{k-1,k}
        for a in range(k):
            for b in range(k + 1):
                c3 = zn(a, b - 1, k - 1, k + 1, b) if b else R()
                gens.append(FormPoly(2, (R(), zn(a, b, k - 1, k + 2, 2), c3)))
        # z^(k-1)/(1+z)^(k+2) * (2 t, 0, t_x (1+z)) for t = x^a y^b in Q^{k,k-1}
        for a in range(k + 1):
            for b in range(k):
                c3 = zn(a - 1, b, k - 1, k + 1, a) if a else R()
                gens.append(FormPoly(2, (zn(a, b, k - 1, k + 2, 2), R(), c3)))
        return gens
    return [FormPoly(3, (p,)) for p in _tensor(k - 1, k - 1, k - 1, k + 3)]


def build_underlying_basis(s: int, k: int) -> SpaceBasis:
    _check_degree(s)
    _check_order(k)
    return _cached((UNDERLYING, s, k), lambda: SpaceBasis(
        s, k, UNDERLYING, _dedupe(_underlying_generators(s, k))))


# ---------------------------------------------------------------------------
# reduced spaces

def _reduced_first_block(k: int) -> list[FormPoly]:
    """Basis of ``Q_{k+1}^{[k-1,k]} x Q_{k+1}^{[k,k-1]} x {0}``."""
    return _component_forms(1, [_bracket(k - 1, k, k + 1), _bracket(k, k - 1, k + 1), []])


def _reduced_generators(s: int, k: int) -> list[FormPoly]:
    if s == 0:
        return [FormPoly(0, (p,)) for p in _bracket(k, k, k)]
    if s == 1:
        block = _reduced_first_block(k)
        grads = [exterior_derivative(FormPoly(0, (p,))) for p in _bracket(k, k, k)]
        return block + [g for g in grads if not g.is_zero()]
    if s == 2:
        block = _component_forms(2, [[], [], _bracket(k - 1, k - 1, k + 2)])
        curls = [exterior_derivative(f) for f in _reduced_first_block(k)]
        return block + curls
    return [FormPoly(3, (p,)) for p in _bracket(k - 1, k - 1, k + 3)]


def build_reduced_basis(s: int, k: int) -> SpaceBasis:
    _check_degree(s)
    _check_order(k)
    return _cached((REDUCED, s, k), lambda: SpaceBasis(
        s, k, REDUCED, _dedupe(_reduced_generators(s, k))))


# ---------------------------------------------------------------------------
# face traces and the conforming subspace

# triangular faces: (restriction, tangential combinations, normal combination)
# in terms of reference components; each face is {(p, zeta): 0 <= p <= 1 - zeta}
_TRIANGLES = (
    ({"y": 0}, ((0, 1), ((2, 1),)), ((1, 1),)),           # eta = 0: tangents xi, zeta
    ({"x": 0}, ((1, 1), ((2, 1),)), ((0, 1),)),           # xi = 0: tangents eta, zeta
    ({"x": 1}, ((1, 1), ((2, 1), (0, -1))), ((0, 1), (2, 1))),   # xi = 1 - zeta
    ({"y": 1}, ((0, 1), ((2, 1), (1, -1))), ((1, 1), (2, 1))),   # eta = 1 - zeta
)


def _lin(hat, combo) -> RationalPoly:
    return sum((hat[i].scale(v) for i, v in combo), R())


def _face_terms(p: RationalPoly, restr: dict):
    """Yield ``(q, e, coeff)`` for ``p`` on a triangle: ``coeff * p^q (1 - zeta)^e``."""
    for (a, b, c), v in p.restrict(**restr).items():
        q = a + b
        yield q, c - q, c, v


def _poly_violations(p: RationalPoly, restr: dict, degree: int, face: int, tag: int) -> dict:
    out = {}
    for q, e, c, v in _face_terms(p, restr):
        if e < 0 or c > degree:
            out[(face, tag, q, c)] = v
    return out


def _koszul_residual(wp: RationalPoly, wz: RationalPoly, restr: dict, k: int, face: int) -> dict:
    """Coefficients of ``p*w_p + zeta*w_zeta`` restricted to the degree-k part of ``w``.

    The top-degree part of ``p^q (1-zeta)^e`` with ``q + e = k`` is
    ``(-1)^e p^q zeta^e``.
    """
    out: dict = {}
    for comp, shift in ((wp, (1, 0)), (wz, (0, 1))):
        for q, e, c, v in _face_terms(comp, restr):
            if e < 0 or c != k:
                continue
            key = (face, 9, q + shift[0], e + shift[1])
            out[key] = out.get(key, 0) + v * (-1) ** e
    return {kk: v for kk, v in out.items() if v}


def trace_constraints(u: FormPoly, k: int) -> dict:
    """Linear functionals of ``u`` that vanish iff its triangular traces are admissible.

    Admissible means: restriction in ``P_k`` for 0-forms, tangential trace in
    the first-kind Nedelec space of order k for 1-forms, and normal trace in
    ``P_{k-1}`` for 2-forms.  3-forms carry no trace.
    """
    if u.s == 3:
        return {}
    hat = pullback_components(u)
    out: dict = {}
    for f, (restr, tang, normal) in enumerate(_TRIANGLES):
        if u.s == 0:
            out.update(_poly_violations(hat[0], restr, k, f, 0))
        elif u.s == 1:
            wp = hat[tang[0][0]]
            wz = _lin(hat, tang[1])
            out.update(_poly_violations(wp, restr, k, f, 1))
            out.update(_poly_violations(wz, restr, k, f, 2))
            out.update(_koszul_residual(wp, wz, restr, k, f))
        else:
            out.update(_poly_violations(_lin(hat, normal), restr, k - 1, f, 3))
    return out


def build_conforming_basis(s: int, k: int) -> SpaceBasis:
    _check_degree(s)
    _check_order(k)

    def build():
        U = build_underlying_basis(s, k)
        rels = exact.kernel([trace_constraints(f, k) for f in U.basis])
        forms = [combine(U.basis, rel, s) for rel in rels]
        return SpaceBasis(s, k, CONFORMING, forms)

    return _cached((CONFORMING, s, k), build)


def is_conforming(u: FormPoly, k: int) -> bool:
    return not trace_constraints(u, k)


# ---------------------------------------------------------------------------
# exactly r-weighted decomposition

def decompose_exact_weight(u: FormPoly, k: int, check: bool = True) -> dict[int, FormPoly]:
    """Split ``u`` into parts whose reference components are exactly r-weighted.

    Returns a dict ``r -> part``; the parts sum to ``u``.
    """
    if check and not build_reduced_basis(u.s, k).contains(u):
        raise NotInSpaceError("form is not a member of the reduced space")
    hat = pullback_components(u)
    groups: dict[int, list[dict]] = {}
    for i, comp in enumerate(hat):
        for (a, b, c), v in comp.items():
            groups.setdefault(c, [{} for _ in hat])[i][(a, b, c)] = v
    parts = {}
    for r in sorted(groups):
        parts[r] = from_reference_components(u.s, [R(g) for g in groups[r]])
    return parts


def is_exactly_weighted(u: FormPoly, r: int) -> bool:
    spec = SpaceSpec.exact_weight(r + 1, r + 1, r)
    return all(all(spec.contains_key(key) for key in comp) for comp in pullback_components(u))


def build_exact_weight_basis(s: int, k: int, r: int) -> SpaceBasis:
    _check_degree(s)
    _check_order(k)

    def build():
        parts = []
        for f in build_reduced_basis(s, k).basis:
            part = decompose_exact_weight(f, k, check=False).get(r)
            if part is not None:
                parts.append(part)
        return SpaceBasis(s, k, EXACT_WEIGHT, _dedupe(parts), r=r)

    return _cached((EXACT_WEIGHT, s, k, r), build)


# ---------------------------------------------------------------------------
# polynomial embedding

def _poly_degree(p: Mapping) -> int:
    return max((sum(key) for key, v in p.items() if v), default=-1)


def _hat_realization(p: Mapping) -> RationalPoly:
    return compose_reference_polynomial({key: v for key, v in p.items() if v})


def _zeta_antiderivative(p: RationalPoly) -> RationalPoly:
    """``q`` with ``d q / d zeta = p`` in the reference realization."""
    out = {}
    for (a, b, c), v in p.items():
        e = c - a - b
        out[(a, b, c + 1)] = -Fraction(v) / (e + 1)
    return R(out)


def _embed_one_form(hat: Sequence[RationalPoly]) -> tuple[FormPoly, RationalPoly]:
    """Constructive split of a polynomial 1-form into block part plus a gradient.

    Returns ``(block, potential)`` with ``tilde_u = block + grad(potential)``.
    """
    q = _zeta_antiderivative(hat[2])
    v1 = hat[0] - q.hat_diff("xi")
    v2 = hat[1] - q.hat_diff("eta")
    assert (hat[2] - q.hat_diff("zeta")).is_zero()
    block = [R(), R(), R()]
    potential = q
    for (a, b, c), v in v1.items():
        m = c  # a + b + (power of 1 - zeta)
        f = Fraction(v)
        block[0] = block[0] + R.monomial(a, b, m + 1, f * (1 - Fraction(a + 1, m + 1)))
        if b:
            block[1] = block[1] + R.monomial(a + 1, b - 1, m + 1, -f * Fraction(b, m + 1))
        potential = potential + R.monomial(a + 1, b, m + 1, f / (m + 1))
    for (a, b, c), v in v2.items():
        m = c
        f = Fraction(v)
        block[1] = block[1] + R.monomial(a, b, m + 1, f * (1 - Fraction(b + 1, m + 1)))
        if a:
            block[0] = block[0] + R.monomial(a - 1, b + 1, m + 1, -f * Fraction(a, m + 1))
        potential = potential + R.monomial(a, b + 1, m + 1, f / (m + 1))
    return FormPoly(1, tuple(block)), potential


def _embed_two_form(hat: Sequence[RationalPoly]) -> tuple[FormPoly, FormPoly]:
    """Constructive split of a polynomial 2-form into ``(0, 0, g) + curl(v)``.

    Returns ``(vertical, potential)`` with ``tilde_u = vertical + curl(potential)``.
    """
    g = R()
    pot = [R(), R(), R()]
    for (a, b, c), v in hat[0].items():
        m, f = c, Fraction(v)
        p = R.monomial(a, b, m + 2, f / (m + 2))
        pot[1] = pot[1] + p
        g = g - p.diff("x")
    for (a, b, c), v in hat[1].items():
        m, f = c, Fraction(v)
        p = R.monomial(a, b, m + 2, f / (m + 2))
        pot[0] = pot[0] - p
        g = g - p.diff("y")
    for (a, b, c), v in hat[2].items():
        m, f = c, Fraction(v)
        pot[0] = pot[0] + R.monomial(a, b + 1, m + 2, -f / (m + 2))
        pot[1] = pot[1] + R.monomial(a + 1, b, m + 2, f / (m + 2))
        g = g + R.monomial(a, b, m + 2, f * (1 - Fraction(a + b + 2, m + 2)))
    return FormPoly(2, (R(), R(), g)), FormPoly(1, tuple(pot))


@dataclass(frozen=True)
class Embedding:
    """Result of embedding a polynomial form into the reduced space."""

    form: FormPoly
    direct: FormPoly
    parts: tuple  # constructive pieces, see polynomial_embed


def polynomial_embed(s: int, k: int, p: Sequence[Mapping]) -> Embedding:
    """Embed a form with polynomial reference components into the reduced space.

    ``p`` holds one dict per component mapping ``(i, j, l)`` to the coefficient
    of ``xi^i eta^j zeta^l``.  The constructive route (antiderivative plus
    gradient correction for 1-forms, curl potentials for 2-forms) is compared
    against the direct change of coordinates and checked for membership.
    """
    _check_degree(s)
    _check_order(k)
    if len(p) != comb(3, s):
        raise ValueError(f"a {s}-form has {comb(3, s)} components")
    limit = k if s == 0 else k - 1
    for comp in p:
        if _poly_degree(comp) > limit:
            raise DegreeTooHighError(f"component degree exceeds {limit}")
    hat = [_hat_realization(comp) for comp in p]
    direct = from_reference_components(s, hat)
    if s == 0:
        form, parts = FormPoly(0, (hat[0],)), ()
    elif s == 3:
        form, parts = FormPoly(3, (hat[0] * R.monomial(0, 0, 4),)), ()
    elif s == 1:
        block, potential = _embed_one_form(hat)
        form = block + FormPoly(1, grad(potential))
        parts = (block, potential)
        if not _in_first_block(block, k):
            raise NotInSpaceError("constructed block part left its space")
    else:
        vertical, potential = _embed_two_form(hat)
        form = vertical + exterior_derivative(potential)
        parts = (vertical, potential)
        spec = SpaceSpec.bracket(k - 1, k - 1, k + 2)
        if not all(spec.contains_key(key) for key in vertical.components[2]):
            raise NotInSpaceError("constructed vertical part left its space")
        if not _in_first_block(potential, k):
            raise NotInSpaceError("constructed curl potential left its space")
    if form != direct:
        raise NotInSpaceError("constructive embedding disagrees with the change of coordinates")
    if not build_reduced_basis(s, k).contains(form):
        raise NotInSpaceError("embedded polynomial is not in the reduced space")
    return Embedding(form, direct, parts)


def _in_first_block(u: FormPoly, k: int) -> bool:
    s1 = SpaceSpec.bracket(k - 1, k, k + 1)
    s2 = SpaceSpec.bracket(k, k - 1, k + 1)
    return (all(s1.contains_key(key) for key in u.components[0])
            and all(s2.contains_key(key) for key in u.components[1])
            and u.components[2].is_zero())


def reference_monomials(degree: int) -> list[tuple[int, int, int]]:
    return [(i, j, l) for i in range(degree + 1) for j in range(degree + 1 - i)
            for l in range(degree + 1 - i - j)]


# ---------------------------------------------------------------------------
# exact sequence

@dataclass(frozen=True)
class SequenceReport:
    k: int
    dims: tuple           # dim R^0 .. R^3
    ranks: tuple          # rank of grad, curl, div on the reduced spaces
    kernels: tuple        # kernel dimensions of grad, curl, div
    grad_kernel_constant: bool
    d_maps_into: tuple    # d(R^s) subset of R^(s+1), s = 0, 1, 2
    dd_zero: bool

    @property
    def euler(self) -> int:
        return self.dims[0] - self.dims[1] + self.dims[2] - self.dims[3]

    @property
    def exact(self) -> bool:
        d0, d1, d2, d3 = self.dims
        rg, rc, rd = self.ranks
        return (self.grad_kernel_constant and rg == d0 - 1
                and self.kernels[1] == rg and self.kernels[2] == rc
                and rd == d3 and all(self.d_maps_into) and self.dd_zero)

    def as_dict(self) -> dict:
        return {"k": self.k, "dims": list(self.dims), "ranks": list(self.ranks),
                "kernels": list(self.kernels), "euler": self.euler,
                "grad_kernel_constant": self.grad_kernel_constant,
                "d_maps_into": list(self.d_maps_into), "dd_zero": self.dd_zero,
                "exact": self.exact}


def exact_sequence_report(k: int) -> SequenceReport:
    _check_order(k)
    spaces = [build_reduced_basis(s, k) for s in range(4)]
    ranks, kernels, into = [], [], []
    dd_zero = True
    gk_const = False
    for s in range(3):
        images = [exterior_derivative(f) for f in spaces[s].basis]
        rels = exact.kernel([im.vector() for im in images])
        ranks.append(len(images) - len(rels))
        kernels.append(len(rels))
        into.append(all(spaces[s + 1].contains(im) for im in images))
        if s == 0:
            gk_const = len(rels) == 1 and _is_constant(combine(spaces[0].basis, rels[0], 0))
        if s < 2:
            dd_zero = dd_zero and all(exterior_derivative(im).is_zero() for im in images)
    return SequenceReport(k, tuple(len(b) for b in spaces), tuple(ranks), tuple(kernels),
                          gk_const, tuple(into), dd_zero)


def _is_constant(u: FormPoly) -> bool:
    keys = set(u.components[0].terms)
    return bool(keys) and keys <= {(0, 0, 0)}
