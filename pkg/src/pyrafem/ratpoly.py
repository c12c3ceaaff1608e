"""Exact rational monomials on the infinite pyramid.

Every shape function component is a finite sum of terms

    coeff * x**a * y**b * (1 + z)**(-c)

with ``a, b >= 0`` and integer ``c``.  Under the projective map
``(x, y, z) -> (x/(1+z), y/(1+z), z/(1+z))`` such a term becomes
``xi**a * eta**b * (1 - zeta)**(c - a - b)`` on the reference pyramid
``{0 <= zeta <= 1, 0 <= xi, eta <= 1 - zeta}``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Iterable, Iterator, Mapping, Union

import numpy as np

from .errors import DivergentIntegralError, SingularEvaluationError

Scalar = Union[int, Fraction]
Key = tuple  # (a, b, c)


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        raise TypeError("floating coefficients are not allowed in RationalPoly")
    return Fraction(v)


class RationalPoly:
    """Immutable sparse map ``(a, b, c) -> Fraction``; zero terms are never stored."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Key, Scalar] | Iterable[tuple[Key, Scalar]] | None = None):
        out: dict[Key, Fraction] = {}
        if terms:
            items = terms.items() if isinstance(terms, Mapping) else terms
            for key, coeff in items:
                a, b, c = key
                if a < 0 or b < 0:
                    raise ValueError(f"negative power of x or y in {key}")
                key = (int(a), int(b), int(c))
                v = out.get(key, Fraction(0)) + _frac(coeff)
                if v:
                    out[key] = v
                else:
                    out.pop(key, None)
        self._terms = out
        self._hash = None

    # construction -----------------------------------------------------------
    @classmethod
    def monomial(cls, a: int, b: int, c: int, coeff: Scalar = 1) -> "RationalPoly":
        return cls({(a, b, c): coeff})

    @classmethod
    def constant(cls, value: Scalar) -> "RationalPoly":
        return cls({(0, 0, 0): value})

    @classmethod
    def zero(cls) -> "RationalPoly":
        return cls()

    @classmethod
    def from_z_numerator(cls, a: int, b: int, n: int, e: int, coeff: Scalar = 1) -> "RationalPoly":
        """``coeff * x^a y^b z^n / (1+z)^e`` expanded with ``z = (1+z) - 1``."""
        if n < 0:
            raise ValueError("power of z must be non-negative")
        terms = {}
        for j in range(n + 1):
            # z^n = sum_j C(n,j) (1+z)^j (-1)^(n-j)
            terms[(a, b, e - j)] = _frac(coeff) * comb(n, j) * (-1) ** (n - j)
        return cls(terms)

    # container protocol -------------------------------------------------------
    @property
    def terms(self) -> Mapping[Key, Fraction]:
        return self._terms

    def items(self):
        return self._terms.items()

    def __iter__(self) -> Iterator[Key]:
        return iter(self._terms)

    def __len__(self) -> int:
        return len(self._terms)

    def __bool__(self) -> bool:
        return bool(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def __eq__(self, other) -> bool:
        if isinstance(other, RationalPoly):
            return self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == RationalPoly.constant(other)
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __repr__(self) -> str:
        if not self._terms:
            return "RationalPoly(0)"
        parts = []
        for (a, b, c), v in sorted(self._terms.items()):
            f = []
            if a:
                f.append("x" if a == 1 else f"x^{a}")
            if b:
                f.append("y" if b == 1 else f"y^{b}")
            if c:
                f.append(f"(1+z)^{-c}")
            parts.append(f"{v}" + ("*" + "*".join(f) if f else ""))
        return "RationalPoly(" + " + ".join(parts) + ")"

    # arithmetic ---------------------------------------------------------------
    def __add__(self, other) -> "RationalPoly":
        if isinstance(other, (int, Fraction)):
            other = RationalPoly.constant(other)
        if not isinstance(other, RationalPoly):
            return NotImplemented
        out = dict(self._terms)
        for k, v in other._terms.items():
            out[k] = out.get(k, 0) + v
        return RationalPoly(out)

    __radd__ = __add__

    def __neg__(self) -> "RationalPoly":
        return RationalPoly({k: -v for k, v in self._terms.items()})

    def __sub__(self, other) -> "RationalPoly":
        if isinstance(other, (int, Fraction)):
            other = RationalPoly.constant(other)
        if not isinstance(other, RationalPoly):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other) -> "RationalPoly":
        return (-self) + other

    def scale(self, r: Scalar) -> "RationalPoly":
        r = _frac(r)
        if not r:
            return RationalPoly()
        return RationalPoly({k: v * r for k, v in self._terms.items()})

    def __mul__(self, other) -> "RationalPoly":
        if isinstance(other, (int, Fraction)):
            return self.scale(other)
        if not isinstance(other, RationalPoly):
            return NotImplemented
        out: dict[Key, Fraction] = {}
        for (a1, b1, c1), v1 in self._terms.items():
            for (a2, b2, c2), v2 in other._terms.items():
                k = (a1 + a2, b1 + b2, c1 + c2)
                out[k] = out.get(k, 0) + v1 * v2
        return RationalPoly(out)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "RationalPoly":
        out = RationalPoly.constant(1)
        for _ in range(n):
            out = out * self
        return out

    # calculus -----------------------------------------------------------------
    def diff(self, axis: str) -> "RationalPoly":
        """Partial derivative in infinite-pyramid coordinates ``x``, ``y`` or ``z``."""
        out = {}
        for (a, b, c), v in self._terms.items():
            if axis == "x":
                if a:
                    out[(a - 1, b, c)] = v * a
            elif axis == "y":
                if b:
                    out[(a, b - 1, c)] = v * b
            elif axis == "z":
                if c:
                    out[(a, b, c + 1)] = -c * v
            else:
                raise ValueError(f"unknown axis {axis!r}")
        return RationalPoly(out)

    def hat_diff(self, axis: str) -> "RationalPoly":
        """Partial derivative in reference coordinates ``xi``, ``eta`` or ``zeta``.

        Uses d/dxi = (1+z) d/dx, d/deta = (1+z) d/dy and
        d/dzeta = (1+z) (x d/dx + y d/dy + (1+z) d/dz).
        """
        out = {}
        for (a, b, c), v in self._terms.items():
            if axis == "xi":
                if a:
                    out[(a - 1, b, c - 1)] = v * a
            elif axis == "eta":
                if b:
                    out[(a, b - 1, c - 1)] = v * b
            elif axis == "zeta":
                if a + b - c:
                    out[(a, b, c - 1)] = v * (a + b - c)
            else:
                raise ValueError(f"unknown axis {axis!r}")
        return RationalPoly(out)

    def restrict(self, x: int | None = None, y: int | None = None, z0: bool = False) -> "RationalPoly":
        """Substitute ``x`` and/or ``y`` by 0 or 1, and optionally ``z = 0``.

        The result keeps the substituted exponents at zero, so it is again a
        canonical RationalPoly whose remaining keys identify independent
        functions on the corresponding face or edge of the pyramid.
        """
        out: dict[Key, Fraction] = {}
        for (a, b, c), v in self._terms.items():
            if x is not None:
                if x == 0 and a:
                    continue
                a = 0
            if y is not None:
                if y == 0 and b:
                    continue
                b = 0
            if z0:
                c = 0
            k = (a, b, c)
            out[k] = out.get(k, 0) + v
        return RationalPoly(out)

    # numerics -------------------------------------------------------------------
    def integrate(self) -> Fraction:
        return integrate_reference(self)

    def evaluate(self, points) -> np.ndarray | float:
        return evaluate_reference(self, points)

    def max_key(self, index: int) -> int:
        return max((k[index] for k in self._terms), default=0)

    def min_key(self, index: int) -> int:
        return min((k[index] for k in self._terms), default=0)


def poly_arith(p: RationalPoly, q: RationalPoly | Scalar, op: str) -> RationalPoly:
    """Dispatch ``add``, ``sub``, ``mul`` or ``scale`` (``q`` is then a rational)."""
    if op == "add":
        return p + q
    if op == "sub":
        return p - q
    if op == "mul":
        return p * q
    if op == "scale":
        return p.scale(q)
    raise ValueError(f"unknown operation {op!r}")


def partial_derivative(p: RationalPoly, axis: str) -> RationalPoly:
    return p.diff(axis)


# ---------------------------------------------------------------------------
# weighted tensor-product spaces

@dataclass(frozen=True)
class SpaceSpec:
    """One of the monomial spaces used to build pyramid approximation spaces.

    ``kind`` is ``"tensor"`` with ``(l, m, n, k)`` for the k-weighted tensor
    space, ``"bracket"`` with ``(l, m, k)``, or ``"exact_weight"`` with
    ``(l, m, r)`` for exactly r-weighted polynomials.
    """

    kind: str
    params: tuple

    @staticmethod
    def tensor(l: int, m: int, n: int, k: int) -> "SpaceSpec":
        return SpaceSpec("tensor", (l, m, n, k))

    @staticmethod
    def bracket(l: int, m: int, k: int) -> "SpaceSpec":
        return SpaceSpec("bracket", (l, m, k))

    @staticmethod
    def exact_weight(l: int, m: int, r: int) -> "SpaceSpec":
        return SpaceSpec("exact_weight", (l, m, r))

    def contains_key(self, key: Key) -> bool:
        a, b, c = key
        if self.kind == "tensor":
            l, m, n, k = self.params
            if l < 0 or m < 0 or n < 0:
                return False
            return a <= l and b <= m and k - n <= c <= k
        if self.kind == "bracket":
            l, m, k = self.params
            return 0 <= c <= k and a <= c + l - k and b <= c + m - k
        if self.kind == "exact_weight":
            l, m, r = self.params
            if l < 0 or m < 0:
                return False
            return c == r and a <= l and b <= m
        raise ValueError(f"unknown space kind {self.kind!r}")

    def spanning_set(self) -> list[RationalPoly]:
        """A spanning set in the form used to define the space.

        For the tensor space this is ``x^a y^b z^e / (1+z)^k``, i.e. the
        z-numerator form; the other two kinds are spanned by single monomials.
        """
        out = []
        if self.kind == "tensor":
            l, m, n, k = self.params
            if l < 0 or m < 0 or n < 0:
                return []
            for a in range(l + 1):
                for b in range(m + 1):
                    for e in range(n + 1):
                        out.append(RationalPoly.from_z_numerator(a, b, e, k))
        elif self.kind == "bracket":
            l, m, k = self.params
            for c in range(k + 1):
                for a in range(c + l - k + 1):
                    for b in range(c + m - k + 1):
                        out.append(RationalPoly.monomial(a, b, c))
        elif self.kind == "exact_weight":
            l, m, r = self.params
            if l < 0 or m < 0:
                return []
            for a in range(l + 1):
                for b in range(m + 1):
                    out.append(RationalPoly.monomial(a, b, r))
        return out

    def dimension(self) -> int:
        return len(self.spanning_set())


def membership(p: RationalPoly, spec: SpaceSpec) -> bool:
    return all(spec.contains_key(k) for k in p.terms)


# ---------------------------------------------------------------------------
# integration and evaluation of the reference-pyramid realization

def integrate_reference(p: RationalPoly) -> Fraction:
    """Exact integral over the reference pyramid of the finite realization of ``p``.

    A term ``xi^a eta^b (1-zeta)^(c-a-b)`` integrates to ``1/((a+1)(b+1)(c+3))``.
    Raises DivergentIntegralError if any term has ``c <= -3``.
    """
    total = Fraction(0)
    for (a, b, c), v in p.terms.items():
        if c <= -3:
            raise DivergentIntegralError(
                f"term x^{a} y^{b} (1+z)^{-c} is not integrable over the pyramid")
        total += v / ((a + 1) * (b + 1) * (c + 3))
    return total


def evaluate_reference(p: RationalPoly, points):
    """Evaluate the finite realization of ``p`` at reference points ``(xi, eta, zeta)``.

    ``points`` is one triple or an ``(N, 3)`` array.  Points with ``zeta = 1``
    are allowed only where every term stays bounded.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    xi, eta, zeta = pts[:, 0], pts[:, 1], pts[:, 2]
    t = 1.0 - zeta
    out = np.zeros(len(pts))
    top = t == 0.0
    if np.any(top):
        for (a, b, c), v in p.terms.items():
            e = c - a - b
            if e < 0:
                raise SingularEvaluationError(
                    f"term with (1-zeta)^{e} evaluated at zeta = 1")
            if e == 0:
                out[top] += float(v) * xi[top] ** a * eta[top] ** b
    rest = ~top
    if np.any(rest):
        tr = t[rest]
        x = xi[rest] / tr
        y = eta[rest] / tr
        acc = np.zeros(len(tr))
        for (a, b, c), v in p.terms.items():
            acc += float(v) * x ** a * y ** b * tr ** c
        out[rest] = acc
    return float(out[0]) if single else out


def exact_value(p: RationalPoly, point) -> Fraction:
    """Exact value of the finite realization at a rational point with ``zeta < 1``."""
    xi, eta, zeta = (Fraction(v) for v in point)
    t = 1 - zeta
    if t == 0:
        raise SingularEvaluationError("exact_value requires zeta < 1")
    x, y = xi / t, eta / t
    return sum((v * x ** a * y ** b * t ** c for (a, b, c), v in p.terms.items()), Fraction(0))


def apex_value(p: RationalPoly) -> Fraction:
    """Limit of ``p`` at the apex along the edge ``x = y = 0``.

    Terms with ``c > 0`` vanish there, ``c = 0`` terms survive and ``c < 0``
    terms are singular.
    """
    total = Fraction(0)
    for (a, b, c), v in p.terms.items():
        if a or b:
            continue
        if c < 0:
            raise SingularEvaluationError("apex limit of a term with (1+z)^" + str(-c))
        if c == 0:
            total += v
    return total


def compose_reference_polynomial(coeffs: Mapping[tuple[int, int, int], Scalar]) -> RationalPoly:
    """Express a polynomial in ``(xi, eta, zeta)`` in infinite-pyramid coordinates.

    ``coeffs`` maps ``(i, j, l)`` to the coefficient of ``xi^i eta^j zeta^l``.
    """
    xi = RationalPoly.monomial(1, 0, 1)
    eta = RationalPoly.monomial(0, 1, 1)
    zeta = RationalPoly.constant(1) - RationalPoly.monomial(0, 0, 1)
    out = RationalPoly()
    for (i, j, l), v in coeffs.items():
        out = out + (xi ** i) * (eta ** j) * (zeta ** l) * _frac(v)
    return out
