"""Reference pyramid, projective map to the infinite pyramid, affine elements.

The reference pyramid is ``{0 <= zeta <= 1, 0 <= xi, eta <= 1 - zeta}`` with
base vertices (0,0,0), (1,0,0), (1,1,0), (0,1,0) and apex (0,0,1).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

import numpy as np

from .errors import DegenerateElementError
from .ratpoly import RationalPoly

R = RationalPoly

REF_VERTICES = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1))
# base edges first, then the lateral edges towards the apex
REF_EDGES = ((0, 1), (1, 2), (3, 2), (0, 3), (0, 4), (1, 4), (2, 4), (3, 4))
# base quadrilateral, then the four triangles
REF_FACES = ((0, 1, 2, 3), (0, 1, 4), (1, 2, 4), (3, 2, 4), (0, 3, 4))


@dataclass(frozen=True)
class Entity:
    """A vertex, edge or face of the reference pyramid.

    ``origin`` and the columns of ``tangents`` give the affine parametrization
    ``p -> origin + tangents @ p`` of the entity; ``restriction`` lists the
    substitution in infinite-pyramid coordinates (``x``, ``y`` in {0, 1} and
    ``z0`` for the base) that reproduces the trace of a RationalPoly.
    """

    dim: int
    index: int
    vertices: tuple
    origin: tuple
    tangents: tuple  # tuple of 3-vectors
    restriction: dict
    kind: str  # "vertex", "edge", "quad", "triangle"

    def tangent_matrix(self) -> np.ndarray:
        return np.array(self.tangents, dtype=float).T.reshape(3, self.dim)

    def map(self, params: np.ndarray) -> np.ndarray:
        params = np.atleast_2d(params)
        return np.asarray(self.origin, float) + params @ np.array(self.tangents, float).reshape(self.dim, 3)


def _edge_restriction(i: int, j: int) -> dict:
    vi, vj = REF_VERTICES[i], REF_VERTICES[j]
    if j == 4:
        return {"x": 0 if vi[0] == 0 else 1, "y": 0 if vi[1] == 0 else 1}
    # base edge: the coordinate that is constant along the edge
    if vi[0] == vj[0]:
        return {"x": vi[0], "z0": True}
    return {"y": vi[1], "z0": True}


def reference_entities() -> dict[int, list[Entity]]:
    """All entities of the reference pyramid grouped by dimension."""
    verts = []
    for i, v in enumerate(REF_VERTICES):
        if i == 4:
            restr = {"apex": True}
        else:
            restr = {"x": v[0], "y": v[1], "z0": True}
        verts.append(Entity(0, i, (i,), v, (), restr, "vertex"))
    edges = []
    for n, (i, j) in enumerate(REF_EDGES):
        vi, vj = np.array(REF_VERTICES[i]), np.array(REF_VERTICES[j])
        edges.append(Entity(1, n, (i, j), tuple(vi), (tuple(vj - vi),),
                            _edge_restriction(i, j), "edge"))
    faces = [
        Entity(2, 0, REF_FACES[0], (0, 0, 0), ((1, 0, 0), (0, 1, 0)), {"z0": True}, "quad"),
        Entity(2, 1, REF_FACES[1], (0, 0, 0), ((1, 0, 0), (0, 0, 1)), {"y": 0}, "triangle"),
        Entity(2, 2, REF_FACES[2], (1, 0, 0), ((0, 1, 0), (-1, 0, 1)), {"x": 1}, "triangle"),
        Entity(2, 3, REF_FACES[3], (0, 1, 0), ((1, 0, 0), (0, -1, 1)), {"y": 1}, "triangle"),
        Entity(2, 4, REF_FACES[4], (0, 0, 0), ((0, 1, 0), (0, 0, 1)), {"x": 0}, "triangle"),
    ]
    return {0: verts, 1: edges, 2: faces}


# ---------------------------------------------------------------------------
# pullback weights of the projective map

def _mat(rows) -> list[list[RationalPoly]]:
    return [[r if isinstance(r, RationalPoly) else R.constant(r) for r in row] for row in rows]


@dataclass(frozen=True)
class WeightMatrix:
    """Pullback weight for s-forms: ``hat_u o phi = matrix @ tilde_u``."""

    s: int
    matrix: tuple  # rows of RationalPoly
    inverse: tuple

    def apply(self, comps, inverse: bool = False) -> tuple:
        m = self.inverse if inverse else self.matrix
        return tuple(
            sum((m[i][j] * comps[j] for j in range(len(comps))), R())
            for i in range(len(m))
        )


def matmul_poly(a, b) -> list[list[RationalPoly]]:
    n, m, p = len(a), len(b), len(b[0])
    return [[sum((a[i][l] * b[l][j] for l in range(m)), R()) for j in range(p)] for i in range(n)]


def is_identity(m) -> bool:
    n = len(m)
    return all(m[i][j] == (R.constant(1) if i == j else R()) for i in range(n) for j in range(n))


def _weights():
    one = R.constant(1)
    zero = R()
    w1p = R.monomial(0, 0, -1)       # (1+z)
    w1m = R.monomial(0, 0, 1)        # (1+z)^-1
    x, y = R.monomial(1, 0, 0), R.monomial(0, 1, 0)
    opz = R.constant(1) + R.from_z_numerator(0, 0, 1, 0)  # 1 + z written canonically
    assert opz == w1p
    w = {
        0: ([[one]], [[one]]),
        1: (
            _mat([[w1p, zero, zero], [zero, w1p, zero], [x * w1p, y * w1p, R.monomial(0, 0, -2)]]),
            _mat([[w1m, zero, zero], [zero, w1m, zero],
                  [-x * R.monomial(0, 0, 2), -y * R.monomial(0, 0, 2), R.monomial(0, 0, 2)]]),
        ),
        2: (
            _mat([[R.monomial(0, 0, -3), zero, -x * R.monomial(0, 0, -2)],
                  [zero, R.monomial(0, 0, -3), -y * R.monomial(0, 0, -2)],
                  [zero, zero, R.monomial(0, 0, -2)]]),
            _mat([[R.monomial(0, 0, 3), zero, x * R.monomial(0, 0, 3)],
                  [zero, R.monomial(0, 0, 3), y * R.monomial(0, 0, 3)],
                  [zero, zero, R.monomial(0, 0, 2)]]),
        ),
        3: ([[R.monomial(0, 0, -4)]], [[R.monomial(0, 0, 4)]]),
    }
    return w


_WEIGHTS = None


def infinite_weight(s: int) -> WeightMatrix:
    """Weight ``w`` with ``hat_u o phi = w @ tilde_u`` and its exact inverse."""
    global _WEIGHTS
    if _WEIGHTS is None:
        _WEIGHTS = _weights()
    if s not in (0, 1, 2, 3):
        raise ValueError("form degree must be 0..3")
    m, inv = _WEIGHTS[s]
    return WeightMatrix(s, tuple(tuple(r) for r in m), tuple(tuple(r) for r in inv))


def projective_map_jacobian() -> list[list[RationalPoly]]:
    """Jacobian of ``phi(x, y, z) = (x, y, z)/(1+z)`` computed by differentiation."""
    comps = [R.monomial(1, 0, 1), R.monomial(0, 1, 1), R.constant(1) - R.monomial(0, 0, 1)]
    return [[c.diff(ax) for ax in "xyz"] for c in comps]


def det3_poly(m) -> RationalPoly:
    return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))


# ---------------------------------------------------------------------------
# affine pyramids

@dataclass(frozen=True)
class ShapeParams:
    h: float
    rho: float


@dataclass(frozen=True)
class AffinePyramid:
    """Parallelogram-based pyramid ``x = v0 + xi e1 + eta e2 + zeta (apex - v0)``."""

    v0: tuple
    e1: tuple
    e2: tuple
    apex: tuple

    def __post_init__(self):
        if abs(self.det) <= 1e-14 * max(1.0, np.abs(self.jacobian).max()) ** 3:
            raise DegenerateElementError("affine pyramid has zero volume")

    @classmethod
    def reference(cls) -> "AffinePyramid":
        return cls((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))

    @classmethod
    def from_vertices(cls, base0, base1, base3, apex) -> "AffinePyramid":
        b0 = np.asarray(base0)
        return cls(tuple(base0), tuple(np.asarray(base1) - b0), tuple(np.asarray(base3) - b0), tuple(apex))

    @property
    def jacobian(self) -> np.ndarray:
        return np.column_stack([np.asarray(self.e1, float), np.asarray(self.e2, float),
                                np.asarray(self.apex, float) - np.asarray(self.v0, float)])

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.jacobian))

    def exact_jacobian(self) -> list[list[Fraction]]:
        cols = [self.e1, self.e2, tuple(Fraction(a) - Fraction(b) for a, b in zip(self.apex, self.v0))]
        return [[Fraction(cols[j][i]) for j in range(3)] for i in range(3)]

    def vertices(self) -> np.ndarray:
        return self.map(np.array(REF_VERTICES, float))

    def map(self, points) -> np.ndarray:
        p = np.asarray(points, float)
        return np.asarray(self.v0, float) + p @ self.jacobian.T

    def inverse_map(self, points) -> np.ndarray:
        x = np.asarray(points, float) - np.asarray(self.v0, float)
        return np.linalg.solve(self.jacobian, x.T).T


def affine_map(K: AffinePyramid, p) -> np.ndarray:
    return K.map(p)


def jacobian(K: AffinePyramid) -> tuple[np.ndarray, float]:
    return K.jacobian, K.det


def shape_params(K: AffinePyramid) -> ShapeParams:
    sv = np.linalg.svd(K.jacobian, compute_uv=False)
    if sv[-1] <= 0:
        raise DegenerateElementError("singular Jacobian")
    h = float(sv[0])
    return ShapeParams(h=h, rho=h / float(sv[-1]))


def affine_weight(K: AffinePyramid, s: int) -> np.ndarray:
    """Constant weight ``w`` with physical proxy ``u = w @ hat_u``."""
    J = K.jacobian
    d = np.linalg.det(J)
    if s == 0:
        return np.eye(1)
    if s == 1:
        return np.linalg.inv(J).T
    if s == 2:
        return J / abs(d)
    if s == 3:
        return np.array([[1.0 / abs(d)]])
    raise ValueError("form degree must be 0..3")


def exact_affine_weight(K: AffinePyramid, s: int) -> list[list[Fraction]]:
    """Exact version of :func:`affine_weight` for rational vertex data."""
    J = K.exact_jacobian()
    d = _det3(J)
    if d == 0:
        raise DegenerateElementError("singular Jacobian")
    if s == 0:
        return [[Fraction(1)]]
    if s == 3:
        return [[1 / abs(d)]]
    if s == 2:
        return [[J[i][j] / abs(d) for j in range(3)] for i in range(3)]
    inv = _inv3(J, d)
    return [[inv[j][i] for j in range(3)] for i in range(3)]


def _det3(m):
    return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))


def _inv3(m, d):
    cof = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            rows = [r for r in range(3) if r != i]
            cols = [c for c in range(3) if c != j]
            minor = m[rows[0]][cols[0]] * m[rows[1]][cols[1]] - m[rows[0]][cols[1]] * m[rows[1]][cols[0]]
            cof[i][j] = (-1) ** (i + j) * minor
    return [[cof[j][i] / d for j in range(3)] for i in range(3)]


def binom_count(s: int) -> int:
    return comb(3, s)
