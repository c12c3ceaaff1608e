"""Gauss rules on [0, 1] and Stroud's conical product rule on the pyramid.

A conical rule of order k uses k+1 Gauss-Legendre points in each base
direction and k+1 Gauss-Jacobi points for the weight ``(1 - t)^2`` along the
axis.  In infinite-pyramid coordinates its nodes are simply ``x = xi_i``,
``y = xi_j``, ``1/(1+z) = 1 - zeta_l``, which is how rational shape functions
are evaluated here.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DivergentIntegralError
from .geometry import AffinePyramid
from .ratpoly import RationalPoly, integrate_reference


@dataclass(frozen=True)
class Rule1D:
    """Nodes in (0, 1) and positive weights for a weight function on [0, 1]."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "legendre"

    def __len__(self) -> int:
        return len(self.nodes)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> Rule1D:
    """n-point Gauss-Legendre rule on [0, 1]; exact up to degree 2n - 1."""
    if n < 1:
        raise ValueError("a Gauss rule needs at least one point")
    x, w = np.polynomial.legendre.leggauss(n)
    nodes = 0.5 * (x + 1.0)
    nodes.setflags(write=False)
    weights = 0.5 * w
    weights.setflags(write=False)
    return Rule1D(nodes, weights, "legendre")


def jacobi_recurrence(n: int, alpha: float, beta: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Monic recurrence ``p_{j+1} = (t - a_j) p_j - b_j p_{j-1}`` on [0, 1].

    The polynomials are orthogonal for the weight ``(1-t)^alpha t^beta``.
    Returns ``(a_0..a_{n-1}, b_1..b_{n-1})``.
    """
    j = np.arange(n, dtype=float)
    s = 2 * j + alpha + beta
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (beta ** 2 - alpha ** 2) / (s * (s + 2))
    if alpha + beta == 0:
        a[0] = (beta - alpha) / (alpha + beta + 2)
    jj = np.arange(1, n, dtype=float)
    ss = 2 * jj + alpha + beta
    b = 4 * jj * (jj + alpha) * (jj + beta) * (jj + alpha + beta) / (ss ** 2 * (ss + 1) * (ss - 1))
    # shift from [-1, 1] to [0, 1]
    return (a + 1.0) / 2.0, b / 4.0


@lru_cache(maxsize=None)
def gauss_jacobi(n: int, alpha: int) -> Rule1D:
    """n-point Gauss rule on [0, 1] for the weight ``(1 - t)^alpha`` (Golub-Welsch)."""
    if n < 1:
        raise ValueError("a Gauss rule needs at least one point")
    a, b = jacobi_recurrence(n, float(alpha))
    T = np.diag(a) + np.diag(np.sqrt(b), 1) + np.diag(np.sqrt(b), -1)
    try:
        vals, vecs = np.linalg.eigh(T)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise ConvergenceError("tridiagonal eigenvalue solve failed") from exc
    mu0 = 1.0 / (alpha + 1)
    weights = mu0 * vecs[0, :] ** 2
    order = np.argsort(vals)
    nodes, weights = vals[order], weights[order]
    if np.any(nodes <= 0) or np.any(nodes >= 1) or np.any(weights <= 0):
        raise ConvergenceError("Gauss-Jacobi nodes left the open unit interval")
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return Rule1D(nodes, weights, f"jacobi{alpha}0")


def gauss_jacobi20(n: int) -> Rule1D:
    """n-point rule with ``sum mu_i h(t_i) = int_0^1 (1-t)^2 h(t) dt`` for deg h <= 2n-1."""
    return gauss_jacobi(n, 2)


def jacobi20_monic(n: int, t) -> np.ndarray:
    """Evaluate the monic degree-n orthogonal polynomial for ``(1-t)^2`` by recurrence."""
    t = np.asarray(t, dtype=float)
    a, b = jacobi_recurrence(max(n, 1), 2.0)
    p_prev, p = np.zeros_like(t), np.ones_like(t)
    for j in range(n):
        p_prev, p = p, (t - a[j]) * p - (b[j - 1] * p_prev if j else 0.0)
    return p


# ---------------------------------------------------------------------------
# conical product rule

@dataclass(frozen=True)
class PyramidRule:
    """Conical product rule on the reference pyramid.

    ``points`` are reference coordinates ``(xi, eta, zeta)``; ``inf_points``
    holds the same nodes as ``(x, y, t)`` with ``t = 1 - zeta = 1/(1+z)``.
    """

    order: int
    points: np.ndarray
    weights: np.ndarray
    inf_points: np.ndarray

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def conical_rule(k: int) -> PyramidRule:
    """Order-k rule with ``(k+1)^3`` points, exact on ``Q_{2k+1}^{2k+1,2k+1,2k+1}``."""
    if k < 0:
        raise ValueError("rule order must be >= 0")
    gl = gauss_legendre(k + 1)
    gj = gauss_jacobi20(k + 1)
    X, Y, Z = np.meshgrid(gl.nodes, gl.nodes, gj.nodes, indexing="ij")
    WX, WY, WZ = np.meshgrid(gl.weights, gl.weights, gj.weights, indexing="ij")
    x, y, zeta = X.ravel(), Y.ravel(), Z.ravel()
    t = 1.0 - zeta
    pts = np.column_stack([x * t, y * t, zeta])
    inf = np.column_stack([x, y, t])
    w = (WX * WY * WZ).ravel()
    for arr in (pts, inf, w):
        arr.setflags(write=False)
    return PyramidRule(k, pts, w, inf)


def evaluate_on_rule(p: RationalPoly, rule: PyramidRule) -> np.ndarray:
    """Values of the reference realization of ``p`` at the rule nodes."""
    x, y, t = rule.inf_points.T
    out = np.zeros(len(rule))
    for (a, b, c), v in p.items():
        out += float(v) * x ** a * y ** b * t ** c
    return out


def integrate_on_pyramid(f, K: AffinePyramid | None, rule: PyramidRule) -> float:
    """``S_{k,K}(f) = sum_q w_q |det J_K| f(phi_K(p_q))``.

    ``f`` is either a callable on physical points of shape ``(N, 3)`` or a
    RationalPoly read as a function on the reference pyramid.
    """
    det = 1.0 if K is None else abs(K.det)
    if isinstance(f, RationalPoly):
        vals = evaluate_on_rule(f, rule)
    else:
        pts = rule.points if K is None else K.map(rule.points)
        vals = np.asarray(f(pts), dtype=float)
    return det * _pairwise_dot(rule.weights, vals)


def quad_error(p: RationalPoly, K: AffinePyramid | None, rule: PyramidRule) -> float:
    """``E_{k,K}(p) = S_{k,K}(p) - int_K p`` for a RationalPoly read on the reference pyramid."""
    det = 1.0 if K is None else abs(K.det)
    exact = integrate_reference(p)
    return integrate_on_pyramid(p, K, rule) - det * float(exact)


def _pairwise_dot(w: np.ndarray, v: np.ndarray) -> float:
    # numpy's sum is pairwise, which keeps the result independent of thread count
    return float(np.sum(w * v))


def separable_sums(a: int, b: int, c: int, k: int) -> tuple[float, float, float]:
    """The three 1D sums whose product is the conical rule applied to ``x^a y^b (1+z)^-c``."""
    gl, gj = gauss_legendre(k + 1), gauss_jacobi20(k + 1)
    return (float(np.dot(gl.weights, gl.nodes ** a)), float(np.dot(gl.weights, gl.nodes ** b)),
            float(np.dot(gj.weights, (1.0 - gj.nodes) ** c)))


def monomial_integral(a: int, b: int, c: int) -> Fraction:
    if c <= -3:
        raise DivergentIntegralError("not integrable")
    return Fraction(1, (a + 1) * (b + 1) * (c + 3))


# ---------------------------------------------------------------------------
# rules on entities of the reference pyramid

@lru_cache(maxsize=None)
def edge_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Parameters and weights on [0, 1]."""
    gl = gauss_legendre(n)
    return gl.nodes.reshape(-1, 1), gl.weights


@lru_cache(maxsize=None)
def triangle_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed rule on ``{(p, q): 0 <= p <= 1 - q}`` with area 1/2."""
    gl, gj = gauss_legendre(n), gauss_jacobi(n, 1)
    S, Q = np.meshgrid(gl.nodes, gj.nodes, indexing="ij")
    WS, WQ = np.meshgrid(gl.weights, gj.weights, indexing="ij")
    q = Q.ravel()
    return np.column_stack([S.ravel() * (1 - q), q]), (WS * WQ).ravel()


@lru_cache(maxsize=None)
def square_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    gl = gauss_legendre(n)
    X, Y = np.meshgrid(gl.nodes, gl.nodes, indexing="ij")
    WX, WY = np.meshgrid(gl.weights, gl.weights, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), (WX * WY).ravel()
