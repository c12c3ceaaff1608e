"""Element-level bilinear forms, their exact oracle, and projection-based interpolation.

All computations run on the reference pyramid.  For an affine element the
physical proxy of a form is ``u = w @ hat_u`` with a constant weight ``w``
(see :func:`pyrafem.geometry.affine_weight`), so a coefficient tensor is
pulled back as ``hat_A = w^T A w`` and integrals pick up ``|det J|``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, lcm
from typing import Callable, Sequence

import numpy as np

from . import spaces as sp
from .errors import DimensionMismatchError, SingularSystemError
from .geometry import (AffinePyramid, Entity, affine_weight, exact_affine_weight,
                       reference_entities)
from .quadrature import (PyramidRule, conical_rule, edge_rule, square_rule,
                         triangle_rule)
from .ratpoly import RationalPoly, apex_value

# ---------------------------------------------------------------------------
# evaluation of bases on the reference pyramid


class HatTable:
    """Reference components of a list of forms, ready for vectorized evaluation."""

    def __init__(self, forms: Sequence[sp.FormPoly], s: int):
        self.s = s
        self.n = len(forms)
        self.ncomp = comb(3, s)
        self.hat = [sp.pullback_components(f) for f in forms]
        self.tables = []
        for i in range(self.ncomp):
            keys = sorted({key for h in self.hat for key in h[i].terms})
            index = {key: j for j, key in enumerate(keys)}
            C = np.zeros((self.n, len(keys)))
            for b, h in enumerate(self.hat):
                for key, v in h[i].items():
                    C[b, index[key]] = float(v)
            self.tables.append((np.array(keys, dtype=int).reshape(-1, 3), C))

    def at_infinite(self, inf_points: np.ndarray) -> np.ndarray:
        """Values at points given as ``(x, y, t)``; shape ``(n, npts, ncomp)``."""
        x, y, t = np.asarray(inf_points, float).T
        out = np.empty((self.n, len(x), self.ncomp))
        for i, (keys, C) in enumerate(self.tables):
            if len(keys) == 0:
                out[:, :, i] = 0.0
                continue
            V = (x[None, :] ** keys[:, 0:1]) * (y[None, :] ** keys[:, 1:2]) * (t[None, :] ** keys[:, 2:3])
            out[:, :, i] = C @ V
        return out

    def at_reference(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        t = 1.0 - pts[:, 2]
        top = np.abs(t) < 1e-14
        if not np.any(top):
            return self.at_infinite(np.column_stack([pts[:, 0] / t, pts[:, 1] / t, t]))
        out = np.empty((self.n, len(pts), self.ncomp))
        out[:, top, :] = self.at_apex()[:, None, :]
        rest = ~top
        if np.any(rest):
            tr = t[rest]
            out[:, rest, :] = self.at_infinite(np.column_stack([pts[rest, 0] / tr, pts[rest, 1] / tr, tr]))
        return out

    def at_apex(self) -> np.ndarray:
        return np.array([[float(apex_value(h[i])) for i in range(self.ncomp)] for h in self.hat])


def hat_table(basis: sp.SpaceBasis, derivative: bool = False) -> HatTable:
    """Cached :class:`HatTable` for a basis or for the exterior derivatives of its members."""
    key = ("hat", derivative)
    tab = basis.memo.get(key)
    if tab is None:
        if derivative:
            tab = HatTable([sp.exterior_derivative(f) for f in basis.basis], basis.s + 1)
        else:
            tab = HatTable(basis.basis, basis.s)
        basis.memo[key] = tab
    return tab


def physical_field(form: sp.FormPoly, K: AffinePyramid) -> Callable[[np.ndarray], np.ndarray]:
    """Physical proxy of ``form`` on ``K`` as a callable on physical points."""
    tab = HatTable([form], form.s)
    W = affine_weight(K, form.s)

    def f(points):
        hat = tab.at_reference(K.inverse_map(points))[0]
        vals = hat @ W.T
        return vals[:, 0] if vals.shape[1] == 1 else vals

    return f


def hat_from_physical(values: np.ndarray, K: AffinePyramid, s: int) -> np.ndarray:
    """Reference components from physical proxy samples of an s-form."""
    vals = np.asarray(values, float)
    if vals.ndim == 1:
        vals = vals[:, None]
    W = affine_weight(K, s)
    return np.linalg.solve(W, vals.T).T


# ---------------------------------------------------------------------------
# coefficient tensors and element matrices

@dataclass(frozen=True)
class CoefficientTensor:
    """Constant or position-dependent symmetric tensor acting on s-form proxies.

    ``matrix`` is a ``C(3,s) x C(3,s)`` array for a constant tensor.  For a
    field, ``func`` maps physical points ``(N, 3)`` to ``(N, n, n)`` and
    ``smoothness`` records the declared regularity order.
    """

    s: int
    matrix: np.ndarray | None = None
    func: Callable | None = None
    smoothness: int = 0
    exact: tuple | None = None  # rational entries of a constant tensor

    @classmethod
    def constant(cls, s: int, matrix) -> "CoefficientTensor":
        n = comb(3, s)
        m = np.atleast_2d(np.array(matrix, dtype=float))
        if m.shape != (n, n):
            raise DimensionMismatchError(f"coefficient for {s}-forms must be {n}x{n}")
        # floats convert exactly, so the rational oracle sees the same tensor
        rows = np.atleast_2d(np.array(matrix, dtype=object))
        exact_rows = tuple(tuple(Fraction(v) if isinstance(v, (int, Fraction)) else Fraction(float(v)) for v in row)
                           for row in rows)
        return cls(s, m, None, 10 ** 9, exact_rows)

    @classmethod
    def identity(cls, s: int) -> "CoefficientTensor":
        n = comb(3, s)
        return cls.constant(s, [[int(i == j) for j in range(n)] for i in range(n)])

    @classmethod
    def field(cls, s: int, func: Callable, smoothness: int = 10 ** 9) -> "CoefficientTensor":
        return cls(s, None, func, smoothness)

    @property
    def is_constant(self) -> bool:
        return self.matrix is not None

    @property
    def size(self) -> int:
        return comb(3, self.s)

    def values(self, points: np.ndarray) -> np.ndarray:
        """Tensor at physical points, shape ``(N, n, n)``."""
        if self.is_constant:
            return np.broadcast_to(self.matrix, (len(points),) + self.matrix.shape)
        vals = np.asarray(self.func(points), float)
        n = self.size
        if vals.ndim == 1:
            vals = vals[:, None, None] * np.eye(n)
        return vals.reshape(len(points), n, n)

    def pulled_back(self, K: AffinePyramid, points: np.ndarray) -> np.ndarray:
        W = affine_weight(K, self.s)
        return np.einsum("ai,nab,bj->nij", W, self.values(points), W)


@dataclass
class ElementMatrix:
    """Gram matrix of a basis; ``exact`` holds rational entries when available."""

    values: np.ndarray
    basis: sp.SpaceBasis
    exact: "ExactMatrix | None" = None

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape


def _rule_for(k: int, rule: PyramidRule | int | None) -> PyramidRule:
    if rule is None:
        return conical_rule(k)
    if isinstance(rule, int):
        return conical_rule(rule)
    return rule


def local_bilinear_matrix(basis: sp.SpaceBasis, A: CoefficientTensor, K: AffinePyramid,
                          rule: PyramidRule | int | None = None, reduced: bool = False,
                          test_basis: sp.SpaceBasis | None = None) -> ElementMatrix:
    """Quadrature Gram matrix ``S(A(u_i, u_j))`` on ``K``.

    ``reduced`` selects the order k-1 rule, which suffices for 3-forms.
    """
    if A.s != basis.s or (test_basis is not None and test_basis.s != basis.s):
        raise DimensionMismatchError("basis and coefficient tensor act on different form degrees")
    order = basis.k - 1 if reduced else basis.k
    rule = _rule_for(order, rule)
    U = hat_table(basis).at_infinite(rule.inf_points)
    V = U if test_basis is None else hat_table(test_basis).at_infinite(rule.inf_points)
    Ahat = A.pulled_back(K, K.map(rule.points))
    w = rule.weights * abs(K.det)
    vals = np.einsum("q,iqa,qab,jqb->ij", w, U, Ahat, V)
    return ElementMatrix(vals, basis)


@dataclass
class ExactMatrix:
    """Rational matrix stored as integer numerators over per-entry denominators."""

    num: np.ndarray  # object array of ints
    den: np.ndarray  # object array of positive ints

    def fraction(self, i: int, j: int) -> Fraction:
        return Fraction(self.num[i, j], self.den[i, j])

    def to_float(self) -> np.ndarray:
        out = np.empty(self.num.shape)
        for idx in np.ndindex(self.num.shape):
            out[idx] = self.num[idx] / self.den[idx]  # exact int division, correctly rounded
        return out


def _moment_data(basis: sp.SpaceBasis):
    """Integer data for the exact moments ``int hat_u_ia hat_u_jb`` over the reference pyramid."""
    data = basis.memo.get("moments")
    if data is not None:
        return data
    tab = hat_table(basis)
    n, nc = tab.n, tab.ncomp
    # per basis function common denominator over all components
    d = [lcm(*[v.denominator for comp in h for v in comp.terms.values()] or [1]) for h in tab.hat]
    comps = []
    for a in range(nc):
        keys = sorted({key for h in tab.hat for key in h[a].terms})
        index = {key: j for j, key in enumerate(keys)}
        C = np.zeros((n, len(keys)), dtype=object)
        C[:] = 0
        for i, h in enumerate(tab.hat):
            for key, v in h[a].items():
                C[i, index[key]] = int(v * d[i])
        comps.append((keys, C))
    L = 1
    denoms = {}
    for a in range(nc):
        for b in range(nc):
            for k1 in comps[a][0]:
                for k2 in comps[b][0]:
                    c = k1[2] + k2[2]
                    dd = (k1[0] + k2[0] + 1) * (k1[1] + k2[1] + 1) * (c + 3)
                    if c + 3 <= 0:
                        raise SingularSystemError("basis products are not integrable")
                    denoms[(k1, k2)] = dd
    L = lcm(*denoms.values()) if denoms else 1
    N = {}
    for a in range(nc):
        for b in range(nc):
            ka, Ca = comps[a]
            kb, Cb = comps[b]
            if not ka or not kb:
                N[(a, b)] = np.zeros((n, n), dtype=object)
                N[(a, b)][:] = 0
                continue
            H = np.empty((len(ka), len(kb)), dtype=object)
            for p, k1 in enumerate(ka):
                for q, k2 in enumerate(kb):
                    H[p, q] = L // denoms[(k1, k2)]
            N[(a, b)] = Ca.dot(H).dot(Cb.T)
    dvec = np.array(d, dtype=object)
    data = (N, dvec, L)
    basis.memo["moments"] = data
    return data


def analytic_bilinear_matrix(basis: sp.SpaceBasis, A: CoefficientTensor, K: AffinePyramid) -> ElementMatrix:
    """Exact Gram matrix for a constant rational tensor on an affine pyramid with rational data."""
    if A.s != basis.s:
        raise DimensionMismatchError("basis and coefficient tensor act on different form degrees")
    if A.exact is None:
        raise ValueError("the exact oracle needs a constant tensor")
    W = exact_affine_weight(K, basis.s)
    J = K.exact_jacobian()
    det = abs(J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1])
              - J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0])
              + J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]))
    nc = len(W)
    Ahat = [[sum(W[p][a] * A.exact[p][q] * W[q][b] for p in range(nc) for q in range(nc))
             for b in range(nc)] for a in range(nc)]
    N, dvec, L = _moment_data(basis)
    Q = lcm(*[x.denominator for row in Ahat for x in row]) * det.denominator
    num = None
    for a in range(nc):
        for b in range(nc):
            coef = Ahat[a][b] * det * Q
            assert coef.denominator == 1
            c = int(coef)
            if c == 0:
                continue
            term = N[(a, b)] * c
            num = term if num is None else num + term
    n = len(basis)
    if num is None:
        num = np.zeros((n, n), dtype=object)
        num[:] = 0
    den = np.outer(dvec, dvec) * (L * Q)
    ex = ExactMatrix(num, den)
    return ElementMatrix(ex.to_float(), basis, ex)


# ---------------------------------------------------------------------------
# projection-based interpolation

def _trace(vals: np.ndarray, j: int, ent: Entity) -> np.ndarray:
    """Trace of j-form reference components on an entity, in its parameter coordinates."""
    d = ent.dim
    if d == 3:
        return vals
    if j == 0:
        return vals
    T = np.array(ent.tangents, float).reshape(d, 3).T
    if j == 1:
        return vals @ T
    if j == 2 and d == 2:
        return vals @ np.cross(T[:, 0], T[:, 1])[:, None]
    raise ValueError(f"no trace of a {j}-form on a {d}-dimensional entity")


def _metric_block(j: int, d: int, G: np.ndarray) -> np.ndarray:
    if d == 0 or j == 0:
        return np.eye(1)
    det = np.linalg.det(G)
    if j == d:
        return np.array([[1.0 / det]])
    if j == 1:
        return np.linalg.inv(G)
    return G / det  # 2-forms in three dimensions


def _npoints(k: int) -> int:
    # generous, so that data integrals of smooth fields are exact to roundoff
    return k + 7


def _entity_points(ent: Entity, n: int) -> tuple[np.ndarray, np.ndarray]:
    if ent.dim == 0:
        return np.array([ent.origin], float), np.ones(1)
    if ent.dim == 1:
        p, w = edge_rule(n)
    elif ent.kind == "quad":
        p, w = square_rule(n)
    elif ent.dim == 2:
        p, w = triangle_rule(n)
    else:
        r = conical_rule(n)
        return np.array(r.points), np.array(r.weights)
    return ent.map(p), w


def _split(M: np.ndarray, scale: float, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-inverse and nullspace basis of ``M`` with an absolute cutoff ``tol * scale``."""
    n = M.shape[1]
    if M.size == 0:
        return np.zeros((n, M.shape[0])), np.eye(n)
    u, sv, vt = np.linalg.svd(M)
    rank = int(np.sum(sv > tol * max(scale, 1e-300)))
    pinv = vt[:rank].T @ (u[:, :rank].T / sv[:rank, None])
    return pinv, vt[rank:].T


def _nullspace(M: np.ndarray, tol: float = 1e-10, scale: float | None = None) -> np.ndarray:
    if M.size == 0:
        return np.eye(M.shape[1])
    if scale is None:
        scale = np.linalg.norm(M, 2)
    return _split(M, scale, tol)[1]


@dataclass
class _DataBlock:
    entity: Entity
    j: int              # 's' samples u, 's+1' samples du
    points: np.ndarray  # reference points
    ntr: int


@dataclass
class _InterpPlan:
    """Reference-level data of the projection-based interpolant for one space."""

    basis: sp.SpaceBasis
    entities: list
    blocks: list
    offsets: list
    cache: dict = field(default_factory=dict)


def _entity_list() -> list[Entity]:
    ents = reference_entities()
    interior = Entity(3, 0, (0, 1, 2, 3, 4), (0, 0, 0), ((1, 0, 0), (0, 1, 0), (0, 0, 1)), {}, "cell")
    return ents[0] + ents[1] + ents[2] + [interior]


def _facets(ent: Entity, all_ents: list[Entity]) -> list[Entity]:
    vs = set(ent.vertices)
    return [e for e in all_ents if e.dim == ent.dim - 1 and set(e.vertices) <= vs]


def _basis_for(family: str, s: int, k: int) -> sp.SpaceBasis:
    if family == sp.REDUCED:
        return sp.build_reduced_basis(s, k)
    if family == sp.CONFORMING:
        return sp.build_conforming_basis(s, k)
    if family == sp.UNDERLYING:
        return sp.build_underlying_basis(s, k)
    raise ValueError(f"unknown family {family!r}")


def _trace_samples(basis: sp.SpaceBasis, j_is_derivative: bool, ent: Entity, pts: np.ndarray) -> np.ndarray:
    """``(nbasis, nq * ntr)`` trace samples of the basis (or of its derivatives)."""
    tab = hat_table(basis, j_is_derivative)
    j = basis.s + (1 if j_is_derivative else 0)
    if ent.dim == 0 and ent.restriction.get("apex"):
        vals = tab.at_apex()[:, None, :]
    else:
        vals = tab.at_reference(pts)
    tr = _trace(vals, j, ent)
    return tr.reshape(tab.n, -1)


def _ntrace(j: int, d: int) -> int:
    if d == 3:
        return comb(3, j)
    if j == 0:
        return 1
    if j == 1:
        return d
    return 1


def _plan(family: str, s: int, k: int) -> _InterpPlan:
    basis = _basis_for(family, s, k)
    plan = basis.memo.get("interp_plan")
    if plan is not None:
        return plan
    ents = [e for e in _entity_list() if e.dim >= s]
    blocks, offsets, off = [], [], 0
    for e in ents:
        pts, _ = _entity_points(e, _npoints(k))
        js = []
        if s == e.dim:
            js = [s]
        else:
            js = [s + 1] + ([s] if s >= 1 else [])
        for j in js:
            blk = _DataBlock(e, j, pts, _ntrace(j, e.dim))
            blocks.append(blk)
            offsets.append(off)
            off += len(pts) * blk.ntr
    plan = _InterpPlan(basis, ents, blocks, offsets)
    plan.cache["ndata"] = off
    basis.memo["interp_plan"] = plan
    return plan


def _operator(plan: _InterpPlan, G: np.ndarray, family: str) -> np.ndarray:
    """Linear map from the stacked data vector to basis coefficients."""
    basis = plan.basis
    s, k, N = basis.s, basis.k, len(basis)
    nD = plan.cache["ndata"]
    all_ents = _entity_list()
    alpha = np.zeros((N, nD))
    Z = np.eye(N)
    block_of = {(id(b.entity), b.j): (b, o) for b, o in zip(plan.blocks, plan.offsets)}
    lower = _basis_for(family, s - 1, k) if s >= 1 else None
    for e in plan.entities:
        pts, wq = _entity_points(e, _npoints(k))
        d = e.dim
        T = np.array(e.tangents, float).reshape(d, 3).T if 0 < d < 3 else np.eye(3)
        Ge = T.T @ G @ T if d > 0 else np.eye(1)
        meas = np.sqrt(np.linalg.det(Ge)) if d > 0 else 1.0
        j_obj = s if s == d else s + 1
        blk, off = block_of[(id(e), j_obj)]
        Mj = _metric_block(j_obj, d, Ge)
        Lc = np.linalg.cholesky(Mj)
        nq, ntr = len(pts), blk.ntr
        sw = np.sqrt(wq * meas)
        # objective rows: sqrt(weight) * L^T * trace
        Tb = _trace_samples(basis, j_obj != s, e, pts).reshape(N, nq, ntr)
        B = np.einsum("q,ab,iqa->qbi", sw, Lc, Tb).reshape(nq * ntr, N)
        Bu = np.zeros((nq * ntr, nD))
        sel = np.kron(np.diag(sw), Lc.T)
        Bu[:, off:off + nq * ntr] = sel
        A1 = B @ Z
        r1 = Bu - B @ alpha
        if s >= 1 and s < d:
            # orthogonality to d of the lower-degree bubbles on e
            bnd = [_trace_samples(lower, False, f, _entity_points(f, _npoints(k))[0]) for f in _facets(e, all_ents)]
            Zb = _nullspace(np.hstack(bnd).T) if bnd else np.eye(len(lower))
            Dl = _trace_samples(lower, True, e, pts)
            # orthonormal span of the bubbles' derivatives; roundoff rows are dropped
            u_, sv, _ = np.linalg.svd(Zb.T @ Dl, full_matrices=False)
            keep = sv > 1e-10 * max(np.linalg.norm(Dl, 2), 1.0)
            Db = (u_[:, keep].T @ Zb.T @ Dl).reshape(int(keep.sum()), nq, Dl.shape[1] // nq)
            Ms = _metric_block(s, d, Ge)
            wgt = wq * meas
            Tu = _trace_samples(basis, False, e, pts).reshape(N, nq, -1)
            P = np.einsum("q,bqa,ac,iqc->bi", wgt, Db, Ms, Tu)
            blk_s, off_s = block_of[(id(e), s)]
            Pu = np.zeros((Db.shape[0], nD))
            Pu[:, off_s:off_s + nq * blk_s.ntr] = np.einsum("q,bqa,ac->bqc", wgt, Db, Ms).reshape(Db.shape[0], nq * blk_s.ntr)
            A2 = P @ Z
            r2 = Pu - P @ alpha
            P2, N2 = _split(A2, np.linalg.norm(A2, 2) if A2.size else 1.0)
            beta_p = P2 @ r2
        else:
            beta_p = np.zeros((Z.shape[1], nD))
            N2 = np.eye(Z.shape[1])
        A1N = A1 @ N2
        P1, free = _split(A1N, np.linalg.norm(B, 2) if B.size else 1.0)
        gamma = P1 @ (r1 - A1 @ beta_p)
        beta = beta_p + N2 @ gamma
        # the trace on e must be fixed uniquely by the stage
        Tt = _trace_samples(basis, False, e, pts)
        Tt = Tt.reshape(N, -1).T
        if free.size and np.linalg.norm(Tt @ Z @ N2 @ free) > 1e-8 * max(1.0, np.linalg.norm(Tt)):
            raise SingularSystemError(f"interpolation stage on entity {e.kind} {e.index} is not well posed")
        alpha = alpha + Z @ beta
        Z = Z @ _nullspace(Tt @ Z, scale=max(np.linalg.norm(Tt, 2), 1.0)) if Z.shape[1] else Z
    if Z.shape[1]:
        raise SingularSystemError("interpolation did not determine every coefficient")
    return alpha


def _metric_key(G: np.ndarray) -> tuple:
    g = G / (np.trace(G) / 3.0)
    return tuple(np.round(g, 10).ravel())


def interpolation_operator(family: str, s: int, k: int, K: AffinePyramid) -> tuple[_InterpPlan, np.ndarray]:
    plan = _plan(family, s, k)
    J = K.jacobian
    G = J.T @ J
    key = _metric_key(G)
    op = plan.cache.get(key)
    if op is None:
        op = _operator(plan, G, family)
        plan.cache[key] = op
    return plan, op


def _sample_data(plan: _InterpPlan, K: AffinePyramid, u: Callable, du: Callable | None) -> np.ndarray:
    s = plan.basis.s
    D = np.zeros(plan.cache["ndata"])
    for blk, off in zip(plan.blocks, plan.offsets):
        f = u if blk.j == s else du
        if f is None:
            raise ValueError("the exterior derivative of the field is required")
        phys = f(K.map(blk.points))
        hat = hat_from_physical(phys, K, blk.j)
        tr = _trace(hat, blk.j, blk.entity)
        D[off:off + tr.size] = tr.ravel()
    return D


def interpolate(u: Callable, k: int, K: AffinePyramid, s: int = 0, du: Callable | None = None,
                family: str = sp.CONFORMING) -> np.ndarray:
    """Projection-based interpolant of a physical field, as coefficients in the chosen basis.

    Vertex values come first (0-forms), then each edge, face and the interior.
    On an entity of dimension s the trace is L2-projected; on higher entities
    ``||d(v - u)||`` is minimized with ``v - u`` orthogonal to ``d`` of the
    lower-degree bubbles, keeping all traces fixed on the entity's boundary.
    ``u`` and ``du`` map physical points ``(N, 3)`` to proxy values.
    """
    plan, op = interpolation_operator(family, s, k, K)
    return op @ _sample_data(plan, K, u, du)


def evaluate_combination(basis: sp.SpaceBasis, coeffs: np.ndarray, K: AffinePyramid,
                         points: np.ndarray, derivative: bool = False) -> np.ndarray:
    """Physical proxy values of ``sum_i coeffs_i basis_i`` (or of its derivative) at physical points."""
    tab = hat_table(basis, derivative)
    hat = np.einsum("i,iqa->qa", coeffs, tab.at_reference(K.inverse_map(points)))
    W = affine_weight(K, tab.s)
    vals = hat @ W.T
    return vals[:, 0] if vals.shape[1] == 1 else vals


def exact_coordinates(basis: sp.SpaceBasis, form: sp.FormPoly) -> np.ndarray:
    coords = basis.coordinates(form)
    if coords is None:
        raise ValueError("form is not in the span of the basis")
    out = np.zeros(len(basis))
    for j, v in coords.items():
        out[j] = float(v)
    return out


def derivative_matrix(family: str, s: int, k: int) -> np.ndarray:
    """Matrix of d from the s-space to the (s+1)-space of the same family, in their bases."""
    src = _basis_for(family, s, k)
    key = "dmatrix"
    D = src.memo.get(key)
    if D is None:
        dst = _basis_for(family, s + 1, k)
        D = np.column_stack([exact_coordinates(dst, sp.exterior_derivative(f)) for f in src.basis])
        src.memo[key] = D
    return D


# ---------------------------------------------------------------------------
# consistency error on one element

def consistency_error_element(u: Callable, A: CoefficientTensor, K: AffinePyramid, k: int,
                              du: Callable | None = None, family: str = sp.CONFORMING,
                              reference_order: int | None = None) -> float:
    """``max_w |E_{k,K}(A(Phi u, w))| / ||w||_0`` over the basis functions ``w``.

    The exact integral inside E is replaced by a conical rule of order k+4.
    """
    basis = _basis_for(family, A.s, k)
    coeffs = interpolate(u, k, K, s=A.s, du=du, family=family)
    ref = reference_order if reference_order is not None else k + 4
    Mk = local_bilinear_matrix(basis, A, K, rule=k).values
    Mr = local_bilinear_matrix(basis, A, K, rule=ref).values
    err = (Mk - Mr) @ coeffs
    mass = local_bilinear_matrix(basis, CoefficientTensor.identity(A.s), K, rule=ref).values
    return float(np.max(np.abs(err) / np.sqrt(np.diag(mass))))


# ---------------------------------------------------------------------------
# the divergent integral behind the counterexample

def counterexample_integrand() -> RationalPoly:
    """``(d^3/dzeta^3 (xi eta / (1 - zeta)))^2`` as a rational monomial."""
    v = RationalPoly.monomial(1, 1, 1)
    d3 = v.hat_diff("zeta").hat_diff("zeta").hat_diff("zeta")
    return d3 * d3


def counterexample_sums(orders: Sequence[int]) -> list[float]:
    from .quadrature import integrate_on_pyramid
    p = counterexample_integrand()
    return [integrate_on_pyramid(p, None, conical_rule(q)) for q in orders]
