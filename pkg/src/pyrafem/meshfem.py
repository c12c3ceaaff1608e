"""Pyramid meshes of the unit cube and a continuous (H1) finite element solver.

Every element uses the same reference shape functions.  Boundary degrees of
freedom are point values on the equispaced pyramid lattice, so a value on a
shared vertex, edge or face is identified by its physical position and needs
no orientation data.  The remaining functionals are moments against the
element's interior bubbles.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from . import spaces as sp
from .element import CoefficientTensor, hat_table, interpolate
from .errors import IndefiniteSystemError, NonconformingMeshError, SingularSystemError
from .geometry import REF_EDGES, REF_FACES, AffinePyramid, shape_params
from .quadrature import conical_rule


# ---------------------------------------------------------------------------
# meshes

@dataclass
class PyramidMesh:
    """Conforming mesh of affine pyramids.

    ``cells[e]`` lists the global vertex ids of element ``e`` in reference
    order: the base corners ``(0,0), (1,0), (1,1), (0,1)``, then the apex.
    """

    vertices: np.ndarray
    cells: np.ndarray
    elements: list
    faces: dict
    edges: dict
    h: float
    rho_max: float
    grid: int  # vertex coordinates are multiples of 1/grid

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def jacobians(self) -> np.ndarray:
        return np.array([K.jacobian for K in self.elements])

    @property
    def origins(self) -> np.ndarray:
        return np.array([np.asarray(K.v0, float) for K in self.elements])

    @property
    def dets(self) -> np.ndarray:
        return np.linalg.det(self.jacobians)

    def volume(self) -> float:
        return float(np.sum(np.abs(self.dets)) / 3.0)

    def map(self, ref_points: np.ndarray) -> np.ndarray:
        """Physical images of reference points on every element, shape ``(ne, npts, 3)``."""
        return self.origins[:, None, :] + np.einsum("eij,qj->eqi", self.jacobians, ref_points)

    def boundary_faces(self) -> list:
        return [key for key, owners in self.faces.items() if len(owners) == 1]

    def to_json(self) -> str:
        elems = [{"v0": list(map(float, K.v0)), "e1": list(map(float, K.e1)), "e2": list(map(float, K.e2)),
                  "apex": list(map(float, K.apex)), "global_vertex_ids": [int(i) for i in ids]}
                 for K, ids in zip(self.elements, self.cells)]
        return json.dumps({"vertices": self.vertices.tolist(), "elements": elems}, indent=1)


def _entity_tables(cells: np.ndarray):
    faces: dict[tuple, list] = {}
    edges: dict[tuple, list] = {}
    for e, ids in enumerate(cells):
        for f, loc in enumerate(REF_FACES):
            faces.setdefault(tuple(sorted(int(ids[i]) for i in loc)), []).append((e, f))
        for j, (a, b) in enumerate(REF_EDGES):
            edges.setdefault(tuple(sorted((int(ids[a]), int(ids[b])))), []).append((e, j))
    return faces, edges


def check_conformity(mesh: PyramidMesh) -> None:
    for key, owners in mesh.faces.items():
        if len(owners) > 2:
            raise NonconformingMeshError(f"face {key} is shared by {len(owners)} elements")
    # a triangle of one element must not be covered by part of a larger face
    for key, owners in mesh.faces.items():
        if len(owners) == 1 and not _on_cube_boundary(mesh.vertices[list(key)]):
            raise NonconformingMeshError(f"interior face {key} has a single owner")


def _on_cube_boundary(pts: np.ndarray) -> bool:
    for axis in range(3):
        for side in (0.0, 1.0):
            if np.all(np.abs(pts[:, axis] - side) < 1e-12):
                return True
    return False


def build_cube_mesh(n: int) -> PyramidMesh:
    """Split the unit cube into ``n^3`` subcubes and each subcube into 6 pyramids."""
    if n < 1:
        raise ValueError("need at least one subdivision")
    m = n + 1
    grid = np.stack(np.meshgrid(*([np.arange(m)] * 3), indexing="ij"), axis=-1).reshape(-1, 3) / n
    centers = (np.stack(np.meshgrid(*([np.arange(n)] * 3), indexing="ij"), axis=-1).reshape(-1, 3) + 0.5) / n
    vertices = np.vstack([grid, centers])

    def vid(i, j, l):
        return (i * m + j) * m + l

    cells, elements = [], []
    unit = np.eye(3, dtype=int)
    for c, (i, j, l) in enumerate(np.ndindex(n, n, n)):
        corner = np.array([i, j, l])
        apex_id = m ** 3 + c
        apex = vertices[apex_id]
        for axis in range(3):
            u, w = unit[(axis + 1) % 3], unit[(axis + 2) % 3]
            for side in (0, 1):
                b0 = corner + side * unit[axis]
                e1, e2 = u, w
                base = [b0, b0 + e1, b0 + e1 + e2, b0 + e2]
                # orientation: the base normal must point at the apex
                if np.dot(np.cross(e1, e2), apex * n - b0) < 0:
                    base = [b0, b0 + e2, b0 + e1 + e2, b0 + e1]
                ids = [vid(*p) for p in base] + [apex_id]
                K = AffinePyramid.from_vertices(vertices[ids[0]], vertices[ids[1]], vertices[ids[3]], apex)
                cells.append(ids)
                elements.append(K)
    cells = np.array(cells, dtype=np.int64)
    faces, edges = _entity_tables(cells)
    params = [shape_params(K) for K in elements]
    mesh = PyramidMesh(vertices, cells, elements, faces, edges,
                       h=max(p.h for p in params), rho_max=max(p.rho for p in params), grid=2 * n)
    check_conformity(mesh)
    return mesh


# ---------------------------------------------------------------------------
# the nodal reference element

def lattice_nodes(k: int) -> np.ndarray:
    """Points ``(i, j, l) / k`` of the reference pyramid with ``i, j <= k - l``."""
    pts = [(i, j, l) for l in range(k + 1) for j in range(k - l + 1) for i in range(k - l + 1)]
    return np.array(pts, float) / k


def _is_boundary_node(p: np.ndarray) -> np.ndarray:
    top = 1.0 - p[:, 2]
    tol = 1e-12
    return ((p[:, 2] < tol) | (p[:, 0] < tol) | (p[:, 1] < tol)
            | (np.abs(p[:, 0] - top) < tol) | (np.abs(p[:, 1] - top) < tol))


@dataclass
class NodalElement:
    """Reference shape functions dual to lattice values and interior bubble moments.

    ``coeffs[:, m]`` expresses shape function ``m`` in the underlying basis.
    """

    basis: sp.SpaceBasis
    nodes: np.ndarray          # boundary lattice nodes
    bubbles: np.ndarray        # interior bubbles as basis coefficient columns
    functionals: np.ndarray    # rows: node values, then bubble moments
    coeffs: np.ndarray
    cache: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.basis.k

    @property
    def ndof(self) -> int:
        return len(self.basis)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def values(self, rule) -> np.ndarray:
        """Shape function values at the rule nodes, ``(nq, ndof)``."""
        key = ("val", rule.order, len(rule))
        if key not in self.cache:
            tab = hat_table(self.basis).at_infinite(rule.inf_points)[:, :, 0]
            self.cache[key] = tab.T @ self.coeffs
        return self.cache[key]

    def gradients(self, rule) -> np.ndarray:
        """Reference gradients at the rule nodes, ``(nq, 3, ndof)``."""
        key = ("grad", rule.order, len(rule))
        if key not in self.cache:
            tab = hat_table(self.basis, derivative=True).at_infinite(rule.inf_points)
            self.cache[key] = np.einsum("iqa,im->qam", tab, self.coeffs)
        return self.cache[key]

    def local_dofs(self, c: np.ndarray) -> np.ndarray:
        """Degrees of freedom of a combination of the underlying basis."""
        return self.functionals @ c


_ELEMENTS: dict = {}


def nodal_element(k: int, family: str = sp.REDUCED) -> NodalElement:
    key = (k, family)
    if key in _ELEMENTS:
        return _ELEMENTS[key]
    basis = sp.build_conforming_basis(0, k) if family == sp.CONFORMING else sp.build_reduced_basis(0, k)
    tab = hat_table(basis)
    lat = lattice_nodes(k)
    nodes = lat[_is_boundary_node(lat)]
    V = tab.at_reference(nodes)[:, :, 0].T
    _, sv, vt = np.linalg.svd(V)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    if rank != len(nodes):
        raise SingularSystemError("boundary lattice values are not independent on this space")
    rule = conical_rule(k + 2)
    vals = tab.at_infinite(rule.inf_points)[:, :, 0]
    gram = np.einsum("q,iq,jq->ij", rule.weights, vals, vals)
    bubbles = vt[rank:].T
    if bubbles.shape[1]:
        # L2-orthonormal bubbles keep the moment rows on the scale of the nodal rows
        bubbles = bubbles @ np.linalg.inv(np.linalg.cholesky(bubbles.T @ gram @ bubbles)).T
    functionals = np.vstack([V, bubbles.T @ gram])
    # invert in an L2-orthonormal basis; the raw basis is badly scaled
    T = np.linalg.inv(np.linalg.cholesky(gram)).T
    try:
        coeffs = T @ np.linalg.inv(functionals @ T)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise SingularSystemError("degrees of freedom are not unisolvent") from exc
    el = NodalElement(basis, nodes, bubbles, functionals, coeffs)
    _ELEMENTS[key] = el
    return el


# ---------------------------------------------------------------------------
# global assembly

@dataclass
class GlobalSystem:
    mesh: PyramidMesh
    element: NodalElement
    dofmap: np.ndarray       # (ne, ndof) global indices
    ndof: int
    matrix: sps.csr_matrix
    load: np.ndarray
    dirichlet: np.ndarray    # boolean mask
    q: int
    solution: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.element.k

    def solve(self) -> np.ndarray:
        self.solution = solve_system(self.matrix, self.load, self.dirichlet)
        return self.solution

    def residual(self) -> float:
        """Discrete Galerkin residual on the free degrees of freedom."""
        free = ~self.dirichlet
        r = self.matrix @ self.solution - self.load
        return float(np.linalg.norm(r[free]))


def dof_map(mesh: PyramidMesh, el: NodalElement) -> tuple[np.ndarray, int, np.ndarray]:
    """Global numbering: shared lattice nodes first, then per-element interior moments."""
    n_el, nb = mesh.n_elements, el.n_nodes
    phys = mesh.map(el.nodes)
    # lattice nodes sit on the grid of spacing 1/(grid k)
    top = mesh.grid * el.k
    keys = np.rint(phys * top).astype(np.int64).reshape(-1, 3)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(n_el, nb)
    nnodes = len(uniq)
    nint = el.ndof - nb
    interior = nnodes + np.arange(n_el * nint).reshape(n_el, nint)
    dmap = np.hstack([inverse, interior])
    on_bnd = np.any((uniq == 0) | (uniq == top), axis=1)
    mask = np.zeros(nnodes + n_el * nint, bool)
    mask[:nnodes] = on_bnd
    return dmap, nnodes + n_el * nint, mask


def _scatter(dmap: np.ndarray, local: np.ndarray, ndof: int) -> sps.csr_matrix:
    ne, m = dmap.shape
    rows = np.repeat(dmap, m, axis=1).ravel()
    cols = np.tile(dmap, (1, m)).ravel()
    return sps.coo_matrix((local.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()


def element_stiffness(mesh: PyramidMesh, el: NodalElement, A: CoefficientTensor, q: int) -> np.ndarray:
    """``(ne, ndof, ndof)`` element matrices of ``int A grad u . grad v`` with the order-q rule."""
    rule = conical_rule(q)
    G = el.gradients(rule)
    W = np.linalg.inv(mesh.jacobians).transpose(0, 2, 1)  # physical gradient = W @ reference gradient
    pts = mesh.map(rule.points)
    ne, nq = pts.shape[:2]
    Avals = A.values(pts.reshape(-1, 3)).reshape(ne, nq, 3, 3)
    Ahat = np.einsum("eai,eqab,ebj->eqij", W, Avals, W, optimize=True)
    wdet = np.abs(mesh.dets)[:, None] * rule.weights[None, :]
    H = np.einsum("eq,eqij,qjn->eqin", wdet, Ahat, G, optimize=True)
    return np.einsum("qim,eqin->emn", G, H, optimize=True)


def element_mass(mesh: PyramidMesh, el: NodalElement, a: CoefficientTensor | None, q: int) -> np.ndarray:
    """``(ne, ndof, ndof)`` element matrices of ``int a u v``; ``a=None`` means 1."""
    rule = conical_rule(q)
    V = el.values(rule)
    wdet = np.abs(mesh.dets)[:, None] * rule.weights[None, :]
    if a is not None:
        pts = mesh.map(rule.points)
        ne, nq = pts.shape[:2]
        wdet = wdet * a.values(pts.reshape(-1, 3)).reshape(ne, nq)
    return np.einsum("eq,qm,qn->emn", wdet, V, V, optimize=True)


def element_load(mesh: PyramidMesh, el: NodalElement, f: Callable, q: int) -> np.ndarray:
    rule = conical_rule(q)
    V = el.values(rule)
    pts = mesh.map(rule.points)
    fv = np.asarray(f(pts.reshape(-1, 3)), float).reshape(pts.shape[:2])
    wdet = np.abs(mesh.dets)[:, None] * rule.weights[None, :]
    return np.einsum("eq,eq,qm->em", wdet, fv, V)


def assemble_poisson(mesh: PyramidMesh, k: int, A: CoefficientTensor, f: Callable | None, q: int,
                     family: str = sp.REDUCED) -> GlobalSystem:
    """Stiffness matrix of ``int A grad u . grad v`` (order-q rule) and load (order k+2)."""
    if A.s != 1:
        raise ValueError("the Poisson coefficient acts on gradients (1-forms)")
    if q < 0:
        raise ValueError("rule order must be >= 0")
    check_conformity(mesh)
    el = nodal_element(k, family)
    dmap, ndof, mask = dof_map(mesh, el)
    Kloc = element_stiffness(mesh, el, A, q)
    Kg = _scatter(dmap, Kloc, ndof)
    Kg = 0.5 * (Kg + Kg.T)
    load = np.zeros(ndof)
    if f is not None:
        np.add.at(load, dmap, element_load(mesh, el, f, k + 2))
    return GlobalSystem(mesh, el, dmap, ndof, Kg.tocsr(), load, mask, q)


def solve_system(matrix: sps.spmatrix, load: np.ndarray, dirichlet: np.ndarray) -> np.ndarray:
    """Solve with homogeneous Dirichlet values eliminated.

    A symmetric-mode LU without pivoting plays the role of a sparse Cholesky:
    its pivots are all positive exactly when the reduced matrix is definite.
    """
    free = np.flatnonzero(~dirichlet)
    u = np.zeros(len(load))
    if len(free) == 0:
        return u
    Aff = matrix[free][:, free].tocsc()
    try:
        lu = splu(Aff, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise IndefiniteSystemError(f"factorization failed: {exc}") from exc
    piv = lu.U.diagonal()
    if np.any(piv <= 0) or lu.perm_r.tolist() != lu.perm_c.tolist():
        raise IndefiniteSystemError("reduced system is not positive definite")
    u[free] = lu.solve(load[free])
    return u


# ---------------------------------------------------------------------------
# errors, interpolation and studies

def error_norms(system: GlobalSystem, u_exact: Callable, du_exact: Callable,
                coeffs: np.ndarray | None = None) -> tuple[float, float]:
    """L2 norm and H1 seminorm of ``u_h - u`` with the order k+3 rule on each element."""
    c = system.solution if coeffs is None else coeffs
    if c is None:
        raise ValueError("solve the system first")
    mesh, el = system.mesh, system.element
    rule = conical_rule(el.k + 3)
    V, G = el.values(rule), el.gradients(rule)
    loc = c[system.dofmap]
    uh = loc @ V.T
    W = np.linalg.inv(mesh.jacobians).transpose(0, 2, 1)
    guh = np.einsum("eij,qjm,em->eqi", W, G, loc)
    pts = mesh.map(rule.points)
    ne, nq = pts.shape[:2]
    flat = pts.reshape(-1, 3)
    u = np.asarray(u_exact(flat), float).reshape(ne, nq)
    gu = np.asarray(du_exact(flat), float).reshape(ne, nq, 3)
    wdet = np.abs(mesh.dets)[:, None] * rule.weights[None, :]
    l2 = float(np.sqrt(np.sum(wdet * (uh - u) ** 2)))
    h1 = float(np.sqrt(np.sum(wdet * np.sum((guh - gu) ** 2, axis=-1))))
    return l2, h1


def global_interpolant(mesh: PyramidMesh, k: int, u: Callable, du: Callable,
                       family: str = sp.REDUCED) -> tuple[np.ndarray, np.ndarray]:
    """Global coefficients of the element-wise projection-based interpolant.

    Returns ``(coefficients, mismatch)`` where ``mismatch`` is the largest
    disagreement between neighbours on a shared node (zero for a conforming
    interpolant, up to roundoff).
    """
    el = nodal_element(k, family)
    dmap, ndof, _ = dof_map(mesh, el)
    out = np.full(ndof, np.nan)
    mismatch = 0.0
    for e, K in enumerate(mesh.elements):
        c = interpolate(u, k, K, s=0, du=du, family=family)
        d = el.local_dofs(c)
        idx = dmap[e]
        seen = ~np.isnan(out[idx])
        if np.any(seen):
            mismatch = max(mismatch, float(np.max(np.abs(out[idx][seen] - d[seen]))))
        out[idx] = np.where(seen, out[idx], d)
    return out, mismatch


def fit_rate(h: Sequence[float], err: Sequence[float]) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    h, err = np.asarray(h, float), np.asarray(err, float)
    ok = err > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0])


def pair_rate(h0: float, h1: float, e0: float, e1: float) -> float:
    if e0 <= 0 or e1 <= 0:
        return float("nan")
    return math.log(e0 / e1) / math.log(h0 / h1)


COLUMNS = ("n", "h", "dofs", "l2_error", "h1_error", "consistency", "rate_l2", "rate_h1", "rate_consistency")


@dataclass
class StudyResult:
    """Rows of a refinement study with pairwise and fitted rates."""

    kind: str
    k: int
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def add(self, n: int, h: float, dofs: int, l2=float("nan"), h1=float("nan"), consistency=float("nan")):
        self.rows.append({"n": n, "h": h, "dofs": dofs, "l2_error": l2, "h1_error": h1,
                          "consistency": consistency})

    def _column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def pair_rates(self, name: str) -> list:
        hs, es = self._column("h"), self._column(name)
        return [float("nan")] + [pair_rate(hs[i - 1], hs[i], es[i - 1], es[i]) for i in range(1, len(hs))]

    def fitted(self, name: str) -> float:
        return fit_rate(self._column("h"), self._column(name))

    @property
    def rates(self) -> dict:
        return {name: self.fitted(name) for name in ("l2_error", "h1_error", "consistency")}

    def to_csv(self) -> str:
        lines = [",".join(COLUMNS)]
        pr = {name: self.pair_rates(name) for name in ("l2_error", "h1_error", "consistency")}
        for i, r in enumerate(self.rows):
            vals = [str(r["n"]), _fmt(r["h"]), str(r["dofs"]), _fmt(r["l2_error"]), _fmt(r["h1_error"]),
                    _fmt(r["consistency"]), _fmt(pr["l2_error"][i]), _fmt(pr["h1_error"][i]),
                    _fmt(pr["consistency"][i])]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        """JSON-ready summary; missing values become ``None``."""
        return _nan_to_none({"kind": self.kind, "k": self.k, "rows": self.rows,
                             "fitted_rates": self.rates, **self.extra})


def _nan_to_none(obj):
    if isinstance(obj, float):
        return None if obj != obj else obj
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


def _fmt(x: float) -> str:
    if x != x:  # nan
        return ""
    return f"{x:.12e}"


# ---------------------------------------------------------------------------
# presets

@dataclass(frozen=True)
class ScalarField:
    """A coefficient ``a(x) I`` given by its value and gradient."""

    name: str
    value: Callable
    grad: Callable
    smoothness: int

    def tensor(self, s: int) -> CoefficientTensor:
        if self.name == "identity":
            return CoefficientTensor.identity(s)
        n = math.comb(3, s)
        return CoefficientTensor.field(s, lambda p: self.value(p)[:, None, None] * np.eye(n), self.smoothness)


@dataclass(frozen=True)
class Manufactured:
    name: str
    u: Callable
    grad: Callable
    laplacian: Callable

    def source(self, a: ScalarField) -> Callable:
        """``f = -div(a grad u)``."""
        return lambda p: -a.value(p) * self.laplacian(p) - np.sum(a.grad(p) * self.grad(p), axis=1)


def _ones(p):
    return np.ones(len(p))


COEFFICIENTS = {
    "identity": ScalarField("identity", _ones, lambda p: np.zeros((len(p), 3)), 10 ** 9),
    "poly1": ScalarField("poly1", lambda p: 1.0 + p[:, 0] * p[:, 1],
                         lambda p: np.column_stack([p[:, 1], p[:, 0], np.zeros(len(p))]), 10 ** 9),
    "smooth": ScalarField("smooth", lambda p: np.exp(p[:, 0] - 0.5 * p[:, 2]),
                          lambda p: np.exp(p[:, 0] - 0.5 * p[:, 2])[:, None] * np.array([1.0, 0.0, -0.5]),
                          10 ** 9),
}


def _sin3_grad(p):
    s, c = np.sin(np.pi * p), np.cos(np.pi * p)
    return np.pi * np.column_stack([c[:, 0] * s[:, 1] * s[:, 2], s[:, 0] * c[:, 1] * s[:, 2],
                                    s[:, 0] * s[:, 1] * c[:, 2]])


def _bubble_grad(p):
    b = p * (1 - p)
    db = 1 - 2 * p
    return np.column_stack([db[:, 0] * b[:, 1] * b[:, 2], b[:, 0] * db[:, 1] * b[:, 2],
                            b[:, 0] * b[:, 1] * db[:, 2]])


def _bubble_lap(p):
    b = p * (1 - p)
    return -2 * (b[:, 1] * b[:, 2] + b[:, 0] * b[:, 2] + b[:, 0] * b[:, 1])


SOLUTIONS = {
    "sin3": Manufactured("sin3", lambda p: np.prod(np.sin(np.pi * p), axis=1), _sin3_grad,
                         lambda p: -3 * np.pi ** 2 * np.prod(np.sin(np.pi * p), axis=1)),
    "poly_bubble": Manufactured("poly_bubble", lambda p: np.prod(p * (1 - p), axis=1), _bubble_grad, _bubble_lap),
}


def _lookup(table: dict, name: str, what: str):
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown {what} {name!r}; choose from {sorted(table)}") from None


def convergence_study(k: int, q: int, ns: Sequence[int], A: str = "identity", u: str = "sin3",
                      family: str = sp.REDUCED) -> StudyResult:
    """Solve ``-div(A grad u) = f`` on refined cube meshes and record the errors."""
    a = _lookup(COEFFICIENTS, A, "coefficient")
    sol = _lookup(SOLUTIONS, u, "solution")
    res = StudyResult("convergence", k, extra={"q": q, "A": A, "u": u})
    residual = 0.0
    for n in ns:
        mesh = build_cube_mesh(n)
        system = assemble_poisson(mesh, k, a.tensor(1), sol.source(a), q, family)
        system.solve()
        residual = max(residual, system.residual())
        l2, h1 = error_norms(system, sol.u, sol.grad)
        res.add(n, mesh.h, system.ndof, l2, h1)
    res.extra["max_residual"] = residual
    return res


def consistency_study(k: int, ns: Sequence[int], A: str = "poly1", u: str = "sin3",
                      family: str = sp.REDUCED) -> StudyResult:
    """Consistency error of the order-k rule on the global interpolant ``Phi u``.

    Two quotients are recorded.  ``consistency`` is the mass form with the
    scalar coefficient, ``sup_w |(a Phi u, w) - S_k(a Phi u w)| / ||w||_0``;
    ``elliptic`` uses ``int A grad Phi u . grad w`` divided by ``||w||_1``.
    The sup runs over the whole discrete space (a dual norm), and the exact
    integrals are replaced by the order k+4 rule.
    """
    a = _lookup(COEFFICIENTS, A, "coefficient")
    sol = _lookup(SOLUTIONS, u, "solution")
    res = StudyResult("consistency", k, extra={"A": A, "u": u, "elliptic": [], "mismatch": 0.0})
    el = nodal_element(k, family)
    for n in ns:
        mesh = build_cube_mesh(n)
        dmap, ndof, _ = dof_map(mesh, el)
        phi, mismatch = global_interpolant(mesh, k, sol.u, sol.grad, family)
        res.extra["mismatch"] = max(res.extra["mismatch"], mismatch)
        ref = k + 4
        M = _scatter(dmap, element_mass(mesh, el, None, ref), ndof)
        Ma = _scatter(dmap, element_mass(mesh, el, a.tensor(0), ref) - element_mass(mesh, el, a.tensor(0), k), ndof)
        Kid = _scatter(dmap, element_stiffness(mesh, el, CoefficientTensor.identity(1), ref), ndof)
        Ka = _scatter(dmap, element_stiffness(mesh, el, a.tensor(1), ref)
                      - element_stiffness(mesh, el, a.tensor(1), k), ndof)
        res.add(n, mesh.h, ndof, consistency=_dual_norm(Ma @ phi, M))
        res.extra["elliptic"].append(_dual_norm(Ka @ phi, Kid + M))
    hs = [r["h"] for r in res.rows]
    res.extra["elliptic_rate"] = fit_rate(hs, res.extra["elliptic"])
    return res


def _dual_norm(r: np.ndarray, gram: sps.spmatrix) -> float:
    """``sup_w |r.w| / sqrt(w.G.w)`` for an SPD Gram matrix ``G``."""
    lu = splu(sps.csc_matrix(gram), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
              options={"SymmetricMode": True})
    return float(np.sqrt(max(float(r @ lu.solve(r)), 0.0)))
