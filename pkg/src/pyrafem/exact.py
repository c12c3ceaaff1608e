"""Sparse row reduction over the rationals.

Vectors are dicts from hashable, mutually comparable keys to Fractions.  The
:class:`Echelon` accumulator keeps rows keyed by their largest key, so a new
vector is reduced by repeatedly cancelling its largest remaining pivot key.
"""
from __future__ import annotations

import heapq
from fractions import Fraction
from typing import Hashable, Iterable, Mapping, Sequence

SparseVec = dict


def _clean(v: Mapping) -> dict:
    return {k: x for k, x in v.items() if x}


class Echelon:
    """Incremental sparse echelon form with optional combination tracking.

    When ``track`` is true each stored row remembers which inserted vectors it
    is a combination of, which lets :meth:`add` return kernel relations.
    """

    def __init__(self, track: bool = False):
        self.rows: dict[Hashable, dict] = {}
        self.combos: dict[Hashable, dict] = {}
        self.track = track
        self._count = 0

    @property
    def rank(self) -> int:
        return len(self.rows)

    def reduce(self, vec: Mapping, combo: dict | None = None) -> tuple[dict, dict | None]:
        v = _clean(vec)
        heap = [_Neg(k) for k in v]
        heapq.heapify(heap)
        seen = set()
        while heap:
            key = heapq.heappop(heap).key
            if key in seen:
                continue
            seen.add(key)
            coeff = v.get(key)
            if not coeff or key not in self.rows:
                continue
            row = self.rows[key]
            for k2, x in row.items():
                nv = v.get(k2, 0) - coeff * x
                if nv:
                    if k2 not in v and k2 not in seen:
                        heapq.heappush(heap, _Neg(k2))
                    v[k2] = nv
                else:
                    v.pop(k2, None)
            if combo is not None:
                for j, x in self.combos[key].items():
                    nv = combo.get(j, 0) - coeff * x
                    if nv:
                        combo[j] = nv
                    else:
                        combo.pop(j, None)
        return v, combo

    def add(self, vec: Mapping) -> tuple[bool, dict | None]:
        """Insert ``vec``.  Returns ``(independent, relation)``.

        ``relation`` is a kernel relation over insertion indices when the vector
        was dependent and tracking is enabled.
        """
        idx = self._count
        self._count += 1
        combo = {idx: Fraction(1)} if self.track else None
        v, combo = self.reduce(vec, combo)
        if not v:
            return False, combo
        pivot = max(v)
        p = v[pivot]
        row = {k: x / p for k, x in v.items()}
        self.rows[pivot] = row
        if self.track:
            self.combos[pivot] = {j: x / p for j, x in combo.items()}
        return True, None

    def contains(self, vec: Mapping) -> bool:
        v, _ = self.reduce(vec)
        return not v


class _Neg:
    """Heap adaptor turning heapq's min-heap into a max-heap on keys."""

    __slots__ = ("key",)

    def __init__(self, key):
        self.key = key

    def __lt__(self, other):
        return other.key < self.key


def rank(vectors: Iterable[Mapping]) -> int:
    ech = Echelon()
    for v in vectors:
        ech.add(v)
    return ech.rank


def independent_subset(vectors: Sequence[Mapping]) -> list[int]:
    """Indices of a maximal independent subset, chosen first-come."""
    ech = Echelon()
    keep = []
    for i, v in enumerate(vectors):
        ok, _ = ech.add(v)
        if ok:
            keep.append(i)
    return keep


def kernel(images: Sequence[Mapping]) -> list[dict]:
    """Basis of ``{c : sum_i c_i images[i] = 0}`` as sparse dicts over indices."""
    ech = Echelon(track=True)
    out = []
    for v in images:
        ok, rel = ech.add(v)
        if not ok:
            out.append(rel)
    return out


def in_span(vec: Mapping, basis: Sequence[Mapping]) -> bool:
    ech = Echelon()
    for b in basis:
        ech.add(b)
    return ech.contains(vec)


def solve_in_span(vec: Mapping, basis: Sequence[Mapping]) -> dict | None:
    """Coefficients ``c`` with ``sum_i c_i basis[i] = vec``, or None.

    ``basis`` must be linearly independent.
    """
    ech = Echelon(track=True)
    for b in basis:
        ok, _ = ech.add(b)
        if not ok:
            raise ValueError("basis vectors are linearly dependent")
    combo: dict = {}
    v, combo = ech.reduce(vec, combo)
    if v:
        return None
    # reduce(vec) computed vec - sum combo_j * basis_j = 0 with combo negated
    return {j: -x for j, x in combo.items()}


def to_dense(vectors: Sequence[Mapping], keys: Sequence | None = None):
    """Rows of Fractions over a common sorted key list."""
    if keys is None:
        keys = sorted({k for v in vectors for k in v})
    index = {k: i for i, k in enumerate(keys)}
    rows = []
    for v in vectors:
        row = [Fraction(0)] * len(keys)
        for k, x in v.items():
            row[index[k]] = x
        rows.append(row)
    return rows, list(keys)
