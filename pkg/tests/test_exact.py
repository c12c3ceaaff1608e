from fractions import Fraction

import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from pyrafem.exact import in_span, independent_subset, kernel, rank, solve_in_span

vectors = st.lists(
    st.dictionaries(st.integers(0, 4), st.integers(-3, 3).map(Fraction), max_size=4),
    min_size=1, max_size=6,
)


def dense(vs, n=5):
    return sympy.Matrix([[sympy.Rational(v.get(i, 0)) for i in range(n)] for v in vs])


@settings(max_examples=80, deadline=None)
@given(vectors)
def test_rank_matches_sympy(vs):
    assert rank(vs) == dense(vs).rank()


@settings(max_examples=80, deadline=None)
@given(vectors)
def test_kernel(vs):
    ker = kernel(vs)
    assert len(ker) == len(vs) - dense(vs).rank()
    for c in ker:
        total = {}
        for i, x in c.items():
            for key, v in vs[i].items():
                total[key] = total.get(key, 0) + x * v
        assert all(v == 0 for v in total.values())


@settings(max_examples=80, deadline=None)
@given(vectors)
def test_independent_subset_first_come(vs):
    keep = independent_subset(vs)
    assert len(keep) == dense(vs).rank()
    assert dense([vs[i] for i in keep]).rank() == len(keep)


def test_span_and_solve():
    basis = [{0: Fraction(1), 1: Fraction(1)}, {1: Fraction(1)}]
    target = {0: Fraction(2), 1: Fraction(5)}
    assert in_span(target, basis)
    assert solve_in_span(target, basis) == {0: 2, 1: 3}
    assert not in_span({2: Fraction(1)}, basis)
    assert solve_in_span({2: Fraction(1)}, basis) is None
