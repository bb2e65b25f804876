import math

import pytest

from haargp import sym


def test_enumeration_sizes():
    for p in (1, 2, 3, 4):
        perms = sym.all_permutations(p)
        assert len(perms) == math.factorial(p)
        assert len(set(perms)) == len(perms)


def test_identity_first():
    for p in (1, 2, 3, 4):
        assert sym.all_permutations(p)[0] == tuple(range(p))


def test_compose_inverse_roundtrip():
    for p in (2, 3, 4):
        ident = tuple(range(p))
        for s in sym.all_permutations(p):
            assert sym.compose(s, sym.inverse(s)) == ident
            assert sym.compose(sym.inverse(s), s) == ident


def test_compose_convention():
    # (s*t)(i) = s(t(i)); checked on a pair where order matters
    s = (1, 0, 2)
    t = (0, 2, 1)
    st = sym.compose(s, t)
    assert st == tuple(s[t[i]] for i in range(3))
    assert st != sym.compose(t, s)


def test_cycle_count_extremes():
    ident = (0, 1, 2, 3)
    assert sym.cycle_count(ident) == 4
    four_cycle = (1, 2, 3, 0)
    assert sym.cycle_count(four_cycle) == 1


def test_cycle_type_partitions():
    assert sym.cycle_type((0, 1, 2)) == (1, 1, 1)
    assert sym.cycle_type((1, 0, 2)) == (2, 1)
    assert sym.cycle_type((1, 2, 0)) == (3,)
    # partition is sorted descending and sums to p
    for s in sym.all_permutations(4):
        ct = sym.cycle_type(s)
        assert sum(ct) == 4
        assert tuple(sorted(ct, reverse=True)) == ct


def test_cycle_type_class_sizes():
    # S_4 conjugacy class sizes: 1, 6, 8, 3, 6
    counts = {}
    for s in sym.all_permutations(4):
        counts[sym.cycle_type(s)] = counts.get(sym.cycle_type(s), 0) + 1
    assert counts == {(1, 1, 1, 1): 1, (2, 1, 1): 6, (3, 1): 8,
                      (2, 2): 3, (4,): 6}


def test_cycle_type_invariant_under_conjugation():
    perms = sym.all_permutations(3)
    for s in perms:
        for g in perms:
            conj = sym.compose(g, sym.compose(s, sym.inverse(g)))
            assert sym.cycle_type(conj) == sym.cycle_type(s)
