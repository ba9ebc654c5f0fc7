import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from udlab.errors import LengthMismatch
from udlab.lz import cbar, cbar_formula_epsilon, joint_parse, v_batch, v_from_counts, v_metric

pairs = st.integers(1, 24).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 2), min_size=n, max_size=n),
                        st.lists(st.integers(0, 1), min_size=n, max_size=n)))


def test_worked_example():
    p = joint_parse([0, 1, 0, 0, 0, 1], [0, 1, 0, 1, 0, 1])
    assert p.boundaries == (0, 1, 2, 4, 6)
    assert p.c_yz == 4
    assert p.c_z == 3
    assert p.z_phrases == ((0,), (1,), (0, 1))
    assert p.c_ell == (1, 1, 2)
    assert p.last_complete
    assert v_metric(p) == 2.0


def test_single_symbol():
    p = joint_parse([1], [0])
    assert p.c_yz == 1 and p.c_ell == (1,) and v_metric(p) == 0.0


def test_incomplete_tail_is_counted():
    # phrases: [(0,0)], [(0,0),(0,0)], then a tail repeating the first
    p = joint_parse([0, 0, 0, 0], [0, 0, 0, 0])
    assert p.boundaries == (0, 1, 3, 4)
    assert not p.last_complete
    assert sum(p.c_ell) == p.c_yz == 3
    assert p.c_ell == (2, 1)


def test_length_mismatch_and_empty():
    with pytest.raises(LengthMismatch):
        joint_parse([0, 1], [0])
    with pytest.raises(LengthMismatch):
        joint_parse([], [])
    with pytest.raises(LengthMismatch):
        v_batch(np.zeros((2, 3)), np.zeros((2, 4)), 2, 2)


@settings(max_examples=300, deadline=None)
@given(pairs)
def test_parse_matches_set_oracle(yz):
    y, z = yz
    p = joint_parse(y, z)
    phrases, counts = O.lz_parse(y, z)
    assert p.c_yz == len(phrases)
    assert list(p.c_ell) == counts
    assert [e - s for s, e in p.spans()] == [len(ph) for ph in phrases]
    assert v_metric(p) == pytest.approx(O.v_value(y, z), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(pairs)
def test_parse_invariants(yz):
    y, z = yz
    p = joint_parse(y, z)
    assert sum(p.c_ell) == p.c_yz
    assert p.boundaries[0] == 0 and p.boundaries[-1] == len(y)
    complete = p.spans() if p.last_complete else p.spans()[:-1]
    seen = {tuple(zip(y[a:b], z[a:b])) for a, b in complete}
    assert len(seen) == len(complete)  # complete phrases are distinct
    assert p.c_yz <= cbar(len(y), 6)
    assert p.c_z == len(set(p.z_phrases))


@settings(max_examples=100, deadline=None)
@given(pairs)
def test_numba_v_matches_reference(yz):
    y, z = yz
    got = v_batch(np.array([y]), np.array(z), 3, 2)[0]
    assert got == pytest.approx(v_metric(joint_parse(y, z)), abs=1e-12)


def test_v_batch_shared_z_row():
    rng = np.random.default_rng(0)
    ys = rng.integers(0, 2, (50, 12))
    z = rng.integers(0, 2, 12)
    got = v_batch(ys, z, 2, 2)
    assert np.allclose(got, [O.v_value(tuple(y), tuple(z)) for y in ys])


def test_v_from_counts():
    assert v_from_counts([1, 1, 2]) == 2.0
    assert v_from_counts([4]) == 8.0
    assert v_from_counts([3, 1]) == pytest.approx(3 * math.log2(3))


@pytest.mark.parametrize("A,nmax", [(1, 6), (2, 12), (3, 7), (4, 6)])
def test_cbar_equals_exhaustive_max(A, nmax):
    for n in range(1, nmax + 1):
        assert cbar(n, A) == O.max_phrase_count(n, A), (n, A)


def test_cbar_values():
    # a, b, c, d, then a repeated 'a' tail: five phrases in six symbols
    assert cbar(6, 4) == 5
    assert cbar(1, 4) == 1
    assert cbar(3, 2) == 3  # 0, 1, then a repeat


def test_cbar_rejects_bad_args():
    with pytest.raises(ValueError):
        cbar(0, 2)


def test_cbar_epsilon_back_solves():
    for n, A in ((16, 4), (64, 4), (1000, 2)):
        eps = cbar_formula_epsilon(n, A)
        assert n * math.log(A) / ((1 - eps) * math.log(n)) == pytest.approx(cbar(n, A))
    assert math.isnan(cbar_formula_epsilon(1, 2))
