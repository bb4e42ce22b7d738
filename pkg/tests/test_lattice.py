import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_gcd
from ns_steer.lattice import (LatticeSet, box_modes, canonical, canonical_box, determinant_gcd, grow_ladder,
                              hermite_normal_form, integer_span_membership, is_canonical, is_generator,
                              ladder_step, mode_frame)

E3 = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
vec = st.tuples(*[st.integers(-3, 3)] * 3)


def test_standard_basis_generates():
    assert is_generator(E3)
    assert determinant_gcd(E3) == 1


def test_doubled_axis_does_not_generate():
    K = [(2, 0, 0), (0, 1, 0), (0, 0, 1)]
    assert determinant_gcd(K) == 2
    assert not is_generator(K)
    assert not integer_span_membership(K, (1, 0, 0))
    assert integer_span_membership(K, (4, -3, 7))


def test_fewer_than_three_vectors_never_generate():
    assert determinant_gcd([(1, 0, 0), (0, 1, 0)]) == 0
    assert not is_generator([(1, 0, 0), (0, 1, 0)])


@settings(max_examples=150, deadline=None)
@given(st.lists(vec, min_size=1, max_size=6))
def test_gcd_matches_brute_force(K):
    assert determinant_gcd(K) == brute_force_gcd(LatticeSet(K).modes)


@settings(max_examples=150, deadline=None)
@given(st.lists(vec, min_size=1, max_size=5), st.data())
def test_membership_of_integer_combinations(K, data):
    K = list(LatticeSet(K))
    coeffs = data.draw(st.lists(st.integers(-4, 4), min_size=len(K), max_size=len(K)))
    target = tuple(int(x) for x in np.array(coeffs) @ np.array(K))
    assert integer_span_membership(K, target)


def test_hnf_rows_are_echelon_with_reduced_entries():
    H = hermite_normal_form([(2, 4, 4), (-6, 6, 12), (10, -4, -16)])
    pivots = [next(i for i, x in enumerate(r) if x) for r in H]
    assert pivots == sorted(pivots) and len(set(pivots)) == len(pivots)
    for r, p in zip(H, pivots):
        assert r[p] > 0
    for i, p in enumerate(pivots):
        for row in H[:i]:
            assert 0 <= row[p] < H[i][p]
    # determinant of the lattice is preserved
    assert abs(round(np.linalg.det(np.array(H, float)))) == 144


def test_canonical_representatives():
    assert is_canonical((0, 1, -1)) and not is_canonical((0, -1, 1)) and not is_canonical((0, 0, 0))
    assert canonical((-1, 2, 0)) == (1, -2, 0)
    box = canonical_box(2)
    assert len(box) == (5 ** 3 - 1) // 2
    assert all(is_canonical(m) for m in box)
    assert len(box_modes(1)) == 26


@pytest.mark.parametrize("ell", [(1, 0, 0), (1, 1, 0), (2, -1, 3), (0, 0, 5)])
def test_mode_frame_is_orthonormal_and_perpendicular(ell):
    a, b = mode_frame(ell)
    F = np.array([a, b, np.array(ell) / np.linalg.norm(ell)])
    assert np.allclose(F @ F.T, np.eye(3), atol=1e-14)
    assert np.linalg.det(F) > 0


def test_zero_mode_has_no_frame():
    with pytest.raises(ValueError):
        mode_frame((0, 0, 0))


def test_ladder_step_adds_sums_and_differences():
    K1 = ladder_step(LatticeSet(E3))
    assert (1, 1, 0) in K1 and (1, -1, 0) in K1 and (-1, 1, 0) in K1
    assert (2, 0, 0) not in K1  # parallel pairs are skipped
    assert len(grow_ladder(E3, 0)) == 3


def test_ladder_from_a_non_generator_keeps_the_parity():
    K = grow_ladder([(2, 0, 0), (0, 1, 0), (0, 0, 1)], 6, 3)
    assert all(m[0] % 2 == 0 for m in K)


def test_ladder_radius_prunes():
    K = grow_ladder(E3, 4, 1)
    assert set(K) == set(box_modes(1))


def test_negative_depth_rejected():
    with pytest.raises(ValueError):
        grow_ladder(E3, -1)


def test_json_round_trip_and_validation():
    K = LatticeSet([(0, 0, 1), (1, 0, 0), (1, 0, 0)])
    assert len(K) == 2
    assert LatticeSet.from_json(K.to_json()) == K
    with pytest.raises(ValueError, match=r"\[1\]"):
        LatticeSet.from_json([[1, 0, 0], [1, 0]])
    with pytest.raises(ValueError):
        LatticeSet.from_json({"modes": []})
    with pytest.raises(ValueError):
        LatticeSet.from_json([[1.5, 0, 0]])


def test_generator_iff_basis_vectors_reachable_small_entries():
    vals = [-1, 0, 2]
    vecs = [v for v in itertools.product(vals, repeat=3) if any(v)]
    rng = np.random.default_rng(3)
    for _ in range(200):
        K = [vecs[i] for i in rng.choice(len(vecs), size=4, replace=False)]
        assert is_generator(K) == all(integer_span_membership(K, e) for e in E3)
