import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vvnet.group import (IDENTITY, GroupElement, act, act_many, check_axioms, compose,
                         enumerate_stabilizer, from_params, inverse, translation)

P4 = enumerate_stabilizer("p4")
P4M = enumerate_stabilizer("p4m")


def _printed_factor(m, r):
    """The 4x4 rotation-mirror matrix as printed, for one (m, r) pair."""
    c = [1, 0, -1, 0][r]
    s = [0, 1, 0, -1][r]
    sign = (-1) ** m
    return np.array([[sign * c, -sign * s, 0, 0],
                     [s, c, 0, 0],
                     [0, 0, 1, 0],
                     [0, 0, 0, 1]])


def test_identity_parameters():
    assert from_params() == IDENTITY


@pytest.mark.parametrize("m,r", list(itertools.product((0, 1), range(4))))
def test_first_factor_is_printed_matrix(m, r):
    g = from_params((m, 0, 0), (r, 0, 0))
    np.testing.assert_array_equal(g.mat, _printed_factor(m, r))


def test_mirror_x_is_diagonal():
    g = from_params((1, 0, 0))
    np.testing.assert_array_equal(g.mat, np.diag([-1, 1, 1, 1]))


def test_other_factors_are_cyclic_relabels():
    # moving coordinates (0,1,2) -> (1,2,0) carries factor 1 onto factor 2
    perm = np.eye(4, dtype=int)[[2, 0, 1, 3]]
    for m, r in itertools.product((0, 1), range(4)):
        f1 = from_params((m, 0, 0), (r, 0, 0)).mat
        f2 = from_params((0, m, 0), (0, r, 0)).mat
        f3 = from_params((0, 0, m), (0, 0, r)).mat
        np.testing.assert_array_equal(perm @ f1 @ perm.T, f2)
        np.testing.assert_array_equal(perm @ f2 @ perm.T, f3)


def test_parameter_ranges():
    with pytest.raises(ValueError):
        from_params(r=(4, 0, 0))
    with pytest.raises(ValueError):
        from_params(m=(2, 0, 0))
    # r = 4 would coincide with r = 0
    assert _printed_factor(0, 0).tolist() == _printed_factor(0, 4 % 4).tolist()


def test_rotation_quarter_turn_maps_x_to_y():
    assert act(from_params(r=(1, 0, 0)), (1, 0, 0)) == (0, 1, 0)


def test_two_quarter_turns_make_half_turn():
    q = from_params(r=(1, 0, 0))
    assert compose(q, q) == from_params(r=(2, 0, 0))
    np.testing.assert_array_equal(q.mat @ q.mat, from_params(r=(2, 0, 0)).mat)


def test_translation_action_and_inverse():
    t = translation((1, 2, 3))
    assert act(t, (0, 0, 0)) == (1, 2, 3)
    assert inverse(t) == translation((-1, -2, -3))
    assert act(IDENTITY, (4, -5, 6)) == (4, -5, 6)


def test_mirror_is_involution():
    for m in itertools.product((0, 1), repeat=3):
        g = from_params(m)
        if g.det == -1 and np.array_equal(np.abs(g.rotation), np.eye(3)):
            assert inverse(g) == g


def test_stabilizer_sizes():
    assert P4.P == 24
    assert P4M.P == 48
    assert enumerate_stabilizer("p4m", dedupe=False).P == 512
    assert enumerate_stabilizer("p4", dedupe=False).P == 64


def test_stabilizer_brute_force_oracle():
    # independent enumeration: every signed permutation matrix of Z^3
    all_sp = set()
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.eye(4, dtype=np.int64)
            m[:3, :3] = 0
            for i, (j, s) in enumerate(zip(perm, signs)):
                m[i, j] = s
            all_sp.add(GroupElement(m))
    assert set(P4M) == all_sp
    assert set(P4) == {g for g in all_sp if round(np.linalg.det(g.rotation)) == 1}


@pytest.mark.parametrize("stab", [P4, P4M], ids=["p4", "p4m"])
def test_axioms(stab):
    assert all(check_axioms(stab).values())


def test_det_split():
    dets = [g.det for g in P4M]
    assert dets.count(1) == 24 and dets.count(-1) == 24
    for g in P4M:
        assert g.det == round(np.linalg.det(g.rotation))


def test_p4_is_proper_subgroup_of_p4m():
    assert set(P4) == {g for g in P4M if g.det == 1}


def test_every_element_is_signed_permutation():
    for g in P4M:
        r = g.rotation
        assert np.all(np.abs(r).sum(axis=0) == 1) and np.all(np.abs(r).sum(axis=1) == 1)


def test_rejects_non_group_matrices():
    with pytest.raises(ValueError):
        GroupElement(np.diag([2, 1, 1, 1]))
    bad = np.eye(4, dtype=int)
    bad[3, 0] = 1
    with pytest.raises(ValueError):
        GroupElement(bad)


def test_action_is_homomorphism():
    rng = np.random.default_rng(0)
    pts = rng.integers(-50, 50, size=(100, 3))
    for a in P4M:
        for b in P4M:
            lhs = act_many(compose(a, b), pts)
            rhs = act_many(a, act_many(b, pts))
            np.testing.assert_array_equal(lhs, rhs)


@given(st.sampled_from(P4M.elements), st.tuples(*(st.integers(-9, 9),) * 3),
       st.tuples(*(st.integers(-20, 20),) * 3))
@settings(max_examples=200)
def test_full_group_inverse_and_bijection(g, t, p):
    h = compose(translation(t), g)
    assert compose(h, inverse(h)) == IDENTITY
    assert act(inverse(h), act(h, p)) == p


def test_stabilizer_order_is_stable():
    again = enumerate_stabilizer("p4m")
    assert [g.mat.tobytes() for g in again] == [g.mat.tobytes() for g in P4M]
    assert P4M[0] == IDENTITY
