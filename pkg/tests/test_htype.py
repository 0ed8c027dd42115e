import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from subriem.errors import DomainError, StructureError
from subriem.htype import (GroupPoint, HTypeStructure, ScalarField, dilate, dilate_arrays, euclidean, group_inverse,
                           group_mul, heisenberg, horizontal_gradient, horizontal_gradient_arrays, inverse_arrays,
                           kaplan_norm, kaplan_norm_arrays, load_structure, mul_arrays, preset, quaternionic,
                           sub_laplacian_arrays)

H1 = heisenberg(1)
QH = quaternionic()
coord = st.floats(-50, 50, allow_nan=False)


def points(S, n, seed=0, scale=2.0):
    return np.random.default_rng(seed).normal(scale=scale, size=(n, S.dim))


@pytest.mark.parametrize("S", [H1, heisenberg(2), QH, euclidean(3)])
def test_presets_satisfy_j_property(S):
    assert S.jproperty_residual(n_trials=200) <= 1e-10
    assert S.Q == S.m + 2 * S.n


def test_preset_names():
    assert preset("euclidean(4)").m == 4
    assert load_structure("heisenberg2").m == 4
    with pytest.raises(StructureError):
        preset("nilpotent7")


def test_structure_validation():
    with pytest.raises(StructureError):
        HTypeStructure(2, 1, np.ones((1, 2, 2)))  # not skew
    with pytest.raises(StructureError):
        HTypeStructure(2, 1, np.zeros((2, 2, 2)))  # wrong shape
    # skew but not H-type: allowed only when strict is off
    J = np.array([[[0.0, -2.0], [2.0, 0.0]]])
    with pytest.raises(StructureError):
        HTypeStructure(2, 1, J)
    loose = HTypeStructure(2, 1, J, strict=False)
    assert not loose.is_htype


def test_structure_json_round_trip():
    S = HTypeStructure.from_json(QH.to_json())
    assert S == QH
    with pytest.raises(StructureError):
        HTypeStructure.from_dict({**json.loads(QH.to_json()), "extra": 1})


def test_heisenberg_product_by_hand():
    a = GroupPoint.from_array(H1, [1, 0, 0])
    b = GroupPoint.from_array(H1, [0, 1, 0])
    np.testing.assert_allclose((a @ b).as_array(), [1, 1, 0.5])
    np.testing.assert_allclose((b @ a).as_array(), [1, 1, -0.5])


@pytest.mark.parametrize("S", [H1, QH])
def test_group_axioms_random(S):
    P, R, T = (points(S, 1000, seed=k) for k in range(3))
    lhs = mul_arrays(S, mul_arrays(S, P, R), T)
    rhs = mul_arrays(S, P, mul_arrays(S, R, T))
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(lhs)))
    e = np.zeros(S.dim)
    np.testing.assert_array_equal(mul_arrays(S, e, P), P)
    assert np.max(np.abs(mul_arrays(S, P, inverse_arrays(S, P)))) < 1e-14 * max(1.0, np.max(np.abs(P)) ** 2)


def test_inverse_and_identity_points():
    g = GroupPoint.from_array(QH, np.arange(7.0))
    e = GroupPoint.identity(QH)
    assert e @ g == g
    assert group_inverse(group_inverse(g)) == g
    np.testing.assert_allclose(group_mul(g, group_inverse(g)).as_array(), 0, atol=1e-14)


def test_mixed_structures_rejected():
    with pytest.raises(StructureError):
        GroupPoint.identity(H1) @ GroupPoint.identity(QH)
    with pytest.raises(StructureError):
        GroupPoint.from_array(H1, [1, 2])


def test_dilation():
    g = GroupPoint.from_array(H1, [1, 0, 1])
    np.testing.assert_array_equal(dilate(g, 2).as_array(), [2, 0, 4])
    assert dilate(g, 1) == g
    with pytest.raises(DomainError):
        dilate(g, 0)


@given(arrays(float, 3, elements=coord), arrays(float, 3, elements=coord), st.floats(0.1, 10))
@settings(max_examples=200, deadline=None)
def test_dilation_is_automorphism(a, b, r):
    lhs = dilate_arrays(H1, mul_arrays(H1, a, b), r)
    rhs = mul_arrays(H1, dilate_arrays(H1, a, r), dilate_arrays(H1, b, r))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


@given(arrays(float, 7, elements=coord), st.floats(0.1, 10))
@settings(max_examples=200, deadline=None)
def test_gauge_homogeneous(a, r):
    n1 = kaplan_norm_arrays(QH, dilate_arrays(QH, a, r))
    assert n1 == pytest.approx(r * kaplan_norm_arrays(QH, a), rel=1e-12, abs=1e-300)


def test_gauge_values():
    assert kaplan_norm(GroupPoint.identity(H1)) == 0
    assert kaplan_norm(GroupPoint.from_array(H1, [1, 0, 0])) == 1


def test_horizontal_gradient_of_coordinates():
    P = points(H1, 50)
    x1 = ScalarField(lambda P: P[:, 0], name="x1")
    np.testing.assert_allclose(horizontal_gradient_arrays(H1, x1, P), np.tile([1.0, 0.0], (50, 1)), atol=1e-8)
    # t has horizontal gradient (-y/2, x/2) under the 1/2 convention
    t = ScalarField(lambda P: P[:, 2], lambda P: np.tile([0.0, 0.0, 1.0], (P.shape[0], 1)), name="t")
    G = horizontal_gradient_arrays(H1, t, P)
    np.testing.assert_allclose(G, np.stack([-P[:, 1] / 2, P[:, 0] / 2], axis=1), atol=1e-12)
    # the finite-difference path agrees with the hint
    np.testing.assert_allclose(horizontal_gradient_arrays(H1, t, P, use_hint=False), G, atol=1e-7)
    const = ScalarField(lambda P: np.full(P.shape[0], 3.0), name="c")
    assert horizontal_gradient(const, GroupPoint.from_array(H1, [1, 2, 3])).length == 0


def test_sub_laplacian_examples():
    P = points(H1, 40, scale=1.0)
    sq = ScalarField(lambda P: np.sum(P[:, :2] ** 2, axis=1), name="sq")
    np.testing.assert_allclose(sub_laplacian_arrays(H1, sq, P), 4.0, atol=1e-4)
    t = ScalarField(lambda P: P[:, 2], name="t")
    np.testing.assert_allclose(sub_laplacian_arrays(H1, t, P), 0.0, atol=1e-4)
    aff = ScalarField(lambda P: 2 * P[:, 0] - P[:, 1] + 0.5 * P[:, 2] + 1, name="aff")
    np.testing.assert_allclose(sub_laplacian_arrays(H1, aff, P), 0.0, atol=1e-4)
    sq4 = ScalarField(lambda P: np.sum(P[:, :4] ** 2, axis=1), name="sq4")
    np.testing.assert_allclose(sub_laplacian_arrays(QH, sq4, points(QH, 20, scale=1.0)), 8.0, atol=1e-4)
