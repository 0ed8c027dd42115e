import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from subriem.distance import (TranscriptionConfig, calibrate_gauge, cc_distance, cc_distance_oracle,
                              check_distance_conditions, distance_and_grad_arrays, distance_arrays,
                              distance_features, distance_field)
from subriem.errors import UnsupportedStructureError
from subriem.htype import (GroupPoint, HTypeStructure, dilate_arrays, euclidean, heisenberg, horizontal_gradient_arrays,
                           inverse_arrays, quaternionic, sub_laplacian_arrays)
from subriem.measures import MeasureSpec

H1 = heisenberg(1)
SQRT_4PI = 3.5449077018110320546  # mpmath, 30 digits


def test_identity_and_horizontal_points():
    assert cc_distance(GroupPoint.identity(H1)).distance == 0
    P = np.random.default_rng(0).normal(size=(50, 3))
    P[:, 2] = 0
    np.testing.assert_allclose(distance_arrays(H1, P), np.linalg.norm(P[:, :2], axis=1), rtol=1e-9)


def test_center_axis_value():
    d = cc_distance(GroupPoint.from_array(H1, [0, 0, 1])).distance
    assert abs(d - SQRT_4PI) < 1e-9
    Q = quaternionic()
    # the same closed form holds for any |z| direction on an H-type group
    z = np.array([0, 0, 0, 0, 0.3, -0.4, 0.0])
    assert distance_arrays(Q, z[None])[0] == pytest.approx(math.sqrt(4 * math.pi * 0.5), rel=1e-9)


@pytest.mark.parametrize("S", [H1, quaternionic()])
def test_homogeneity_and_symmetry(S):
    P = np.random.default_rng(1).normal(size=(100, S.dim))
    d = distance_arrays(S, P)
    np.testing.assert_allclose(distance_arrays(S, dilate_arrays(S, P, 2.5)), 2.5 * d, rtol=1e-9)
    np.testing.assert_allclose(distance_arrays(S, inverse_arrays(S, P)), d, rtol=1e-9)


@given(arrays(float, 3, elements=st.floats(-20, 20, allow_nan=False)))
@settings(max_examples=300, deadline=None)
def test_gauge_sandwich(p):
    d = distance_arrays(H1, p[None])[0]
    k, kp = calibrate_gauge(H1, np.array([p, [1.0, 0, 0]]))
    # the Kaplan gauge is comparable to d with constants that do not depend on the point
    assert 1.0 <= kp <= 1.8 and k <= 1.0 + 1e-12
    assert d >= 0 and np.isfinite(d)


def test_triangle_inequality_random():
    rng = np.random.default_rng(4)
    A, B = rng.normal(size=(2, 500, 3))
    from subriem.htype import mul_arrays
    dab = distance_arrays(H1, mul_arrays(H1, inverse_arrays(H1, A), B))
    assert np.all(dab <= distance_arrays(H1, A) + distance_arrays(H1, B) + 1e-9)


def test_oracle_straight_segment():
    g = GroupPoint.from_array(H1, [1, 0, 0])
    res = cc_distance_oracle(g, TranscriptionConfig(segments=64), full=True)
    assert abs(res.length - 1.0) < 1e-3
    assert cc_distance_oracle(GroupPoint.identity(H1)) == 0.0


def test_oracle_refinement_is_monotone():
    rng = np.random.default_rng(7)
    for p in rng.normal(size=(10, 3)):
        res = cc_distance_oracle(GroupPoint.from_array(H1, p), TranscriptionConfig(segments=64), full=True)
        assert all(a >= b - 1e-12 for a, b in zip(res.lengths, res.lengths[1:]))
        assert res.length >= cc_distance(GroupPoint.from_array(H1, p)).distance - 1e-6


def test_euclidean_calculus():
    S = euclidean(3)
    P = np.random.default_rng(2).normal(size=(40, 3))
    f = distance_field(S)
    g = horizontal_gradient_arrays(S, f, P)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-12)
    d = np.linalg.norm(P, axis=1)
    np.testing.assert_allclose(sub_laplacian_arrays(S, f, P), 2.0 / d, rtol=1e-4)


def test_exact_gradient_matches_differences():
    P = np.random.default_rng(5).normal(size=(200, 3))
    _, eg = distance_and_grad_arrays(H1, P)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (distance_arrays(H1, P + e) - distance_arrays(H1, P - e)) / (2 * h)
        np.testing.assert_allclose(eg[:, j], fd, atol=1e-5)


def test_feature_cache_returns_same_object():
    P = np.random.default_rng(6).normal(size=(10, 3))
    a = distance_features(H1, P)
    assert distance_features(H1, P.copy()) is a


def test_eikonal_and_laplacian_bound():
    rng = np.random.default_rng(8)
    grid = rng.uniform(-3, 3, size=(1000, 3))
    spec = MeasureSpec(H1)
    rep = check_distance_conditions(spec, grid)
    sig = rep.fitted_constants["sigma"].value
    assert abs(sig - 1) <= 1e-3
    assert rep.fitted_constants["eps"].value < 1
    # dilating the grid leaves sigma unchanged
    rep2 = check_distance_conditions(spec, dilate_arrays(H1, grid, 0.5))
    assert rep2.fitted_constants["sigma"].value == pytest.approx(sig, abs=1e-3)


def test_non_htype_rejected():
    J = np.array([[[0.0, -2.0], [2.0, 0.0]]])
    S = HTypeStructure(2, 1, J, strict=False)
    with pytest.raises(UnsupportedStructureError):
        distance_arrays(S, np.zeros((1, 3)))
