import math

import numpy as np
import pytest

from subriem.distance import distance_field
from subriem.errors import DomainError
from subriem.functionals import bounded_corpus, profile_Uq, standard_corpus
from subriem.htype import ScalarField
from subriem.isoperimetry import (TestSet, boundary_measure, coarea_check, default_ladder, enlargement_measure,
                                  eta_constant, eta_violations, implied_iso_constant, iso_ratio, unit_ball_cloud,
                                  verify_coarea, verify_isoperimetry)
from subriem.measures import ChainConfig, sample_measure
from subriem.reports import Status

INV_SQRT_PI = 0.56418958354775628695


@pytest.fixture(scope="module")
def pt2():
    return profile_Uq(2.0)


def test_unit_cloud_lies_in_ball(h1_spec):
    S = h1_spec.structure
    c = unit_ball_cloud(S)
    d = distance_field(S).eval(c)
    assert np.all(d <= 1 + 1e-9)
    assert np.sum(np.abs(d - 1) < 1e-9) > 0.9 * len(c)


def test_huge_enlargement_covers_everything(h1_spec, h1_samples):
    A = TestSet.ball(h1_spec.structure, 0.5)
    assert enlargement_measure(A, 100.0, h1_samples).value == 1.0
    with pytest.raises(DomainError):
        enlargement_measure(A, 0.0, h1_samples)


def test_enlargement_contains_set(h1_spec, h1_samples):
    A = TestSet.ball(h1_spec.structure, 1.0)
    base = h1_samples.batcher().mean(A.contains(h1_samples.points).astype(float))
    for e in (0.01, 0.1, 0.5):
        assert enlargement_measure(A, e, h1_samples).value >= base.value


def test_ball_enlargement_identity(h1_spec, h1_samples):
    # a ball's enlargement computed by the triangle inequality vs by min over the cloud
    S = h1_spec.structure
    ball = TestSet.ball(S, 1.0)
    sub = TestSet.sublevel(S, distance_field(S), 1.0)
    s = h1_samples.thin_to(4000)
    a = enlargement_measure(ball, 0.2, s)
    b = enlargement_measure(sub, 0.2, s)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.se, b.se) + 1e-12


def test_half_space_density(euclid_spec, euclid_samples):
    A = TestSet.half_space(euclid_spec.structure, [1.0], 0.0)
    sf = boundary_measure(A, euclid_samples)
    assert sf.status == "ok"
    assert abs(sf.mu_plus.value - INV_SQRT_PI) < 3 * sf.mu_plus.se


def test_everything_has_no_boundary(euclid_spec, euclid_samples, pt2):
    A = TestSet.half_space(euclid_spec.structure, [1.0], 1e6)
    sf = boundary_measure(A, euclid_samples)
    assert sf.mu_plus.value == 0
    r, st = iso_ratio(A, euclid_samples, pt2, surface=sf)
    assert r.value == 0 and st == "ok"


def test_ball_surface_matches_radial_derivative(h1_spec, h1_samples):
    S = h1_spec.structure
    sf = boundary_measure(TestSet.ball(S, 1.0), h1_samples)
    other = sample_measure(h1_spec, ChainConfig(n_samples=200, burn_in=300, n_chains=100, seed=77))
    d = distance_field(S).eval(other.points)
    h = 0.05
    deriv = other.batcher().mean(((d > 1 - h) & (d <= 1 + h)).astype(float) / (2 * h))
    assert abs(sf.mu_plus.value - deriv.value) <= 3 * math.hypot(sf.mu_plus.se, deriv.se)


def test_complement_ratio(h1_spec, h1_samples, pt2):
    S = h1_spec.structure
    a, _ = iso_ratio(TestSet.ball(S, 1.2), h1_samples, pt2)
    b, _ = iso_ratio(TestSet.ball(S, 1.2, complement=True), h1_samples, pt2)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.se, b.se)


def test_short_ladder_rejected(h1_spec, h1_samples):
    with pytest.raises(DomainError):
        boundary_measure(TestSet.ball(h1_spec.structure, 1.0), h1_samples, ladder=[0.1, 0.05])


def test_half_space_family_seed_stable(euclid_spec, pt2):
    S = euclid_spec.structure
    sets = [TestSet.half_space(S, [1.0], o) for o in (-1.0, -0.5, 0.0, 0.5, 1.0)]
    cs = []
    for seed in (3, 4):
        s = sample_measure(euclid_spec, ChainConfig(n_samples=400, burn_in=200, n_chains=100, seed=seed))
        rep = verify_isoperimetry(sets, s, pt2)
        assert rep.status == Status.PASS
        cs.append(rep.fitted_constants["c_tilde"])
    assert abs(cs[0].value - cs[1].value) <= 3 * math.hypot(cs[0].se, cs[1].se)


@pytest.mark.parametrize("beta", [1.0, 0.5])
def test_eta_estimate_has_no_violations(beta):
    assert eta_violations(beta) == 0
    assert eta_constant(beta) > 0


def test_implied_constant():
    assert implied_iso_constant(1.0, 1.0, 2.0) == pytest.approx(2.0 / (math.log(3) / math.log(2) - 1))


def test_coarea_linear_and_constant(euclid_spec, euclid_samples):
    x = ScalarField(lambda P: P[:, 0], lambda P: np.ones_like(P), name="x")
    rep = coarea_check(x, euclid_samples)
    row = rep.per_function[0]
    assert row.lhs.value == pytest.approx(1.0)
    # levels span the sample range, which carries nearly all of the mass
    assert abs(row.rhs["sum_mu_plus"].value - 1.0) < 3 * row.rhs["sum_mu_plus"].se + 0.01
    const = ScalarField(lambda P: np.ones(len(P)), lambda P: np.zeros_like(P), name="one")
    c = coarea_check(const, euclid_samples)
    assert c.per_function[0].lhs.value == 0 and c.per_function[0].rhs["sum_mu_plus"].value == 0


def test_coarea_over_bounded_corpus(h1_spec, h1_samples):
    corpus = bounded_corpus(h1_spec).select(["sig_d", "ball_1_0.3", "gauss_d", "sig_x1"])
    rep = verify_coarea(corpus, h1_samples, max_points=2000)
    assert rep.status == Status.PASS


def test_default_ladder_scale(h1_spec):
    assert default_ladder(h1_spec) == pytest.approx([0.2, 0.1, 0.05, 0.025])
