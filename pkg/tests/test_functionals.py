import math

import numpy as np
import pytest

from subriem._stats import Estimate
from subriem.errors import DomainError
from subriem.functionals import (PhiSpec, bounded_corpus, bump_corpus, check_q_equivalence, constants_corpus,
                                 critical_epsilon, dilate_corpus, entropy_phi, phi_eval, profile_Uq, profile_value,
                                 scale_corpus, standard_corpus, theta_bound, theta_constant, verify_cheeger,
                                 verify_exp_integrability, verify_ifi2, verify_l1phi_entropy, verify_lsq,
                                 verify_sobolev_baseline, verify_tight_ledoux, verify_ubound)
from subriem.functionals.corpus import FunctionCorpus
from subriem.htype import ScalarField, euclidean, heisenberg
from subriem.measures import ChainConfig, SampleSet, sample_measure
from subriem.reports import Status

INV_SQRT_PI = 0.56418958354775628695

# Gaussian e^{-x^2}/sqrt(pi): (Cheeger ratio, L1PHI ratio at beta = 1/2, LSQ ratio at q = 2)
# from mpmath quadrature at 25 digits
GAUSS_RATIOS = {
    "x1": (0.564189583548, 0.0511996246986, 0.364818577269),
    "cos_x1": (0.428728936896, 0.0100276751366, 0.452470792155),
    "inv1p_d2": (0.402628085511, 0.0254344051911, 0.34607075446),
    "gauss_d": (0.416264154311, 0.0393373171273, 0.323959216501),
    "sig_x1": (0.620146243012, 0.066648730759, 0.819593234736),
}


def _rows(rep):
    return {r.id: r for r in rep.per_function}


# -- Phi and profile ---------------------------------------------------------------

def test_phi_values():
    assert phi_eval(PhiSpec(1.0), 0.0) == 0
    assert phi_eval(PhiSpec(1.0), 1.0) == pytest.approx(math.log(2))
    with pytest.raises(DomainError):
        phi_eval(PhiSpec(0.5), -1.0)
    with pytest.raises(DomainError):
        PhiSpec(1.5)


@pytest.mark.parametrize("beta", [0.25, 0.5, 1.0])
def test_phi_convex(beta):
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0, 20, size=(2, 2000))
    ps = PhiSpec(beta)
    assert np.all(phi_eval(ps, 0.5 * (a + b)) <= 0.5 * (phi_eval(ps, a) + phi_eval(ps, b)) + 1e-12)


def test_entropy_two_point():
    S = euclidean(1)
    s = SampleSet(S, np.tile([[0.0], [1.0]], (64, 1)))
    f = ScalarField(lambda P: P[:, 0])
    ent = entropy_phi(PhiSpec(1.0), s, f)
    assert ent.value == pytest.approx(0.5 * math.log(4 / 3), abs=1e-12)
    neg = ScalarField(lambda P: -P[:, 0])
    assert entropy_phi(PhiSpec(1.0), s, neg).value == ent.value
    assert entropy_phi(PhiSpec(1.0), s, ScalarField(lambda P: np.full(len(P), 3.0))).value == 0


def test_theta_constant():
    assert theta_constant(1.0) == 1.0
    # beta < 1: finite maximum, below 1
    assert 0 < theta_constant(0.5) < 1


def test_profile_u2_at_half():
    pt = profile_Uq(2.0)
    assert pt(0.5) == pytest.approx(INV_SQRT_PI, abs=1e-6)
    assert profile_value(2.0, 0.5) == pytest.approx(INV_SQRT_PI, abs=1e-12)
    assert pt.symmetry_residual() < 1e-8
    assert pt(0.0) == 0 and pt(1.0) == 0
    assert pt(1e-12) < 1e-10


@pytest.mark.parametrize("q", [4 / 3, 2.0, 4.0])
def test_profile_equivalence_constant(q):
    a = profile_Uq(q, grid_size=256)
    b = profile_Uq(q, grid_size=512)
    assert 1 <= a.L_q < np.inf
    assert abs(a.L_q - b.L_q) / b.L_q < 0.01
    t = 1e-4
    G = b.G(t)
    assert G / b.L_q <= b(t) <= b.L_q * G


def test_profile_matches_closed_form():
    pt = profile_Uq(2.0)
    t = pt.t[(pt.t > 1e-6) & (pt.t < 1 - 1e-6)]
    np.testing.assert_allclose(pt.values[np.isin(pt.t, t)], profile_value(2.0, t), rtol=1e-9)
    assert check_q_equivalence(pt) == pt.L_q


# -- oracle checks on the 1-D Gaussian -------------------------------------------------

@pytest.fixture(scope="module")
def gauss_corpus(euclid_spec):
    return standard_corpus(euclid_spec)


@pytest.mark.parametrize("slot,verify", [
    (0, lambda s, c: verify_cheeger(s, c)),
    (1, lambda s, c: verify_l1phi_entropy(PhiSpec(0.5), s, c)),
    (2, lambda s, c: verify_lsq(PhiSpec(0.5), s, c)),
])
def test_ratios_match_quadrature(euclid_samples, gauss_corpus, slot, verify):
    rep = verify(euclid_samples, gauss_corpus)
    rows = _rows(rep)
    for fid, oracle in GAUSS_RATIOS.items():
        r = rows[fid].ratio
        assert abs(r.value - oracle[slot]) < 3 * r.se + 1e-9, (fid, r, oracle[slot])
    assert rep.status == Status.PASS
    assert "const" in rep.excluded


def test_cheeger_affine_invariance(euclid_samples, gauss_corpus):
    a = verify_cheeger(euclid_samples, gauss_corpus)
    b = verify_cheeger(euclid_samples, scale_corpus(gauss_corpus, -2.5))
    assert b.fitted_constants["c0"].value == pytest.approx(a.fitted_constants["c0"].value, rel=1e-12)


def test_entropy_lhs_non_negative(h1_samples, h1_spec):
    rep = verify_l1phi_entropy(PhiSpec(0.5), h1_samples, standard_corpus(h1_spec))
    for r in rep.per_function:
        assert r.lhs.value >= -3 * r.lhs.se
    lsq = verify_lsq(PhiSpec(0.5), h1_samples, standard_corpus(h1_spec))
    for r in lsq.per_function:
        assert r.lhs.value >= -3 * r.lhs.se


def test_lsq_rejects_large_q(euclid_samples, gauss_corpus):
    with pytest.raises(DomainError):
        verify_lsq(PhiSpec(0.25), euclid_samples, gauss_corpus)


def test_small_corpus_refused(h1_samples):
    rep = verify_cheeger(h1_samples, constants_corpus(h1_samples.structure))
    assert rep.status == Status.REFUSED
    assert not rep.fitted_constants


def test_ubound_homogeneous_and_constant(euclid_spec, euclid_samples, gauss_corpus):
    a = verify_ubound(euclid_spec, euclid_samples, gauss_corpus)
    b = verify_ubound(euclid_spec, euclid_samples, scale_corpus(gauss_corpus, 2.0))
    for k in ("A", "B"):
        assert b.fitted_constants[k].value == pytest.approx(a.fitted_constants[k].value, rel=1e-6, abs=1e-9)
    # for f = 1 the gradient term vanishes, so B must cover mu(|U|^beta + |grad U|)
    const = _rows(a)["const"]
    assert a.fitted_constants["B"].value * const.rhs["mass"].value >= const.lhs.value * (1 - 1e-9)
    assert a.status == Status.PASS


def test_tight_ledoux_normalization_idempotent(euclid_samples, gauss_corpus):
    a = verify_tight_ledoux(PhiSpec(0.5), euclid_samples, gauss_corpus)
    b = verify_tight_ledoux(PhiSpec(0.5), euclid_samples, scale_corpus(gauss_corpus, 7.0))
    for fid, r in _rows(a).items():
        assert _rows(b)[fid].lhs.value == pytest.approx(r.lhs.value, rel=1e-10)
    assert _rows(a)["const"].lhs.value == 0


def test_ifi2_trivial_entries(h1_spec, h1_samples):
    rep = verify_ifi2(h1_samples, bounded_corpus(h1_spec))
    rows = _rows(rep)
    assert rows["const_0"].lhs.value == 0 and rows["const_1"].lhs.value == 0
    assert rows["const_0.5"].lhs.value == pytest.approx(INV_SQRT_PI, abs=1e-6)
    assert rows["const_0.5"].ratio.value == 0
    assert math.isfinite(rep.fitted_constants["C_dprime"].value)
    assert rep.status == Status.PASS


def test_ifi2_excludes_out_of_range(h1_spec, h1_samples):
    rep = verify_ifi2(h1_samples, standard_corpus(h1_spec))
    assert "d" in rep.excluded


def test_theta_bound_cases(euclid_samples):
    ps = PhiSpec(1.0)
    zero = ScalarField(lambda P: np.zeros(len(P)))
    one = ScalarField(lambda P: np.ones(len(P)))
    lhs, rhs, _ = theta_bound(ps, euclid_samples, one, zero, 0.5)
    assert lhs.value == 0 and rhs.value >= 0
    h = ScalarField(lambda P: np.abs(np.tanh(P[:, 0])))
    lhs, rhs, _ = theta_bound(ps, euclid_samples, one, h, 0.1)
    assert lhs.value <= rhs.value


def test_exp_integrability_gaussian(euclid_spec, euclid_samples):
    rep = verify_exp_integrability(euclid_spec, euclid_samples, [0.01, 0.1, 0.3, 0.5])
    rows = _rows(rep)
    for lam in (0.1, 0.5):
        E = rows[f"lambda={lam:g}"].lhs
        assert abs(E.value - (1 - lam) ** -0.5) < 3 * E.se
    assert rows["lambda=0.01"].lhs.value == pytest.approx(1.0, abs=0.01)
    assert rep.details["monotone_in_lambda"]
    with pytest.raises(DomainError):
        verify_exp_integrability(euclid_spec, euclid_samples, [0.0])


def test_exp_integrability_cut_at_lambda0(euclid_spec, euclid_samples):
    rep = verify_exp_integrability(euclid_spec, euclid_samples, [0.1, 0.2, 0.4], C=2.0, D=1.0)
    assert rep.details["lambda_kept"] == [0.1, 0.2]
    assert rep.status == Status.PASS


def test_sobolev_euclidean_bumps():
    S = euclidean(1)
    rep = verify_sobolev_baseline(S, bump_corpus(S), 4.0, eps=0.1)
    assert all(math.isfinite(rep.fitted_constants[k].value) for k in ("a", "b"))
    zero = FunctionCorpus([ScalarField(lambda P: np.zeros(len(P)), lambda P: np.zeros_like(P), name="zero")],
                          ["constant"])
    zrep = verify_sobolev_baseline(S, zero, 2.0, eps=0.1)
    assert all(r.lhs.value == 0 for r in zrep.per_function)


def test_sobolev_dilation_invariant_at_critical_eps():
    H1 = heisenberg(1)
    eps = critical_epsilon(H1)
    assert eps == pytest.approx(1 / 3)
    base = bump_corpus(H1)
    a = verify_sobolev_baseline(H1, base, (3.0, 9.0), eps=eps)
    b = verify_sobolev_baseline(H1, dilate_corpus(base, H1, 0.5), (1.5, 2.25), eps=eps)
    assert b.fitted_constants["a_homogeneous"].value == pytest.approx(
        a.fitted_constants["a_homogeneous"].value, rel=5e-3)


def test_two_seed_reproducibility_tight_ledoux(euclid_spec, gauss_corpus):
    reps = []
    for seed in (1, 2):
        s = sample_measure(euclid_spec, ChainConfig(n_samples=400, burn_in=200, n_chains=100, seed=seed))
        reps.append(verify_tight_ledoux(PhiSpec(0.5), s, gauss_corpus))
    for k in ("K", "K_prime"):
        a, b = reps[0].fitted_constants[k], reps[1].fitted_constants[k]
        assert abs(a.value - b.value) <= 3 * math.hypot(a.se, b.se)
