"""End-to-end acceptance checks, one test per criterion.

Each test logs a PASS/FAIL line through the ``criterion`` fixture; the
lines are printed in the terminal summary. Sample sizes and tolerances
are the stated ones, so this module is the slow part of the suite.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy.stats import ks_2samp

from subriem.cli import RunConfig, canonical_json, run_command
from subriem.distance import TranscriptionConfig, cc_distance_oracle, check_distance_conditions, distance_arrays
from subriem.functionals import (PhiSpec, bounded_corpus, profile_Uq, profile_value, standard_corpus, verify_cheeger,
                                 verify_exp_integrability, verify_ifi2, verify_l1phi_entropy, verify_lsq,
                                 verify_tight_ledoux, verify_ubound)
from subriem.gibbs import (MERGE_BY, LatticeConfig, center_distance, contraction_trend, cosine_coupling, gibbs_corpus,
                           iterate_sweep, sample_gibbs, verify_gibbs_l1phi, verify_gradient_contraction)
from subriem.heat import (PathConfig, gradient_bound_across_t, heat_semigroup_apply, simulate_horizontal_bm)
from subriem.htype import (GroupPoint, ScalarField, dilate_arrays, euclidean, heisenberg, inverse_arrays, mul_arrays,
                           quaternionic)
from subriem.isoperimetry import TestSet, boundary_measure, eta_violations, verify_coarea, verify_isoperimetry
from subriem.measures import (ChainConfig, MeasureSpec, SampleSet, estimate_expectation, estimate_normalization,
                              sample_measure, spec_from_dict)
from subriem.reports import Status

H1 = heisenberg(1)
SQRT_4PI = 3.5449077018110320546
SQRT_PI = 1.7724538509055160273
INV_SQRT_PI = 0.56418958354775628695
# (1 - lambda)^(-1/2)
EXP_MOMENTS = {0.1: 1.0540925533894597773, 0.5: 1.4142135623730950488}


def _within(est, target, k=3.0):
    return abs(est.value - target) <= k * est.se


def _agree(a, b, k=3.0):
    return abs(a.value - b.value) <= k * math.hypot(a.se, b.se)


@pytest.fixture(scope="module")
def euclid_1e5():
    """(spec, samples, sampling seconds)"""
    t0 = time.perf_counter()
    spec = spec_from_dict({"group": "euclidean(1)", "p": 2, "alpha": 1})
    s = sample_measure(spec, ChainConfig(n_samples=1000, burn_in=300, n_chains=100, seed=61))
    return spec, s, time.perf_counter() - t0


@pytest.fixture(scope="module")
def h1_1e5():
    """(spec, samples for two seeds, sampling seconds)"""
    t0 = time.perf_counter()
    spec = spec_from_dict({"group": "heisenberg1", "p": 2, "alpha": 1})
    samples = [sample_measure(spec, ChainConfig(n_samples=1000, burn_in=300, n_chains=100, seed=seed))
               for seed in (71, 72)]
    return spec, samples, time.perf_counter() - t0


def test_criterion_01_group_algebra(criterion):
    criterion(1, False, "did not finish")
    t0 = time.perf_counter()
    worst = 0.0
    for S in (H1, quaternionic()):
        rng = np.random.default_rng(1)
        P, R, T = rng.normal(scale=2.0, size=(3, 1000, S.dim))
        worst = max(worst, np.max(np.abs(mul_arrays(S, mul_arrays(S, P, R), T) - mul_arrays(S, P, mul_arrays(S, R, T)))))
        e = np.zeros((1000, S.dim))
        worst = max(worst, np.max(np.abs(mul_arrays(S, e, P) - P)), np.max(np.abs(mul_arrays(S, P, e) - P)))
        worst = max(worst, np.max(np.abs(mul_arrays(S, P, inverse_arrays(S, P)))))
    jres = max(S.jproperty_residual(n_trials=1000) for S in (H1, quaternionic()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and jres <= 1e-10 and dt < 1.0
    assert criterion(1, ok, f"group law residual {worst:.1e}, J residual {jres:.1e}, {dt:.2f}s")


def test_criterion_02_cc_distance(criterion):
    criterion(2, False, "did not finish")
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    P = rng.normal(size=(100, 3))
    d = distance_arrays(H1, P)
    homog = np.max(np.abs(distance_arrays(H1, dilate_arrays(H1, P, 1.7)) - 1.7 * d))
    sym = np.max(np.abs(distance_arrays(H1, inverse_arrays(H1, P)) - d))
    pts = np.vstack([rng.normal(size=(15, 3)),
                     np.column_stack([rng.uniform(-0.02, 0.02, (5, 2)), rng.uniform(0.3, 1.5, 5)])])
    oracle = np.array([cc_distance_oracle(GroupPoint.from_array(H1, p), TranscriptionConfig(segments=128)) for p in pts])
    gap = np.max(np.abs(oracle - distance_arrays(H1, pts)))
    X = rng.normal(size=(50, 2))
    horiz = np.max(np.abs(distance_arrays(H1, np.column_stack([X, np.zeros(50)])) - np.linalg.norm(X, axis=1)))
    axis = abs(distance_arrays(H1, np.array([[0.0, 0.0, 1.0]]))[0] - SQRT_4PI)
    dt = time.perf_counter() - t0
    ok = homog <= 1e-9 and sym <= 1e-9 and gap <= 1e-3 and horiz <= 1e-6 and axis <= 1e-3 and dt < 30
    assert criterion(2, ok, f"homogeneity {homog:.1e}, symmetry {sym:.1e}, oracle gap {gap:.1e}, "
                            f"axis error {axis:.1e}, {dt:.1f}s")


def test_criterion_03_eikonal(criterion):
    criterion(3, False, "did not finish")
    rng = np.random.default_rng(3)
    grid = rng.uniform(-3, 3, size=(1000, 3))
    rep = check_distance_conditions(MeasureSpec(H1), grid)
    sig = rep.fitted_constants["sigma"].value
    K, eps = rep.fitted_constants["K"].value, rep.fitted_constants["eps"].value
    ok = abs(sig - 1) <= 1e-3 and math.isfinite(K) and eps < 1
    assert criterion(3, ok, f"max |grad d| = {sig:.6f}, K = {K:.3g}, eps = {eps:.3g}")


def test_criterion_04_profile(criterion):
    criterion(4, False, "did not finish")
    pt = profile_Uq(2.0)
    half = abs(pt(0.5) - INV_SQRT_PI)
    sym = pt.symmetry_residual()
    drift = {}
    for q in (4 / 3, 2.0, 4.0):
        a, b = profile_Uq(q, grid_size=256).L_q, profile_Uq(q, grid_size=512).L_q
        drift[q] = abs(a - b) / b if math.isfinite(b) else math.inf
    closed = abs(profile_value(2.0, 0.5) - INV_SQRT_PI)
    ok = half <= 1e-6 and closed <= 1e-6 and sym < 1e-8 and max(drift.values()) < 0.01
    assert criterion(4, ok, f"U_2(1/2) error {half:.1e}, symmetry {sym:.1e}, "
                            f"L_q grid drift {max(drift.values()):.2%}")


def test_criterion_05_eta(criterion):
    criterion(5, False, "did not finish")
    v = {beta: eta_violations(beta, n=1000) for beta in (1.0, 0.5)}
    assert criterion(5, sum(v.values()) == 0, f"violations {v}")


def test_criterion_06_euclidean_oracles(criterion, euclid_1e5):
    criterion(6, False, "did not finish")
    spec, s, t_sample = euclid_1e5
    t0 = time.perf_counter() - t_sample
    ab = estimate_expectation(s, ScalarField(lambda P: np.abs(P[:, 0])))
    Z = estimate_normalization(spec)
    sf = boundary_measure(TestSet.half_space(spec.structure, [1.0], 0.0), s)
    rep = verify_exp_integrability(spec, s, sorted(EXP_MOMENTS))
    rows = {r.id: r.lhs for r in rep.per_function}
    exp_ok = all(_within(rows[f"lambda={lam:g}"], v) for lam, v in EXP_MOMENTS.items())
    dt = time.perf_counter() - t0
    ok = (_within(ab, INV_SQRT_PI) and abs(Z.value - SQRT_PI) <= 1e-6 and _within(sf.mu_plus, INV_SQRT_PI)
          and exp_ok and dt < 120)
    assert criterion(6, ok, f"mu|x| = {ab}, Z - sqrt(pi) = {Z.value - SQRT_PI:.1e}, mu+ = {sf.mu_plus}, "
                            f"exp moments {rows['lambda=0.1']}, {rows['lambda=0.5']}, {dt:.0f}s")


def _battery(spec, s):
    ps = PhiSpec(0.5)
    corpus = standard_corpus(spec)
    return {
        "UBOUND": verify_ubound(spec, s, corpus),
        "CHEEGER": verify_cheeger(s, corpus),
        "L1PHI": verify_l1phi_entropy(ps, s, corpus),
        "LSQ": verify_lsq(ps, s, corpus),
        "IFI2": verify_ifi2(s, bounded_corpus(spec)),
        "TIGHT_LEDOUX": verify_tight_ledoux(ps, s, corpus),
    }


def test_criterion_07_h1_battery(criterion, h1_1e5):
    criterion(7, False, "did not finish")
    spec, samples, t_sample = h1_1e5
    t0 = time.perf_counter() - t_sample
    runs = [_battery(spec, s) for s in samples]
    problems = []
    for run in runs:
        for kind, rep in run.items():
            if rep.status != Status.PASS or rep.violations:
                problems.append(f"{kind}: {rep.status.value} {rep.violations}")
            if not rep.fitted_constants or not all(math.isfinite(c.value) for c in rep.fitted_constants.values()):
                problems.append(f"{kind}: non-finite constants")
    for kind in runs[0]:
        for name, a in runs[0][kind].fitted_constants.items():
            b = runs[1][kind].fitted_constants[name]
            if not _agree(a, b):
                problems.append(f"{kind}.{name}: {a} vs {b}")
    n_corpus = len(standard_corpus(spec))
    dt = time.perf_counter() - t0
    ok = not problems and n_corpus >= 20 and dt < 600
    summary = ", ".join(f"{k} {next(iter(r.fitted_constants.values()))}" for k, r in runs[0].items())
    assert criterion(7, ok, f"{summary}; {n_corpus} functions, {dt:.0f}s; {problems or 'seed-stable'}")


def test_criterion_08_tensorization(criterion):
    criterion(8, False, "did not finish")
    ps = PhiSpec(0.5)
    margs, cols = [], []
    for alpha, seed in ((1.0, 81), (2.0, 82)):
        spec = spec_from_dict({"group": "euclidean(1)", "p": 2, "alpha": alpha})
        s = sample_measure(spec, ChainConfig(n_samples=1000, burn_in=300, n_chains=100, seed=seed))
        margs.append(verify_l1phi_entropy(ps, s, standard_corpus(spec)).fitted_constants["c"])
        cols.append(s.points[:, 0])
    product = SampleSet(euclidean(2), np.column_stack(cols), None, 1000)
    spec2 = spec_from_dict({"group": "euclidean(2)", "p": 2, "alpha": 1})
    c = verify_l1phi_entropy(ps, product, standard_corpus(spec2)).fitted_constants["c"]
    top = max(margs, key=lambda e: e.value)
    ok = c.value <= top.value + 3 * math.hypot(c.se, top.se)
    assert criterion(8, ok, f"product c = {c}, marginals {margs[0]}, {margs[1]}")


def test_criterion_09_isoperimetry(criterion, h1_1e5):
    criterion(9, False, "did not finish")
    spec, samples, _ = h1_1e5
    S = spec.structure
    balls = [TestSet.ball(S, r) for r in (0.5, 0.75, 1.0, 1.25, 1.5, 2.0)]
    pt = profile_Uq(2.0)
    reps = [verify_isoperimetry(balls, s.thin_to(20_000), pt) for s in samples]
    cs = [r.fitted_constants["c_tilde"] for r in reps]
    co = verify_coarea(standard_corpus(spec), samples[0], max_points=4000)
    ok = (all(r.status == Status.PASS for r in reps) and all(math.isfinite(c.value) for c in cs)
          and _agree(cs[0], cs[1]) and co.status == Status.PASS and not co.violations)
    assert criterion(9, ok, f"c_tilde {cs[0]} vs {cs[1]}; coarea {co.status.value} over "
                            f"{len(co.per_function)} functions")


def test_criterion_10_heat(criterion):
    criterion(10, False, "did not finish")
    t0 = time.perf_counter()
    e = GroupPoint.identity(H1)
    es = simulate_horizontal_bm(e, PathConfig(t=1.0, n_steps=256, n_paths=100_000, seed=101))
    one = heat_semigroup_apply(ScalarField(lambda P: np.ones(len(P))), e, es.config, es)
    sq = heat_semigroup_apply(ScalarField(lambda P: P[:, 0] ** 2 + P[:, 1] ** 2), e, es.config, es)
    quarter = simulate_horizontal_bm(e, PathConfig(t=0.25, n_steps=256, n_paths=100_000, seed=102))
    ks = ks_2samp(distance_arrays(H1, dilate_arrays(H1, quarter.points, 2.0)), distance_arrays(H1, es.points)).pvalue
    corpus = bounded_corpus(MeasureSpec(H1))
    reps, overlap = gradient_bound_across_t(corpus, [0.25, 1.0, 4.0],
                                            PathConfig(n_steps=256, n_paths=100_000, seed=103), e)
    C = {t: r.fitted_constants["C1"] for t, r in reps.items()}
    dt = time.perf_counter() - t0
    ok = (one.as_tuple() == (1.0, 0.0) and _within(sq, 4.0) and ks > 0.01 and overlap
          and all(math.isfinite(c.value) for c in C.values()) and dt < 300)
    assert criterion(10, ok, f"P_t 1 = {one.value}, P_t |x|^2 = {sq} (4), KS p = {ks:.3f}, "
                             f"C1 {', '.join(f't={t:g}: {c}' for t, c in C.items())}, {dt:.0f}s")


def test_criterion_11_gibbs(criterion, h1_1e5):
    criterion(11, False, "did not finish")
    t0 = time.perf_counter()
    spec, samples, _ = h1_1e5
    single = verify_l1phi_entropy(PhiSpec(0.5), samples[0], standard_corpus(spec)).fitted_constants["c"]
    free = LatticeConfig(spec, cosine_coupling(H1), J=0.0, D=2, side=3)
    rep0 = verify_gibbs_l1phi(free, gibbs_corpus(free), ChainConfig(n_samples=40, burn_in=2, n_chains=256, seed=111),
                              PhiSpec(0.5))
    C0 = rep0.fitted_constants.get("C")
    free_ok = rep0.status == Status.PASS and C0 is not None and _agree(C0, single)

    small = free.with_J(0.2)
    sw = iterate_sweep(small, center_distance(small), MERGE_BY, ChainConfig(n_samples=1, n_chains=512, seed=112))
    merge_ok = sw.converged

    Js = [0.0, 0.1, 0.2, 0.4]
    eps = []
    for k, J in enumerate(Js):
        cfg = free.with_J(J)
        mc = ChainConfig(n_samples=16, burn_in=4, n_chains=256, seed=120 + k)
        nu = sample_gibbs(cfg, mc)
        r = verify_gradient_contraction(cfg, gibbs_corpus(cfg), mc, c0=0.8, n_outer=512, n_inner=64, sample=nu)
        eps.append(r.fitted_constants["epsilon"])
    trend = contraction_trend(Js, eps)
    contraction_ok = (all(e.value < 1 for e in eps) and trend["excludes_zero"]
                      and trend["max_residual_over_se"] <= 3.0)
    dt = time.perf_counter() - t0
    ok = free_ok and merge_ok and contraction_ok and dt < 1200
    assert criterion(11, ok, f"J=0 C = {C0} vs single-site {single}; J=0.2 merged at r = {sw.merged_at}; "
                             f"eps {[round(e.value, 3) for e in eps]}, slope {trend['slope']:.3f} "
                             f"+/- {trend['slope_se']:.3f}, max resid/se {trend['max_residual_over_se']:.2f}; {dt:.0f}s")


@pytest.mark.parametrize("command,options", [
    ("dist", {"point": "1,0.5,0.25"}),
    ("sample", {"n": 3200, "chains": 32, "burn_in": 50}),
    ("verify", {"kind": "l1phi", "n": 6400}),
    ("iso", {"sets": ["ball:1.0"], "n": 6400}),
    ("heat", {"paths": 2048, "steps": 64}),
    ("gibbs", {"sweeps": 4, "replicas": 64}),
    ("all", {"n": 6400}),
])
def test_criterion_12_determinism(criterion, command, options):
    criterion(12, False, f"{command} did not finish")
    cfg = RunConfig(command, seed=None if command == "dist" else 12, options=options)
    a, b = (canonical_json(run_command(cfg).results) for _ in range(2))
    assert a == b
    json.loads(a)
    _DETERMINISTIC.add(command)
    criterion(12, len(_DETERMINISTIC) == 7, f"byte-identical results for {sorted(_DETERMINISTIC)}")


_DETERMINISTIC = set()
