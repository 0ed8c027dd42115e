import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from subriem.distance import distance_arrays
from subriem.errors import DomainError
from subriem.functionals import bounded_corpus
from subriem.heat import (PathConfig, _simulate_levels, eval_heat_kernel_comparison, gaussian_threshold,
                          gradient_bound_across_t, heat_kernel_expression_arrays, heat_semigroup_apply, kde_sandwich,
                          kernel_exponents, simulate_horizontal_bm, verify_semigroup_gradient_bound, weak_order)
from subriem.htype import GroupPoint, ScalarField, dilate_arrays, heisenberg, quaternionic
from subriem.measures import MeasureSpec
from subriem.reports import Status

H1 = heisenberg(1)
E1 = GroupPoint.identity(H1)


@pytest.fixture(scope="module")
def es():
    return simulate_horizontal_bm(E1, PathConfig(t=1.0, n_steps=128, n_paths=40_000, seed=3))


def test_config_validation():
    with pytest.raises(DomainError):
        PathConfig(n_steps=16)
    with pytest.raises(DomainError):
        PathConfig(t=0)
    with pytest.raises(DomainError):
        PathConfig(n_paths=10)


def test_simulation_deterministic():
    cfg = PathConfig(t=0.5, n_steps=64, n_paths=5000, seed=1)
    a = simulate_horizontal_bm(E1, cfg).points
    b = simulate_horizontal_bm(E1, cfg).points
    assert a.tobytes() == b.tobytes()


def test_horizontal_covariance(es):
    b = es.batcher()
    X = es.points
    for i in range(2):
        for j in range(2):
            est = b.mean(X[:, i] * X[:, j])
            target = 2.0 if i == j else 0.0
            assert abs(est.value - target) < 3 * est.se
    z = b.mean(X[:, 2])
    assert abs(z.value) < 3 * z.se


def test_semigroup_simple_functions(es):
    one = ScalarField(lambda P: np.ones(len(P)))
    assert heat_semigroup_apply(one, E1, es.config, es).as_tuple() == (1.0, 0.0)
    x1 = heat_semigroup_apply(ScalarField(lambda P: P[:, 0]), E1, es.config, es)
    assert abs(x1.value) < 3 * x1.se
    sq = heat_semigroup_apply(ScalarField(lambda P: P[:, 0] ** 2 + P[:, 1] ** 2), E1, es.config, es)
    assert abs(sq.value - 4.0) < 3 * sq.se


def test_quaternionic_second_moment():
    S = quaternionic()
    cfg = PathConfig(t=0.5, n_steps=64, n_paths=20_000, seed=2)
    e = GroupPoint.identity(S)
    sq = heat_semigroup_apply(ScalarField(lambda P: np.sum(P[:, :4] ** 2, axis=1)), e, cfg)
    assert abs(sq.value - 2 * 4 * 0.5) < 3 * sq.se


def test_parabolic_scaling_ks():
    a = simulate_horizontal_bm(E1, PathConfig(t=0.25, n_steps=128, n_paths=20_000, seed=11))
    b = simulate_horizontal_bm(E1, PathConfig(t=1.0, n_steps=128, n_paths=20_000, seed=12))
    da = distance_arrays(H1, dilate_arrays(H1, a.points, 2.0))
    db = distance_arrays(H1, b.points)
    assert ks_2samp(da, db).pvalue > 0.01


def test_central_variance_bias():
    # E z^2 = t^2 (1 - 1/N) for the Euler group-law scheme on H^1 (t = 1)
    cfg = PathConfig(t=1.0, n_steps=64, n_paths=40_000, seed=5)
    z2 = heat_semigroup_apply(ScalarField(lambda P: P[:, 2] ** 2), E1, cfg)
    assert abs(z2.value - (1 - 1 / 64)) < 3 * z2.se


def test_weak_order_near_one():
    cfg = PathConfig(t=1.0, n_steps=64, n_paths=100_000, seed=6)
    diffs, order = weak_order(ScalarField(lambda P: P[:, 2] ** 2), E1, cfg, levels=3)
    assert abs(order.value - 1.0) < 3 * order.se + 0.1
    # each refinement roughly halves the bias
    assert abs(diffs[0].value) > abs(diffs[1].value)


def test_levels_share_increments():
    cfg = PathConfig(t=1.0, n_steps=64, n_paths=64, seed=7)
    coarse, fine = _simulate_levels(H1, np.zeros(3), cfg, 2)
    # horizontal endpoints are sums of the same increments
    np.testing.assert_allclose(coarse[:, :2], fine[:, :2], atol=1e-12)


def test_gradient_bound_linear_function(es):
    corpus = bounded_corpus(MeasureSpec(H1))
    rep = verify_semigroup_gradient_bound(corpus, 1.0, es.config, E1, sample=es)
    rows = {r.id: r for r in rep.per_function}
    assert rows["sig_x1"].ratio.value <= 1 + 1e-6
    assert "const_0.5" in rep.excluded
    assert math.isfinite(rep.fitted_constants["C1"].value)
    assert rep.status == Status.PASS


def test_gradient_bound_x1_ratio_exactly_one():
    from subriem.functionals.corpus import FunctionCorpus
    x1 = ScalarField(lambda P: P[:, 0], lambda P: np.tile([1.0, 0, 0], (len(P), 1)), name="x1")
    cfg = PathConfig(t=1.0, n_steps=64, n_paths=4096, seed=8)
    rep = verify_semigroup_gradient_bound(FunctionCorpus([x1], ["coordinate"]), 1.0, cfg, E1)
    assert rep.per_function[0].ratio.value == pytest.approx(1.0, abs=1e-8)


def test_gradient_bound_seed_stable():
    corpus = bounded_corpus(MeasureSpec(H1))
    cs = []
    for seed in (21, 22):
        cfg = PathConfig(t=1.0, n_steps=64, n_paths=20_000, seed=seed)
        cs.append(verify_semigroup_gradient_bound(corpus, 1.0, cfg, E1).fitted_constants["C1"])
    assert abs(cs[0].value - cs[1].value) <= 3 * math.hypot(cs[0].se, cs[1].se) + 1e-9


def test_gradient_bound_across_t():
    corpus = bounded_corpus(MeasureSpec(H1)).select(["sig_d", "gauss_d", "ball_1_0.3", "sig_x1"])
    reps, ok = gradient_bound_across_t(corpus, [0.25, 1.0], PathConfig(n_steps=64, n_paths=20_000, seed=9), E1)
    assert ok and set(reps) == {0.25, 1.0}


def test_kernel_expression_at_identity():
    assert eval_heat_kernel_comparison(GroupPoint.identity(heisenberg(2)))[0] == pytest.approx(1.0)
    lit = kernel_exponents(H1, "literal")
    assert eval_heat_kernel_comparison(E1, exps=lit)[0] == pytest.approx(1.0)
    # with a = 0 the d^a term is the constant 1, which doubles the numerator
    assert eval_heat_kernel_comparison(E1)[0] == pytest.approx(2.0)
    assert eval_heat_kernel_comparison(E1, C=3.0)[1] == 3.0
    with pytest.raises(DomainError):
        kernel_exponents(H1, "other")


def test_kernel_expression_tail_decreasing():
    x = np.linspace(3, 12, 50)
    P = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])
    v = heat_kernel_expression_arrays(H1, P)
    assert np.all(np.diff(v) < 0)


def test_kde_sandwich(es):
    grid = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.5, 0], [0, 0, 0.5], [1, 1, 0.3], [2.0, 0, 0]])
    out = kde_sandwich(es, grid)
    assert 0 < out["kappa_1"] <= out["kappa_2"] < np.inf
    short = simulate_horizontal_bm(E1, PathConfig(t=0.5, n_steps=64, n_paths=1000, seed=1))
    with pytest.raises(DomainError):
        kde_sandwich(short, grid)


def test_gaussian_threshold(es):
    assert gaussian_threshold(es) == pytest.approx(0.25, abs=0.03)
