import numpy as np
import pytest

from subriem._stats import Batcher, Estimate, batch_labels, combined_se, effective_sample_size, stack_max


def test_batch_labels_time_slices():
    lab = batch_labels(4 * 64, chain_length=64)
    assert lab.max() == 31
    # every chain contributes equally to every batch
    assert np.all(np.bincount(lab) == 8)
    with pytest.raises(ValueError):
        batch_labels(100, chain_length=10)


def test_batched_mean_and_se_iid():
    rng = np.random.default_rng(0)
    v = rng.normal(size=64_000)
    est = Batcher(batch_labels(v.size)).mean(v)
    assert abs(est.value - v.mean()) < 1e-12
    assert est.se == pytest.approx(1 / np.sqrt(v.size), rel=0.35)


def test_estimate_arithmetic_propagates():
    a = Estimate.with_se(2.0, 0.1)
    b = Estimate.exact(3.0)
    assert (a * b).se == pytest.approx(0.3)
    assert (a + b).value == 5.0
    assert (1 / a).value == 0.5
    mean, se = a
    assert (mean, se) == a.as_tuple()
    r = Estimate.apply(lambda x, y: x ** 2 + y, a, b)
    assert r.value == 7.0 and r.se == pytest.approx(0.4, rel=1e-9)
    assert combined_se(a, a) == pytest.approx(0.1 * np.sqrt(2))
    assert stack_max([a, b]).value == 3.0


def test_effective_sample_size_ar1():
    rng = np.random.default_rng(1)
    n, rho = 40_000, 0.8
    x = np.empty(n)
    x[0] = 0
    e = rng.normal(size=n)
    for i in range(1, n):
        x[i] = rho * x[i - 1] + e[i]
    # integrated autocorrelation time (1 + rho) / (1 - rho) = 9
    assert effective_sample_size(x) == pytest.approx(n / 9, rel=0.25)
