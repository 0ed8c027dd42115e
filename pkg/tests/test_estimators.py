import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from subriem.estimators import CCDistanceTransformer, InequalityVerifier, MeasureSampler

SQRT_4PI = 3.5449077018110320546


def test_distance_transformer():
    X = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 0, 1.0]])
    d = CCDistanceTransformer().fit_transform(X)
    np.testing.assert_allclose(d[:, 0], [0.0, 1.0, SQRT_4PI], atol=1e-6)
    full = CCDistanceTransformer(gradient=True).fit_transform(X[1:])
    assert full.shape == (2, 4)


def test_distance_transformer_checks():
    with pytest.raises(NotFittedError):
        CCDistanceTransformer().transform(np.zeros((1, 3)))
    with pytest.raises(ValueError):
        CCDistanceTransformer().fit(np.zeros((2, 4)))


def test_clone_keeps_params():
    v = InequalityVerifier(kind="cheeger", group="euclidean(1)", beta=0.5)
    c = clone(v)
    assert c.get_params() == v.get_params()
    assert MeasureSampler(seed=4).set_params(n_samples=64).n_samples == 64


def test_sampler_then_verifier_on_gaussian():
    sm = MeasureSampler(group="euclidean(1)", n_samples=20_000, n_chains=100, burn_in=200, seed=3).fit()
    X = sm.sample()
    assert X.shape == (20_000, 1)
    v = InequalityVerifier(kind="cheeger", group="euclidean(1)", chain_length=200).fit(X)
    assert v.score() == 1.0
    assert np.isfinite(v.constants_["c0"][0])


def test_verifier_unknown_kind():
    with pytest.raises(ValueError):
        InequalityVerifier(kind="nope", group="euclidean(1)").fit(np.zeros((64, 1)))


def test_transformer_in_pipeline():
    pipe = make_pipeline(CCDistanceTransformer(), FunctionTransformer(np.square))
    out = pipe.fit_transform(np.array([[2.0, 0, 0]]))
    assert out[0, 0] == pytest.approx(4.0, abs=1e-6)
