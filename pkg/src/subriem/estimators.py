"""scikit-learn style wrappers, so the pieces drop into pipelines and grid searches."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .distance import distance_features
from .functionals import (PhiSpec, resolve_corpus, verify_cheeger, verify_ifi2, verify_l1phi_entropy, verify_lsq,
                          verify_tight_ledoux, verify_ubound)
from .htype import load_structure
from .measures import ChainConfig, SampleSet, sample_measure, spec_from_dict


class CCDistanceTransformer(TransformerMixin, BaseEstimator):
    """Maps (N, m + n) coordinates to CC distance from the identity.

    With ``gradient=True`` the output gains the Euclidean gradient columns.
    """

    def __init__(self, group="heisenberg1", gradient=False):
        self.group = group
        self.gradient = gradient

    def fit(self, X, y=None):
        self.structure_ = load_structure(self.group)
        X = check_array(X)
        if X.shape[1] != self.structure_.dim:
            raise ValueError(f"expected {self.structure_.dim} columns, got {X.shape[1]}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "structure_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        d, g = distance_features(self.structure_, X)
        return np.column_stack([d, g]) if self.gradient else d[:, None]


class MeasureSampler(BaseEstimator):
    """Draws from mu = exp(-alpha d^p) / Z; ``fit`` ignores its input."""

    def __init__(self, group="heisenberg1", p=2.0, alpha=1.0, n_samples=1000, n_chains=100, burn_in=300, seed=0):
        self.group = group
        self.p = p
        self.alpha = alpha
        self.n_samples = n_samples
        self.n_chains = n_chains
        self.burn_in = burn_in
        self.seed = seed

    def _spec(self):
        return spec_from_dict({"group": self.group, "p": self.p, "alpha": self.alpha})

    def fit(self, X=None, y=None):
        self.spec_ = self._spec()
        per = max(-(-int(self.n_samples) // int(self.n_chains)), 32)
        cfg = ChainConfig(n_samples=per, burn_in=self.burn_in, n_chains=self.n_chains, seed=self.seed)
        self.sample_set_ = sample_measure(self.spec_, cfg)
        self.samples_ = np.asarray(self.sample_set_.points)
        return self

    def sample(self):
        check_is_fitted(self, "sample_set_")
        return self.samples_


_KINDS = {
    "cheeger": lambda ps, s, c: verify_cheeger(s, c),
    "l1phi": lambda ps, s, c: verify_l1phi_entropy(ps, s, c),
    "lsq": lambda ps, s, c: verify_lsq(ps, s, c),
    "tight_ledoux": lambda ps, s, c: verify_tight_ledoux(ps, s, c),
    "ifi2": lambda ps, s, c: verify_ifi2(s, c),
}


class InequalityVerifier(BaseEstimator):
    """Fits the constants of one inequality from a sample matrix.

    ``X`` holds sample coordinates row-wise; rows are treated as one
    chain unless ``chain_length`` is given. After ``fit``,
    ``constants_`` maps constant names to (value, se) and ``report_``
    holds the full report.
    """

    def __init__(self, kind="l1phi", group="heisenberg1", p=2.0, alpha=1.0, beta=None, corpus="builtin:standard",
                 chain_length=None):
        self.kind = kind
        self.group = group
        self.p = p
        self.alpha = alpha
        self.beta = beta
        self.corpus = corpus
        self.chain_length = chain_length

    def fit(self, X, y=None):
        spec = spec_from_dict({"group": self.group, "p": self.p, "alpha": self.alpha})
        X = check_array(X)
        s = SampleSet(spec.structure, X, None, self.chain_length)
        corpus = resolve_corpus(self.corpus, spec)
        if self.kind == "ubound":
            rep = verify_ubound(spec, s, corpus)
        elif self.kind in _KINDS:
            beta = spec.beta if self.beta is None else self.beta
            rep = _KINDS[self.kind](PhiSpec(beta), s, corpus)
        else:
            raise ValueError(f"unknown kind {self.kind!r}")
        self.report_ = rep
        self.constants_ = {k: (v.value, v.se) for k, v in rep.fitted_constants.items()}
        self.status_ = rep.status.value
        return self

    def score(self, X=None, y=None):
        """1.0 for a clean pass, 0.0 otherwise."""
        check_is_fitted(self, "report_")
        return float(self.status_ == "pass")
