"""Batch-means estimates with leave-one-batch-out replicates.

An :class:`Estimate` carries a point value and one replicate per batch,
each computed with that batch removed. Smooth (and not-so-smooth)
functions of estimates are propagated by applying the same function to
the replicates, which gives jackknife standard errors. For a plain mean
with equal batch weights this coincides with the batch-means SE.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

N_BATCHES = 32


class Estimate:
    __slots__ = ("value", "reps")

    def __init__(self, value: float, reps: np.ndarray):
        self.value = float(value)
        self.reps = np.asarray(reps, dtype=float)

    @classmethod
    def exact(cls, value: float, nb: int = N_BATCHES) -> "Estimate":
        return cls(value, np.full(nb, float(value)))

    @classmethod
    def with_se(cls, value: float, se: float, nb: int = N_BATCHES) -> "Estimate":
        """An estimate whose replicates reproduce a given standard error."""
        a = float(se) / math.sqrt(nb - 1)
        return cls(value, value + a * np.where(np.arange(nb) % 2, 1.0, -1.0))

    @property
    def se(self) -> float:
        r = self.reps
        nb = r.size
        if nb < 2 or not np.all(np.isfinite(r)):
            return float("nan") if not np.all(np.isfinite(r)) else 0.0
        return float(np.sqrt((nb - 1) / nb * np.sum((r - r.mean()) ** 2)))

    def __iter__(self):
        yield self.value
        yield self.se

    def __repr__(self):
        return f"Estimate({self.value:.6g} ± {self.se:.2g})"

    def as_tuple(self):
        return (self.value, self.se)

    @staticmethod
    def apply(fn: Callable, *args) -> "Estimate":
        """Evaluate ``fn`` on values and on each replicate."""
        vals = [a.value if isinstance(a, Estimate) else a for a in args]
        nb = next(a.reps.size for a in args if isinstance(a, Estimate))
        reps = np.empty(nb)
        for b in range(nb):
            rb = [a.reps[b] if isinstance(a, Estimate) else a for a in args]
            reps[b] = fn(*rb)
        return Estimate(fn(*vals), reps)

    def _bin(self, other, op):
        if isinstance(other, Estimate):
            return Estimate(op(self.value, other.value), op(self.reps, other.reps))
        return Estimate(op(self.value, other), op(self.reps, other))

    def __add__(self, o):
        return self._bin(o, np.add)

    __radd__ = __add__

    def __sub__(self, o):
        return self._bin(o, np.subtract)

    def __rsub__(self, o):
        return Estimate(o - self.value, o - self.reps)

    def __mul__(self, o):
        return self._bin(o, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return self._bin(o, np.divide)

    def __rtruediv__(self, o):
        return Estimate(o / self.value, o / self.reps)

    def __neg__(self):
        return Estimate(-self.value, -self.reps)

    def __pow__(self, k):
        return Estimate(self.value ** k, self.reps ** k)

    def map(self, fn) -> "Estimate":
        return Estimate(fn(self.value), fn(self.reps))


def stack_max(ests: Sequence[Estimate]) -> Estimate:
    vals = np.array([e.value for e in ests])
    reps = np.stack([e.reps for e in ests])
    return Estimate(vals.max(), reps.max(axis=0))


def combined_se(*ests: Estimate) -> float:
    return float(np.sqrt(sum(e.se ** 2 for e in ests)))


def batch_labels(n: int, chain_length: Optional[int] = None, nb: int = N_BATCHES) -> np.ndarray:
    """Batch index per sample.

    Samples are laid out chain-major; batch ``b`` gathers time slice ``b`` of
    every chain, so batches are (nearly) independent once slices exceed the
    autocorrelation time. Without ``chain_length`` the data is one sequence.
    """
    if chain_length is None or chain_length <= 0:
        chain_length = n
    if chain_length < nb:
        raise ValueError(f"need at least {nb} samples per chain for batch means")
    t = np.arange(n) % chain_length
    return (t * nb) // chain_length


class Batcher:
    """Weighted batch sums for many statistics sharing one labeling."""

    def __init__(self, labels: np.ndarray, weights: Optional[np.ndarray] = None, nb: int = N_BATCHES):
        self.labels = np.asarray(labels, dtype=np.intp)
        self.nb = nb
        self.n = self.labels.size
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        w = np.ones(self.n) if self.weights is None else self.weights
        self._wb = np.bincount(self.labels, weights=w, minlength=nb)
        self._wtot = self._wb.sum()

    def sums(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.weights is not None:
            v = v * self.weights
        return np.bincount(self.labels, weights=v, minlength=self.nb)

    def mean(self, v: np.ndarray) -> Estimate:
        s = self.sums(v)
        tot = s.sum()
        with np.errstate(invalid="ignore", divide="ignore"):
            reps = (tot - s) / (self._wtot - self._wb)
        return Estimate(tot / self._wtot, reps)

    def means(self, cols: Iterable[np.ndarray]) -> list:
        return [self.mean(c) for c in cols]

    def subset(self, mask: np.ndarray) -> "Batcher":
        w = None if self.weights is None else self.weights[mask]
        return Batcher(self.labels[mask], w, self.nb)


def effective_sample_size(chain: np.ndarray) -> float:
    """ESS of one scalar chain from the initial-positive-sequence autocorrelation sum."""
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = x.var()
    if var == 0:
        return float(n)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (var * n)
    tau = 1.0
    for k in range(1, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / tau)
