"""The Orlicz function Phi(x) = x (log(1 + x))^beta and its entropy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from ..errors import DegenerateError, DomainError
from .._stats import Estimate


@dataclass(frozen=True)
class PhiSpec:
    beta: float

    def __post_init__(self):
        if not 0 < self.beta <= 1:
            raise DomainError(f"beta must lie in (0, 1], got {self.beta}")

    @property
    def q(self) -> float:
        return 1.0 / self.beta

    def __call__(self, x):
        return _phi(x, self.beta)


def _phi(x, beta):
    x = np.asarray(x, dtype=float)
    lg = np.log1p(np.maximum(x, 0.0))
    return x * lg ** beta


def phi_eval(ps: PhiSpec, x):
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError("Phi is defined on [0, inf)")
    out = _phi(x_arr, ps.beta)
    return float(out) if out.ndim == 0 else out


def entropy_from_means(ps: PhiSpec, mean_phi: Estimate, mean_abs: Estimate) -> Estimate:
    """Ent = mu Phi(|f|) - Phi(mu |f|), propagated through the replicates."""
    return Estimate(mean_phi.value - float(_phi(mean_abs.value, ps.beta)),
                    mean_phi.reps - _phi(mean_abs.reps, ps.beta))


def entropy_phi(ps: PhiSpec, s, f) -> Estimate:
    """Phi-entropy of |f| under the sample measure; unpacks as (value, se)."""
    b = s.batcher()
    vals = np.abs(np.asarray(f.eval(s.points), dtype=float))
    if not np.all(np.isfinite(vals)):
        raise DegenerateError(f"{getattr(f, 'name', 'f')} is not finite on the sample")
    if np.ptp(vals) == 0:
        return Estimate.exact(0.0, b.nb)
    return entropy_from_means(ps, b.mean(_phi(vals, ps.beta)), b.mean(vals))


@lru_cache(maxsize=64)
def theta_constant(beta: float) -> float:
    """sup over x >= 0 of beta x (log(1+x))^(beta-1) / (1+x)."""
    if beta >= 1.0:
        return 1.0  # x / (1 + x) increases to 1

    def neg(u):
        x = math.exp(u)
        return -beta * x * math.log1p(x) ** (beta - 1) / (1 + x)

    grid = np.linspace(-20, 40, 601)
    vals = [neg(u) for u in grid]
    u0 = grid[int(np.argmin(vals))]
    res = minimize_scalar(neg, bracket=(u0 - 0.1, u0, u0 + 0.1), tol=1e-12)
    return float(-min(res.fun, min(vals)))
