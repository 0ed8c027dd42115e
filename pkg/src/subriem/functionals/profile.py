"""Isoperimetric profile U_q of the one-dimensional law e^{-|x|^p} dx / Z_p."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma, gammainccinv

from ..errors import DomainError, SolverError


def conjugate(q: float) -> float:
    if not q > 1:
        raise DomainError(f"q must exceed 1, got {q}")
    return q / (q - 1.0)


def profile_value(q: float, t):
    """Closed form f_p(F_p^{-1}(t)) via the inverse regularized upper gamma."""
    p = conjugate(q)
    t = np.asarray(t, dtype=float)
    s = np.minimum(t, 1.0 - t)
    Zp = 2.0 * gamma(1.0 + 1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        xp = gammainccinv(1.0 / p, np.clip(2.0 * s, 0.0, 1.0))
        out = np.where(s > 0, np.exp(-xp) / Zp, 0.0)
    return float(out) if out.ndim == 0 else out


def reference_G(q: float, t):
    """t -> s (log 1/s)^{1/q} with s = min(t, 1 - t)."""
    t = np.asarray(t, dtype=float)
    s = np.minimum(t, 1.0 - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, s * np.log(1.0 / np.where(s > 0, s, 1.0)) ** (1.0 / q), 0.0)


@dataclass
class ProfileTable:
    q: float
    p: float
    t: np.ndarray
    values: np.ndarray
    Z: float
    L_q: float = float("nan")
    meta: dict = field(default_factory=dict)

    def G(self, t):
        return reference_G(self.q, t)

    def __call__(self, t):
        """Interpolate the table (log-linear in t on each half)."""
        t = np.asarray(t, dtype=float)
        s = np.minimum(t, 1.0 - t)
        half = self.t <= 0.5
        th, vh = self.t[half], self.values[half]
        with np.errstate(divide="ignore"):
            out = np.interp(np.log(np.maximum(s, 1e-300)), np.log(th), vh / th) * s
        out = np.where(s > 0, out, 0.0)
        return float(out) if out.ndim == 0 else out

    def symmetry_residual(self) -> float:
        mirror = self(1.0 - self.t)
        return float(np.max(np.abs(mirror - self.values)))


def _density(p, Z):
    return lambda x: math.exp(-abs(x) ** p) / Z


def profile_grid(grid_size: int, t_min: float = 1e-10) -> np.ndarray:
    """Symmetric grid on (0, 1): geometric near the ends, uniform in the middle."""
    k = max(4, grid_size // 4)
    left = np.concatenate([np.geomspace(t_min, 0.25, k, endpoint=False), np.linspace(0.25, 0.5, k)])
    return np.concatenate([left, 1.0 - left[::-1][1:]])


def profile_Uq(q: float, grid_size: int = 512, tol: float = 1e-12, t_min: float = 1e-10) -> ProfileTable:
    """Tabulate U_q by adaptive quadrature of the density and CDF inversion.

    On the lower half, ``x >= 0`` solves ``T(x) = t`` for the tail mass
    ``T(x) = int_x^inf f_p``; bisection keeps a bracket while Newton steps
    (``T' = -f_p``) do the work. Values on the upper half are mirrored.
    """
    p = conjugate(q)
    Zq, zerr = quad(lambda x: math.exp(-x ** p), 0, np.inf, epsabs=1e-14, epsrel=1e-13)
    Z = 2 * Zq
    if zerr > 1e-10:
        raise SolverError(f"normalizing quadrature did not converge (err={zerr:.2g})")
    f = _density(p, Z)

    def tail(x):
        val, err = quad(f, x, np.inf, epsabs=1e-300, epsrel=1e-13, limit=200)
        if err > 1e-9 * max(val, 1e-300) + 1e-300:
            raise SolverError(f"tail quadrature did not converge at x={x}")
        return val

    t = profile_grid(grid_size, t_min)
    lower = t <= 0.5
    vals = np.empty(t.size)
    xs = np.empty(t.size)
    for i in np.nonzero(lower)[0]:
        target = t[i]
        if target == 0.5:
            x = 0.0
        else:
            lo, hi = 0.0, 1.0
            while tail(hi) > target:
                hi *= 2.0
            x = min(hi, max(lo, (math.log(1 / (2 * target))) ** (1 / p)))
            for _ in range(200):
                T = tail(x)
                r = T - target
                if abs(r) <= tol * target:
                    break
                if r > 0:
                    lo = x
                else:
                    hi = x
                xn = x + r / f(x)
                x = xn if lo < xn < hi else 0.5 * (lo + hi)
            else:
                raise SolverError(f"CDF inversion failed at t={target}")
        xs[i] = x
        vals[i] = f(x)
    # the grid is left + mirrored(left without 1/2), so the upper half is a reversal
    nl = int(lower.sum())
    vals[nl:] = vals[:nl][::-1][1:]
    xs[nl:] = -xs[:nl][::-1][1:]
    table = ProfileTable(q, p, t, vals, Z, meta={"x": xs, "t_min": t_min, "tol": tol})
    table.L_q = check_q_equivalence(table)
    return table


def check_q_equivalence(pt: ProfileTable) -> float:
    """Smallest L with G/L <= U_q <= L G on the table grid."""
    G = pt.G(pt.t)
    ok = (G > 0) & (pt.values > 0)
    r = pt.values[ok] / G[ok]
    return float(max(r.max(), (1.0 / r).max()))


def profile_dominance(q: float, t=None) -> float:
    """max over the grid of U_2 / U_q (finite for q <= 2)."""
    if t is None:
        t = profile_grid(512)
    return float(np.max(profile_value(2.0, t) / profile_value(q, t)))
