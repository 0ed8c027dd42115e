"""Carnot-Caratheodory distance from the identity on H-type groups.

For H-type groups the distance depends only on ``r = |x|`` and
``zeta = |z|``. A geodesic reaching ``(x, z)`` is a planar circular arc
in the horizontal layer, described by an arc parameter ``phi`` in
``[0, pi)`` that solves

    F(phi) := (phi - sin(phi) cos(phi)) / sin(phi)^2 = 4 zeta / r^2,

after which ``d = r phi / sin(phi)``. ``F`` is increasing, so the root is
bracketed on ``(0, pi)``.
"""
from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import DomainError, InfeasibleError, SolverError, UnsupportedStructureError
from .htype import (GroupPoint, HTypeStructure, ScalarField, as_points_array,
                    horizontal_gradient_arrays, kaplan_norm_arrays, sub_laplacian_arrays)
from ._stats import Estimate
from .reports import FunctionResult, InequalityReport, Kind, Status

AXIS_BAND = 1e-8
DEFAULT_TOL = 1e-12
MAX_ITER = 200
HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class GeodesicSolution:
    distance: float
    arc_parameter: float
    iterations: int
    residual: float


# -- scalar shooting equation ------------------------------------------------

def _num_series(phi):
    """phi - sin(2 phi)/2 by its Taylor series (small phi)."""
    out = np.zeros_like(phi)
    p2 = phi * phi
    term_pow = phi * p2  # phi^(2k+1), starting at k = 1
    for k in range(1, 9):
        coef = (-1) ** (k + 1) * 2.0 ** (2 * k) / math.factorial(2 * k + 1)
        out += coef * term_pow
        term_pow = term_pow * p2
    return out


def _num_lower(phi):
    small = phi < 0.1
    direct = phi - 0.5 * np.sin(2 * phi)
    if np.any(small):
        direct = np.where(small, _num_series(np.where(small, phi, 0.0)), direct)
    return direct


def _F_lower(phi):
    s = np.sin(phi)
    num = _num_lower(phi)
    F = num / (s * s)
    dF = 2.0 - 2.0 * np.cos(phi) * num / (s * s * s)
    return F, dF, num


def _F_upper(eps):
    # phi = pi - eps; increasing in phi means decreasing in eps
    s = np.sin(eps)
    num = math.pi - eps + s * np.cos(eps)
    F = num / (s * s)
    dF = -(2.0 + 2.0 * np.cos(eps) * num / (s * s * s))
    return F, dF, num


def _newton_bracketed(fun, target, lo, hi, t0, increasing, tol, max_iter):
    """Vectorized safeguarded Newton on a monotone scalar function."""
    t = np.clip(t0, lo + 0.25 * (hi - lo) * 1e-6, hi)
    lo, hi = lo.copy(), hi.copy()
    active = np.ones(t.shape, bool)
    resid = np.full(t.shape, np.inf)
    iters = np.zeros(t.shape, int)
    for it in range(max_iter):
        F, dF, _ = fun(t)
        r = F - target
        resid = np.abs(r) / np.maximum(1.0, target)
        done = (resid <= tol) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(t)))
        active &= ~done
        if not active.any():
            break
        iters += active
        above = (r > 0) == increasing
        hi = np.where(active & above, t, hi)
        lo = np.where(active & ~above, t, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            tn = t - r / dF
        bad = ~np.isfinite(tn) | (tn <= lo) | (tn >= hi)
        tn = np.where(bad, 0.5 * (lo + hi), tn)
        t = np.where(active, tn, t)
    F, _, num = fun(t)
    resid = np.abs(F - target) / np.maximum(1.0, target)
    return t, resid, iters, num, lo, hi


def _solve_phi(r, zeta, tol=DEFAULT_TOL, max_iter=MAX_ITER):
    """Arc parameter and distance for arrays of (r, zeta); axis handled separately."""
    r = np.asarray(r, float)
    zeta = np.asarray(zeta, float)
    N = r.size
    phi = np.zeros(N)
    d = r.copy()
    resid = np.zeros(N)
    iters = np.zeros(N, int)
    axis = (zeta > 0) & (r <= AXIS_BAND * np.sqrt(zeta))
    d[axis] = np.sqrt(4 * math.pi * zeta[axis])
    phi[axis] = math.pi
    gen = (zeta > 0) & ~axis
    if gen.any():
        rg, zg = r[gen], zeta[gen]
        c = 4.0 * zg / (rg * rg)
        lower = c <= HALF_PI
        ph = np.empty(c.size)
        dd = np.empty(c.size)
        res = np.empty(c.size)
        it = np.empty(c.size, int)
        if lower.any():
            cl = c[lower]
            lo = np.zeros(cl.size)
            hi = np.full(cl.size, HALF_PI)
            t, rs, its, num, blo, bhi = _newton_bracketed(_F_lower, cl, lo, hi, np.minimum(1.5 * cl, HALF_PI),
                                                          True, tol, max_iter)
            ph[lower] = t
            s = np.sin(t)
            ratio = np.where(t > 1e-8, t / np.where(s == 0, 1.0, s), 1.0 + t * t / 6)
            dd[lower] = rg[lower] * ratio
            res[lower] = rs
            it[lower] = its
            if np.any(rs > tol):
                raise SolverError("arc-parameter solve did not converge", state={"lo": blo, "hi": bhi})
        up = ~lower
        if up.any():
            cu = c[up]
            lo = np.zeros(cu.size)
            hi = np.full(cu.size, HALF_PI)
            t0 = np.minimum(np.sqrt(math.pi / cu), 0.999 * HALF_PI)
            e, rs, its, num, blo, bhi = _newton_bracketed(_F_upper, cu, lo, hi, t0, False, tol, max_iter)
            p = math.pi - e
            ph[up] = p
            dd[up] = 2 * p * np.sqrt(zg[up] / num)
            res[up] = rs
            it[up] = its
            if np.any(rs > tol):
                raise SolverError("arc-parameter solve did not converge", state={"lo": blo, "hi": bhi})
        phi[gen], d[gen], resid[gen], iters[gen] = ph, dd, res, it
    return d, phi, resid, iters


def _require_htype(structure: HTypeStructure):
    if not structure.is_htype:
        raise UnsupportedStructureError("CC distance solver requires the H-type property")


def _split(structure, P):
    m = structure.m
    r = np.sqrt(np.sum(P[:, :m] ** 2, axis=1))
    zeta = np.sqrt(np.sum(P[:, m:] ** 2, axis=1)) if structure.n else np.zeros(P.shape[0])
    return r, zeta


def distance_arrays(structure: HTypeStructure, P, tol: float = DEFAULT_TOL, return_all: bool = False):
    """Vectorized distance for rows of ``P``."""
    _require_htype(structure)
    if not tol > 0:
        raise DomainError("tol must be positive")
    P = as_points_array(structure, P)
    r, zeta = _split(structure, P)
    d, phi, resid, iters = _solve_phi(r, zeta, tol)
    if return_all:
        return d, phi, resid, iters
    return d


def distance_and_grad_arrays(structure: HTypeStructure, P):
    """Distance and its Euclidean partials (zero on the center axis)."""
    _require_htype(structure)
    P = as_points_array(structure, P)
    m = structure.m
    r, zeta = _split(structure, P)
    d, phi, _, _ = _solve_phi(r, zeta)
    grad = np.zeros_like(P)
    off = r > 0
    on_axis = phi >= math.pi
    # d_r = cos(phi), d_zeta = 2 sin(phi) / r = sqrt(num / zeta) on the upper branch
    d_r = np.where(off & ~on_axis, np.cos(phi), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = phi > HALF_PI
        num_up = math.pi - (math.pi - phi) + np.sin(math.pi - phi) * np.cos(math.pi - phi)
        d_z_up = np.sqrt(np.where(zeta > 0, num_up / zeta, 0.0))
        d_z_lo = np.where(off, 2 * np.sin(phi) / np.where(off, r, 1.0), 0.0)
        d_z = np.where(upper, d_z_up, d_z_lo)
        d_z = np.where(on_axis, np.sqrt(math.pi / np.where(zeta > 0, zeta, 1.0)), d_z)
        grad[:, :m] = np.where(off[:, None], d_r[:, None] * P[:, :m] / np.where(off, r, 1.0)[:, None], 0.0)
        if structure.n:
            zpos = zeta > 0
            grad[:, m:] = np.where(zpos[:, None],
                                   d_z[:, None] * P[:, m:] / np.where(zpos, zeta, 1.0)[:, None], 0.0)
    return d, grad


def cc_distance(g: GroupPoint, tol: float = DEFAULT_TOL) -> GeodesicSolution:
    d, phi, resid, iters = distance_arrays(g.structure, g.as_array()[None], tol, return_all=True)
    return GeodesicSolution(float(d[0]), float(phi[0]), int(iters[0]), float(resid[0]))


# -- memoized distance features ---------------------------------------------

_CACHE: "OrderedDict[tuple, tuple]" = OrderedDict()
_CACHE_SIZE = 8


def _digest(P: np.ndarray) -> bytes:
    return hashlib.blake2b(np.ascontiguousarray(P).tobytes(), digest_size=16).digest()


def distance_features(structure: HTypeStructure, P) -> tuple:
    """(d, Euclidean grad of d) with a small content-addressed cache."""
    P = as_points_array(structure, P)
    key = (structure.key(), P.shape, _digest(P))
    hit = _CACHE.get(key)
    if hit is not None:
        _CACHE.move_to_end(key)
        return hit
    out = distance_and_grad_arrays(structure, P)
    _CACHE[key] = out
    if len(_CACHE) > _CACHE_SIZE:
        _CACHE.popitem(last=False)
    return out


def distance_field(structure: HTypeStructure, exact_grad: bool = True) -> ScalarField:
    """The map g -> d(g) as a :class:`ScalarField` (1-Lipschitz)."""
    _require_htype(structure)

    def ev(P):
        return distance_features(structure, P)[0]

    def gr(P):
        return distance_features(structure, P)[1]

    return ScalarField(ev, gr if exact_grad else None, lipschitz_hint=1.0, name="d")


# -- direct transcription oracle ---------------------------------------------

@dataclass(frozen=True)
class TranscriptionConfig:
    segments: int = 128
    max_iter: int = 60
    step_tol: float = 1e-9
    n_starts: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.segments < 8:
            raise DomainError("segments must be >= 8")
        if self.max_iter < 1 or not self.step_tol > 0:
            raise DomainError("max_iter and step_tol must be positive")


@dataclass
class OracleResult:
    length: float
    levels: List[int]
    lengths: List[float]
    extrapolated: float
    order: float
    feasibility: float


class _Transcription:
    """Piecewise-constant controls v_k (k < N) with v = u / N."""

    def __init__(self, structure: HTypeStructure, target: np.ndarray, N: int):
        self.s = structure
        self.N = N
        self.m = structure.m
        self.target = target

    def unpack(self, v):
        return v.reshape(self.N, self.m) / self.N

    def endpoint(self, v):
        V = self.unpack(v)
        X = np.cumsum(V, axis=0) - V
        z = 0.5 * np.einsum("kij,tj,ti->k", self.s.J, X, V)
        return np.concatenate([V.sum(axis=0), z])

    def cons(self, v):
        return self.endpoint(v) - self.target

    def jac(self, v):
        N, m, n = self.N, self.m, self.s.n
        V = self.unpack(v)
        X = np.cumsum(V, axis=0) - V
        after = V[::-1].cumsum(axis=0)[::-1] - V
        Jm = np.zeros((m + n, N * m))
        for j in range(m):
            Jm[j, j::m] = 1.0 / N
        for k in range(n):
            Jk = self.s.J[k]
            g = 0.5 * X @ Jk.T - 0.5 * after @ Jk.T
            Jm[m + k] = g.ravel() / N
        return Jm

    def project(self, v, tol=1e-13, steps=10):
        for _ in range(steps):
            c = self.cons(v)
            if np.max(np.abs(c)) < tol:
                break
            A = self.jac(v)
            try:
                v = v - A.T @ np.linalg.solve(A @ A.T, c)
            except np.linalg.LinAlgError:
                break
        return v

    def length(self, v):
        return float(np.sum(np.linalg.norm(self.unpack(v), axis=1)))

    def hessians(self):
        """Constant Hessians in v of the center components of the endpoint."""
        N, m = self.N, self.m
        L = np.tril(np.ones((N, N)), -1)
        out = []
        for Jk in self.s.J:
            M = 0.5 * np.kron(L, Jk) / N ** 2
            out.append(M + M.T)
        return out

    def newton(self, v, steps=30, tol=1e-13):
        """Newton iterations on the KKT system of min |v|^2 / N subject to the endpoint."""
        H = self.hessians()
        nv = v.size
        A = self.jac(v)
        # least-squares multipliers as the starting guess
        nu = np.linalg.lstsq(A.T, 2 * v / self.N, rcond=None)[0]
        for _ in range(steps):
            A = self.jac(v)
            c = self.cons(v)
            g = 2 * v / self.N - A.T @ nu
            if max(np.max(np.abs(g)), np.max(np.abs(c))) < tol:
                break
            W = 2 * np.eye(nv) / self.N
            for k, Hk in enumerate(H):
                W -= nu[self.m + k] * Hk
            K = np.block([[W, -A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
            try:
                step = np.linalg.solve(K, -np.concatenate([g, c]))
            except np.linalg.LinAlgError:
                break
            v = v + step[:nv]
            nu = nu + step[nv:]
        return v

    def solve(self, v0, max_iter):
        res = minimize(lambda v: float(v @ v) / self.N, v0, jac=lambda v: 2 * v / self.N,
                       constraints=[{"type": "eq", "fun": self.cons, "jac": self.jac}],
                       method="SLSQP", options={"maxiter": max_iter, "ftol": 1e-15})
        v = self.project(res.x)
        viol = float(np.max(np.abs(self.cons(v))))
        # SLSQP crawls along nearly flat directions (paths close to the center axis)
        w = self.project(self.newton(v))
        wv = float(np.max(np.abs(self.cons(w))))
        if np.all(np.isfinite(w)) and wv <= max(viol, 1e-12) and self.length(w) < self.length(v):
            return w, wv
        return v, viol


def _levels(segments: int) -> List[int]:
    base = segments
    while base > 32 and base % 2 == 0:
        base //= 2
    levels = [base]
    while levels[-1] < segments:
        levels.append(levels[-1] * 2)
    return levels


def cc_distance_oracle(g: GroupPoint, cfg: TranscriptionConfig = TranscriptionConfig(), full: bool = False):
    """Length of the best piecewise-constant horizontal path from e to ``g``.

    A multistart local search runs on a coarse control grid, then the best
    path is refined by doubling the segment count up to ``cfg.segments``.
    The returned length upper-bounds the distance (up to ``step_tol``
    feasibility) and is non-increasing along the refinement levels.
    """
    s = g.structure
    target = g.as_array()
    if not np.any(target):
        res = OracleResult(0.0, [cfg.segments], [0.0], 0.0, float("nan"), 0.0)
        return res if full else 0.0
    levels = _levels(cfg.segments)
    rng = np.random.default_rng(cfg.seed)
    N0 = levels[0]
    prob = _Transcription(s, target, N0)
    scale = 2.0 * max(float(kaplan_norm_arrays(s, target)), 1e-6)
    tgrid = (np.arange(N0) + 0.5) / N0
    starts = [np.tile(g.x, (N0, 1)).ravel() + 1e-3 * scale * rng.standard_normal(N0 * s.m)]
    for _ in range(cfg.n_starts):
        a = rng.standard_normal((3, s.m)) * scale
        v = (g.x[None] + a[0] * np.cos(2 * np.pi * tgrid)[:, None]
             + a[1] * np.sin(2 * np.pi * tgrid)[:, None] + a[2] * np.cos(4 * np.pi * tgrid)[:, None])
        starts.append(v.ravel())
    best_v, best_len, feas = None, np.inf, np.inf
    extra = 0
    k = 0
    while k < len(starts):
        v, viol = prob.solve(starts[k], cfg.max_iter)
        if viol <= cfg.step_tol:
            L = prob.length(v)
            if L < best_len:
                best_v, best_len, feas = v, L, viol
        k += 1
        if k == len(starts) and best_v is None and extra < 16:
            a = rng.standard_normal((3, s.m)) * scale
            v = (g.x[None] + a[0] * np.cos(2 * np.pi * tgrid)[:, None] + a[1] * np.sin(2 * np.pi * tgrid)[:, None])
            starts.append(v.ravel())
            extra += 1
    if best_v is None:
        raise InfeasibleError("no multistart run met the endpoint constraint within step_tol")
    lengths = [best_len]
    cur = best_v
    for N in levels[1:]:
        prob = _Transcription(s, target, N)
        warm = np.repeat(cur.reshape(-1, s.m), 2, axis=0).ravel()
        warm_len = prob.length(warm)
        v, viol = prob.solve(warm, cfg.max_iter)
        L = prob.length(v) if viol <= cfg.step_tol else np.inf
        if L < warm_len:
            cur, feas = v, viol
        else:
            L = warm_len
            cur = warm
        lengths.append(L)
    order = float("nan")
    if len(lengths) >= 3:
        a, b, c = lengths[-3:]
        if (b - c) > 0 and (a - b) > 0:
            order = math.log2((a - b) / (b - c))
    if len(lengths) >= 2:
        extrap = (4 * lengths[-1] - lengths[-2]) / 3
    else:
        extrap = lengths[-1]
    res = OracleResult(lengths[-1], levels, lengths, extrap, order, feas)
    return res if full else res.length


# -- Proposition-style conditions on the distance -----------------------------

def calibrate_gauge(structure: HTypeStructure, grid) -> tuple:
    """Return (kappa, kappa_prime) with N/kappa <= d <= kappa_prime * N on ``grid``."""
    P = as_points_array(structure, grid)
    d = distance_arrays(structure, P)
    N = kaplan_norm_arrays(structure, P)
    ok = d > 0
    return float(np.max(N[ok] / d[ok])), float(np.max(d[ok] / N[ok]))


def check_distance_conditions(spec, grid, axis_band: float = 1e-3) -> InequalityReport:
    """Empirical |grad d| and the Laplacian bound of d on a point grid.

    ``sigma`` is the max of |grad d|; ``(K, eps)`` is the smallest pair (in
    the LP sense) with Lap d <= K + alpha p eps d^(p-1) on points with d >= 1.
    Points within ``axis_band`` of the center axis are skipped.
    """
    structure = spec.structure
    P = as_points_array(structure, grid)
    r, zeta = _split(structure, P)
    skip = (r <= axis_band * np.sqrt(zeta)) | (r == 0)
    rep = InequalityReport(Kind.DISTANCE_CONDITIONS, corpus_id="grid", n_eff=float((~skip).sum()))
    if skip.any():
        rep.warnings.append(f"skipped {int(skip.sum())} grid points on or near the center axis")
    P = P[~skip]
    if P.shape[0] == 0:
        rep.status = Status.INCONCLUSIVE
        return rep
    f = distance_field(structure, exact_grad=False)
    grad = horizontal_gradient_arrays(structure, f, P)
    glen = np.sqrt(np.sum(grad ** 2, axis=1))
    lap = sub_laplacian_arrays(structure, f, P)
    d = f.eval(P)
    far = d >= 1.0
    K, eps = 0.0, 0.0
    ap = spec.alpha * spec.p
    if far.any():
        w = d[far] ** (spec.p - 1)
        # minimize K + alpha p eps median(w) s.t. K + alpha p eps w_i >= lap_i
        A_ub = -np.column_stack([np.ones(w.size), ap * w])
        res = linprog([1.0, ap * float(np.median(w))], A_ub=A_ub, b_ub=-lap[far],
                      bounds=[(0, None), (0, None)], method="highs")
        if res.status == 0:
            K, eps = map(float, res.x)
        else:
            rep.status = Status.INCONCLUSIVE
            rep.warnings.append(f"LP for (K, eps) failed: {res.message}")
    nb = 32
    rep.fitted_constants = {
        "sigma": Estimate.exact(float(glen.max()), nb),
        "grad_min": Estimate.exact(float(glen.min()), nb),
        "K": Estimate.exact(K, nb),
        "eps": Estimate.exact(eps, nb),
    }
    bad = np.nonzero(glen > 1 + 1e-3)[0]
    rep.violations = [f"grid[{i}]" for i in bad]
    margin = K + ap * eps * d[far] ** (spec.p - 1) - lap[far] if far.any() else np.array([])
    rep.details = {"min_margin": float(margin.min()) if margin.size else None,
                   "n_far": int(far.sum()), "lap_max": float(lap.max()), "lap_min": float(lap.min())}
    return rep.finalize()
