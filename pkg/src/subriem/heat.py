"""Horizontal Brownian motion, the heat semigroup by Monte Carlo, and heat-kernel comparisons.

The generator is the full sub-Laplacian sum X_i^2, so horizontal
increments over a step dt are sqrt(2 dt) standard normals. Paths are
built by composing increments with the group law; the central
coordinate then carries the discrete Levy-area sums exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._stats import Batcher, Estimate, N_BATCHES, batch_labels, stack_max
from .distance import distance_arrays, distance_features
from .errors import DomainError, NumericError
from .functionals.corpus import FunctionCorpus, dilate_corpus
from .htype import GroupPoint, HTypeStructure, ScalarField, horizontal_gradient_arrays, mul_arrays
from .reports import FunctionResult, InequalityReport, Kind, Status

MIN_STEPS = 64
PATH_BLOCK = 4096
N_SE = 3.0


@dataclass(frozen=True)
class PathConfig:
    t: float = 1.0
    n_steps: int = 256
    n_paths: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not self.t > 0:
            raise DomainError("t must be positive")
        if self.n_steps < MIN_STEPS:
            raise DomainError(f"n_steps must be at least {MIN_STEPS}")
        if self.n_paths < N_BATCHES:
            raise DomainError(f"n_paths must be at least {N_BATCHES}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def dt(self) -> float:
        return self.t / self.n_steps

    def to_dict(self) -> dict:
        return {"t": self.t, "n_steps": self.n_steps, "n_paths": self.n_paths, "seed": int(self.seed),
                "dt": self.dt}


@dataclass(frozen=True, eq=False)
class EndpointSample:
    structure: HTypeStructure
    points: np.ndarray
    base: GroupPoint
    t: float
    config: Optional[PathConfig] = None

    def __len__(self):
        return self.points.shape[0]

    def group_points(self) -> List[GroupPoint]:
        return [GroupPoint.from_array(self.structure, row) for row in self.points]

    def batcher(self) -> Batcher:
        return Batcher(batch_labels(len(self)), None)


def _step(J, X, dW, m):
    """X <- X . (dW, 0) in place."""
    if J.shape[0]:
        X[:, m:] += 0.5 * np.einsum("kij,bj,bi->bk", J, X[:, :m], dW)
    X[:, :m] += dW


def _simulate_levels(structure: HTypeStructure, base: np.ndarray, cfg: PathConfig, levels: int) -> List[np.ndarray]:
    """Endpoints at n_steps * 2^j (j = 0..levels-1), coupled through shared fine increments."""
    m = structure.m
    J = structure.J
    fine = cfg.n_steps * 2 ** (levels - 1)
    dt = cfg.t / fine
    sd = math.sqrt(2.0 * dt)
    n_blocks = -(-cfg.n_paths // PATH_BLOCK)
    seeds = np.random.SeedSequence(int(cfg.seed)).spawn(n_blocks)
    outs = [np.empty((cfg.n_paths, structure.dim)) for _ in range(levels)]
    for bi in range(n_blocks):
        rng = np.random.default_rng(seeds[bi])
        lo = bi * PATH_BLOCK
        B = min(PATH_BLOCK, cfg.n_paths - lo)
        # level j uses 2^(levels-1-j) fine increments per step
        states = [np.tile(base, (B, 1)) for _ in range(levels)]
        accs = [np.zeros((B, m)) for _ in range(levels)]
        for k in range(fine):
            dW = sd * rng.standard_normal((B, m))
            for j in range(levels):
                group = 2 ** (levels - 1 - j)
                if group == 1:
                    _step(J, states[j], dW, m)
                    continue
                accs[j] += dW
                if (k + 1) % group == 0:
                    _step(J, states[j], accs[j], m)
                    accs[j][:] = 0.0
        for j in range(levels):
            outs[j][lo:lo + B] = states[j]
    return outs


def simulate_horizontal_bm(base: GroupPoint, cfg: PathConfig) -> EndpointSample:
    """Endpoints of horizontal Brownian paths from ``base`` at time ``cfg.t``.

    Paths run in blocks of 4096, each with its own child seed, so the
    output depends only on ``(base, cfg)``.
    """
    S = base.structure
    pts = _simulate_levels(S, base.as_array(), cfg, 1)[0]
    pts.setflags(write=False)
    return EndpointSample(S, pts, base, cfg.t, cfg)


def _values(f: ScalarField, P) -> np.ndarray:
    v = np.asarray(f.eval(P), dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{f.name} is not finite at some endpoint")
    return v


def heat_semigroup_apply(f: ScalarField, base: GroupPoint, cfg: PathConfig,
                         sample: Optional[EndpointSample] = None) -> Estimate:
    """P_t f(base) as a path average; unpacks as (mean, se)."""
    es = sample if sample is not None else simulate_horizontal_bm(base, cfg)
    return es.batcher().mean(_values(f, es.points))


def weak_order(f: ScalarField, base: GroupPoint, cfg: PathConfig, levels: int = 3) -> Tuple[List[Estimate], Estimate]:
    """Successive level differences of P_t f and the fitted weak order.

    Levels use n_steps, 2 n_steps, ... with shared fine increments, so the
    differences are small-variance. The order is log2 of the ratio of
    consecutive differences (averaged when levels > 3).
    """
    if levels < 3:
        raise DomainError("need at least three levels")
    outs = _simulate_levels(base.structure, base.as_array(), cfg, levels)
    b = Batcher(batch_labels(cfg.n_paths), None)
    vals = [_values(f, P) for P in outs]
    diffs = [b.mean(vals[j] - vals[j + 1]) for j in range(levels - 1)]
    ords = [Estimate.apply(lambda a, c: math.log2(abs(a) / abs(c)) if c != 0 else float("nan"), diffs[j], diffs[j + 1])
            for j in range(levels - 2)]
    order = ords[0]
    for o in ords[1:]:
        order = order + o
    return diffs, order / len(ords)


# -- gradient bound ----------------------------------------------------------------

def _fd_gradient(structure, f, B, h) -> Tuple[np.ndarray, ...]:
    """Per-path central differences of f(h e_i . B) for i = 1..m (common random numbers)."""
    comps = []
    for i in range(structure.m):
        e = np.zeros(structure.dim)
        e[i] = h
        fp = _values(f, mul_arrays(structure, e, B))
        fm = _values(f, mul_arrays(structure, -e, B))
        comps.append((fp - fm) / (2 * h))
    return tuple(comps)


def verify_semigroup_gradient_bound(corpus: FunctionCorpus, t: float, cfg: PathConfig,
                                    base: GroupPoint, dilate: bool = True, h_rel: float = 1e-4,
                                    sample: Optional[EndpointSample] = None) -> InequalityReport:
    """|grad P_t f|(base) <= C_1(t) P_t|grad f|(base) over a corpus.

    The left side differentiates the base point along each horizontal
    direction with common random numbers. With ``dilate`` the corpus is
    replaced by f o delta_{1/sqrt t}, which makes the ratio law
    t-independent; comparing C_1 across t then tests the scheme.
    """
    S = base.structure
    cfg = replace(cfg, t=float(t))
    es = sample if sample is not None else simulate_horizontal_bm(GroupPoint.identity(S), cfg)
    B = es.points
    if not np.all(base.as_array() == 0):
        B = mul_arrays(S, base.as_array(), B)
    work = dilate_corpus(corpus, S, math.sqrt(t)) if dilate else corpus
    h = h_rel * math.sqrt(t)
    bt = es.batcher()
    rep = InequalityReport(Kind.HEAT_GRADIENT, corpus_id=work.corpus_id, n_eff=float(len(es)))
    rep.details.update(t=float(t), path_config=cfg.to_dict(), dilated=dilate, fd_step=h,
                       scope="constants fitted over a finite corpus")
    ratios = []
    for f in work:
        vals = _values(f, B)
        if np.ptp(vals) == 0:
            rep.excluded.append(f.name)
            continue
        comps = [bt.mean(c) for c in _fd_gradient(S, f, B, h)]
        num = Estimate.apply(lambda *c: math.sqrt(sum(x * x for x in c)), *comps)
        g = horizontal_gradient_arrays(S, f, B)
        den = bt.mean(np.sqrt(np.sum(g * g, axis=1)))
        if not den.value > N_SE * den.se:
            if num.value > N_SE * num.se:
                rep.violations.append(f.name)
                rep.warnings.append(f"{f.name}: P_t|grad f| consistent with 0 but |grad P_t f| is not; review")
            else:
                rep.excluded.append(f.name)
            rep.per_function.append(FunctionResult(f.name, num, {"P_t_grad": den}, None, "denominator ~ 0"))
            continue
        ratio = num / den
        rep.per_function.append(FunctionResult(f.name, num, {"P_t_grad": den}, ratio))
        ratios.append(ratio)
    if ratios:
        rep.fitted_constants["C1"] = stack_max(ratios)
    return rep.finalize()


def gradient_bound_across_t(corpus: FunctionCorpus, ts: Sequence[float], cfg: PathConfig, base: GroupPoint,
                            **kw) -> Tuple[Dict[float, InequalityReport], bool]:
    """Fit C_1(t) at each t; the bool says every pair agrees within 3 combined SE."""
    reps = {float(t): verify_semigroup_gradient_bound(corpus, t, cfg, base, **kw) for t in ts}
    cs = [r.fitted_constants.get("C1") for r in reps.values()]
    ok = all(c is not None and math.isfinite(c.value) for c in cs)
    if ok:
        for i in range(len(cs)):
            for j in range(i + 1, len(cs)):
                if abs(cs[i].value - cs[j].value) > N_SE * math.hypot(cs[i].se, cs[j].se):
                    ok = False
    return reps, ok


# -- heat kernel comparison expressions ------------------------------------------------

@dataclass(frozen=True)
class KernelExponents:
    """Exponents (a, b) of (1 + d^a) / (1 + (|x| d)^b) e^{-d^2/4}."""

    a: float
    b: float
    mapping: str = "explicit"


def kernel_exponents(structure: HTypeStructure, mapping: str = "eldredge") -> KernelExponents:
    """Exponent pair for a structure.

    ``eldredge`` reads the cited bound on R^{2k} x R^l (k = m/2, l = n):
    a = 2k - l - 1 = m - n - 1 and b = k - 1/2 = (m - 1)/2. ``literal``
    substitutes this package's (m, n) for the source's symbols:
    a = 2m - n - 1 and b = m - 1/2.
    """
    m, n = structure.m, structure.n
    if mapping == "eldredge":
        return KernelExponents(m - n - 1, (m - 1) / 2.0, mapping)
    if mapping == "literal":
        return KernelExponents(2 * m - n - 1, m - 0.5, mapping)
    raise DomainError(f"unknown exponent mapping {mapping!r}")


def _pow(x, a):
    # d^0 is the constant 1, including at d = 0
    return np.ones_like(x) if a == 0 else x ** a


def heat_kernel_expression_arrays(structure: HTypeStructure, P, exps: Optional[KernelExponents] = None) -> np.ndarray:
    exps = exps or kernel_exponents(structure)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    d = distance_arrays(structure, P)
    r = np.linalg.norm(P[:, : structure.m], axis=1)
    return (1 + _pow(d, exps.a)) / (1 + _pow(r * d, exps.b)) * np.exp(-d * d / 4)


def eval_heat_kernel_comparison(g: GroupPoint, C: float = 1.0,
                                exps: Optional[KernelExponents] = None) -> Tuple[float, float]:
    """(comparison expression at g, gradient envelope C (1 + d(g)))."""
    S = g.structure
    val = float(heat_kernel_expression_arrays(S, g.as_array()[None], exps)[0])
    d = float(distance_arrays(S, g.as_array()[None])[0])
    return val, C * (1.0 + d)


def unit_ball_volume(structure: HTypeStructure, n: int = 2 ** 18, seed: int = 0) -> float:
    """Lebesgue volume of the CC unit ball, from Sobol points in |x| <= 1, |z| <= 1/4."""
    from scipy.stats import qmc
    half = np.array([1.0] * structure.m + [0.25] * structure.n)
    u = qmc.Sobol(structure.dim, scramble=True, seed=seed).random(n)
    P = (2 * u - 1) * half
    return float(np.mean(distance_arrays(structure, P) <= 1.0) * np.prod(2 * half))


def kde_sandwich(es: EndpointSample, grid: np.ndarray, bandwidth: float = 0.5, min_count: int = 30,
                 exps: Optional[KernelExponents] = None) -> dict:
    """Ball-kernel density of the endpoint law against the comparison expression.

    p(g) ~ #{X : d(g^{-1} X) < h} / (N |B_h|), |B_h| = |B_1| h^Q. Grid
    points with fewer than ``min_count`` hits are skipped. Returns the
    fitted kappa_1 = min ratio and kappa_2 = max ratio.
    """
    S = es.structure
    if abs(es.t - 1.0) > 1e-12:
        raise DomainError("the comparison expression is for t = 1")
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    vol = unit_ball_volume(S) * bandwidth ** S.Q
    N = len(es)
    from .htype import inverse_arrays
    dens, expr, kept = [], [], []
    for g in grid:
        rel = mul_arrays(S, inverse_arrays(S, g), es.points)
        cnt = int(np.sum(distance_arrays(S, rel) < bandwidth))
        if cnt < min_count:
            continue
        dens.append(cnt / (N * vol))
        expr.append(float(heat_kernel_expression_arrays(S, g[None], exps)[0]))
        kept.append(g.tolist())
    if not kept:
        raise NumericError("no grid point has enough endpoint mass")
    r = np.array(dens) / np.array(expr)
    return {"kappa_1": float(r.min()), "kappa_2": float(r.max()), "ratios": r.tolist(), "grid": kept,
            "density": dens, "expression": expr, "bandwidth": bandwidth}


def gaussian_threshold(es: EndpointSample, q_lo: float = 0.9, q_hi: float = 0.999) -> float:
    """lambda* from the tail slope of log P(d > r) against r^2.

    E e^{lambda d^2} is finite below lambda* and diverges above; for the
    time-1 kernel the slope is about -1/4.
    """
    d = np.sort(distance_features(es.structure, es.points)[0])
    N = d.size
    r = d[int(q_lo * N):int(q_hi * N)]
    surv = 1.0 - (np.arange(int(q_lo * N), int(q_hi * N)) + 0.5) / N
    A = np.stack([r * r, np.log(np.maximum(r, 1e-300)), np.ones_like(r)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(surv), rcond=None)
    return float(-coef[0])
