"""Lebesgue-measure baselines: the L^{1+eps} Sobolev bound and L^1 Poincare on balls."""
from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.stats import qmc

from .._stats import Estimate, N_BATCHES, stack_max
from ..distance import distance_features
from ..errors import DomainError, NumericError
from ..htype import HTypeStructure, horizontal_gradient_arrays
from ..reports import FunctionResult, InequalityReport, Kind
from .corpus import FunctionCorpus
from .inequalities import SCOPE, _fit_lp

EDGE_TOL = 1e-10
QUAD_REL_TOL = 5e-3
# nodes per axis by dimension; |grad f| has kinks, so panels stay short
DEFAULT_NODES = {1: 512, 2: 256, 3: 96}


def critical_epsilon(structure: HTypeStructure, override: Optional[float] = None) -> float:
    """1/(Q-1), the exponent for which the fitted a is dilation invariant."""
    if override is not None:
        if not override > 0:
            raise DomainError("epsilon must be positive")
        return float(override)
    Q = structure.Q
    return 0.1 if Q <= 1 else 1.0 / (Q - 1)


def _box(structure: HTypeStructure, box) -> Tuple[float, float]:
    if np.isscalar(box):
        L = float(box)
        return L, L * L
    Lx, Lz = box
    return float(Lx), float(Lz)


def _axis(lo: float, hi: float, q: int, per: int = 4):
    """Composite Gauss-Legendre on [lo, hi], with a panel break at 0 when inside."""
    panels = max(1, q // per)
    nodes, wts = leggauss(per)
    edges = np.linspace(lo, hi, panels + 1)
    if lo < 0 < hi and not np.any(edges == 0):
        edges = np.sort(np.append(edges, 0.0))
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    return (mid[:, None] + half[:, None] * nodes).ravel(), (half[:, None] * wts).ravel()


class _Rule:
    """Quadrature nodes and weights on a coordinate box ``lo <= P <= hi``."""

    def __init__(self, structure: HTypeStructure, lo, hi, q: int, seed: int = 0):
        s = structure
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        self.lo, self.hi = lo, hi
        self.qmc = s.dim > 3
        if not self.qmc:
            axes, ws = [], []
            for i in range(s.dim):
                a, w = _axis(lo[i], hi[i], q)
                axes.append(a)
                ws.append(w)
            self.axes = axes
            mesh = np.meshgrid(*axes, indexing="ij")
            self.P = np.stack([g.ravel() for g in mesh], axis=1)
            W = ws[0]
            for w in ws[1:]:
                W = np.multiply.outer(W, w)
            self.w = W.ravel()
        else:
            n = 2 ** int(math.ceil(math.log2(max(q, 16) ** 3)))
            u = qmc.Sobol(s.dim, scramble=True, seed=seed).random(n)
            self.P = lo + u * (hi - lo)
            self.w = np.full(n, np.prod(hi - lo) / n)

    def integrate(self, v) -> float:
        return float(np.dot(self.w, v))

    def support_box(self, v):
        """Smallest node-aligned box holding every node where ``v != 0``.

        Each side extends to the next node outward, so the true support
        (whose edge lies between nodes) stays inside.
        """
        nz = v != 0
        if not nz.any():
            return None
        shape = tuple(a.size for a in self.axes)
        mask = nz.reshape(shape)
        lo, hi = [], []
        for i, a in enumerate(self.axes):
            other = tuple(j for j in range(len(shape)) if j != i)
            hit = np.nonzero(mask.any(axis=other) if other else mask)[0]
            i0, i1 = hit[0], hit[-1]
            lo.append(a[i0 - 1] if i0 > 0 else a[0])
            hi.append(a[i1 + 1] if i1 + 1 < a.size else a[-1])
        return np.array(lo), np.array(hi)


def _integrals(structure, f, rule: _Rule, eps: float):
    v = np.asarray(f.eval(rule.P), dtype=float)
    g = horizontal_gradient_arrays(structure, f, rule.P)
    gn = np.sqrt(np.sum(g * g, axis=1))
    a = np.abs(v)
    return (rule.integrate(a ** (1 + eps)) ** (1 / (1 + eps)), rule.integrate(gn), rule.integrate(a))


def _rule_for(structure, f, box_rule: _Rule, q: int, seed: int):
    """A rule on the support of ``f`` (grid case) or the whole box (QMC case)."""
    if box_rule.qmc:
        return box_rule
    v = np.asarray(f.eval(box_rule.P), dtype=float)
    sb = box_rule.support_box(v)
    if sb is None:
        return None
    return _Rule(structure, sb[0], sb[1], q, seed)


def _edge_max(structure, f, Lx, Lz, n=9) -> float:
    """max |f| on the faces of the box."""
    s = structure
    t = np.linspace(-1, 1, n)
    mesh = np.meshgrid(*([t] * s.dim), indexing="ij")
    P = np.stack([g.ravel() for g in mesh], axis=1)
    face = np.any(np.abs(P) == 1, axis=1)
    P = P[face] * np.array([Lx] * s.m + [Lz] * s.n)
    return float(np.max(np.abs(f.eval(P)))) if P.size else 0.0


def verify_sobolev_baseline(structure: HTypeStructure, corpus: FunctionCorpus, box: Union[float, Tuple[float, float]],
                            eps: Optional[float] = None, quad_points: Optional[int] = None, seed: int = 0,
                            radii: Sequence[float] = ()) -> InequalityReport:
    """(int |f|^{1+eps})^{1/(1+eps)} <= a int |grad f| + b int |f| over Lebesgue measure.

    ``box`` is the half-width ``L`` (z half-width ``L^2``) or a pair
    ``(Lx, Lz)``. Integrals use composite Gauss-Legendre up to dimension
    3 and scrambled Sobol points beyond; a run at half the nodes must
    agree to 5e-3 relative or :class:`NumericError` is raised. Besides
    (a, b) the report carries ``a_homogeneous`` (b = 0), which is
    dilation invariant at the critical eps. ``radii`` adds an L^1
    Poincare check on CC balls, reported under ``details``.
    """
    eps = critical_epsilon(structure, eps)
    if quad_points is None:
        quad_points = DEFAULT_NODES.get(structure.dim, 32)
    Lx, Lz = _box(structure, box)
    half = np.array([Lx] * structure.m + [Lz] * structure.n)
    box_rule = _Rule(structure, -half, half, quad_points, seed)
    rep = InequalityReport(Kind.SOBOLEV_BASELINE, corpus_id=corpus.corpus_id, n_eff=float(box_rule.P.shape[0]))
    rep.details.update(scope=SCOPE, epsilon=eps, box=[Lx, Lz], nodes=int(box_rule.P.shape[0]))
    rows = []
    for f in corpus:
        if _edge_max(structure, f, Lx, Lz) > EDGE_TOL:
            rep.excluded.append(f.name)
            rep.warnings.append(f"{f.name}: not supported inside the box; excluded")
            continue
        rule = _rule_for(structure, f, box_rule, quad_points, seed)
        if rule is None:
            rep.excluded.append(f.name)
            continue
        fine = _integrals(structure, f, rule, eps)
        if rule.qmc:
            coarse = _Rule(structure, -half, half, max(8, quad_points // 2), seed + 1)
        else:
            coarse = _Rule(structure, rule.lo, rule.hi, max(8, quad_points // 2), seed)
        rough = _integrals(structure, f, coarse, eps)
        for x, y in zip(fine, rough):
            if abs(x - y) > QUAD_REL_TOL * max(abs(x), 1e-300):
                raise NumericError(f"quadrature for {f.name} did not converge ({x:.6g} vs {y:.6g})")
        if fine[2] == 0:
            rep.excluded.append(f.name)
            continue
        errs = [abs(x - y) for x, y in zip(fine, rough)]
        lhs, grad, mass = (Estimate.with_se(x, e) for x, e in zip(fine, errs))
        ratio = lhs / grad if grad.value > 0 else None
        rep.per_function.append(FunctionResult(f.name, lhs, {"grad": grad, "mass": mass}, ratio))
        rows.append((f.name, lhs, grad, mass))
    if rows:
        rep.fitted_constants.update(_fit_lp([r[1] for r in rows], [[r[2], r[3]] for r in rows], ["a", "b"]))
        homog = [r[1] / r[2] for r in rows if r[2].value > 0]
        if homog:
            rep.fitted_constants["a_homogeneous"] = stack_max(homog)
    if radii:
        pb = verify_poincare_ball(structure, corpus, radii, seed=seed)
        rep.details["poincare_ball"] = pb.to_dict()
    return rep.finalize()


def _ball_points(structure: HTypeStructure, r: float, n: int, seed: int):
    """Sobol points of the enclosing box |x| <= r, |z| <= r^2/4 that land in B(r)."""
    s = structure
    half = np.array([r] * s.m + [0.25 * r * r] * s.n)
    u = qmc.Sobol(s.dim, scramble=True, seed=seed).random(n)
    P = (2 * u - 1) * half
    d, _ = distance_features(s, P)
    inside = d <= r
    return P[inside], float(np.prod(2 * half)) / n


def verify_poincare_ball(structure: HTypeStructure, corpus: FunctionCorpus, radii: Sequence[float],
                         n_points: int = 2 ** 16, seed: int = 0) -> InequalityReport:
    """int_B |f - f_B| <= (1/m_r) int_B |grad f| on CC balls B(r) about the identity.

    Uses scrambled Sobol points; the SE is the discrepancy between the
    two halves of the point set. ``inv_m_r`` is reported per radius.
    """
    rep = InequalityReport(Kind.POINCARE_BALL, corpus_id=corpus.corpus_id, n_eff=float(n_points))
    rep.details["scope"] = SCOPE
    per_radius = {}
    for r in radii:
        if not r > 0:
            raise DomainError("radii must be positive")
        P, cell = _ball_points(structure, float(r), n_points, seed)
        if P.shape[0] < 64:
            raise NumericError(f"too few points inside B({r})")
        half = P.shape[0] // 2
        ratios = []
        for f in corpus:
            v = np.asarray(f.eval(P), dtype=float)
            if np.ptp(v) == 0:
                continue
            g = horizontal_gradient_arrays(structure, f, P)
            gn = np.sqrt(np.sum(g * g, axis=1))

            def ratio(idx):
                vv = v[idx]
                gg = gn[idx].mean()
                return np.abs(vv - vv.mean()).mean() / gg if gg > 0 else np.inf

            full = ratio(slice(None))
            halves = [ratio(slice(0, half)), ratio(slice(half, None))]
            est = Estimate.with_se(full, 0.5 * abs(halves[0] - halves[1]), N_BATCHES)
            if not math.isfinite(full):
                rep.warnings.append(f"{f.name}: no gradient mass in B({r:g})")
                continue
            ratios.append(est)
            rep.per_function.append(FunctionResult(f"{f.name}@r={r:g}", est * gn.mean(),
                                                   {"grad": Estimate.exact(float(gn.mean()))}, est))
        if ratios:
            c = stack_max(ratios)
            rep.fitted_constants[f"inv_m_r={r:g}"] = c
            per_radius[float(r)] = c.value
    rep.details["inv_m_r"] = per_radius
    return rep.finalize()
