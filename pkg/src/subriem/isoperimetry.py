"""Surface measure by CC epsilon-enlargements, isoperimetric ratios and the coarea check."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ._stats import Estimate, stack_max
from .distance import distance_features
from .errors import DomainError
from .functionals._eval import evaluate
from .functionals.corpus import FunctionCorpus
from .functionals.profile import ProfileTable
from .htype import HTypeStructure, ScalarField, mul_arrays
from .reports import FunctionResult, InequalityReport, Kind, Status

N_SE = 3.0
STABLE_REL = 0.10
CHUNK = 200_000


# -- unit-ball cloud ------------------------------------------------------------

def _directions(k: int, count: int, rng) -> np.ndarray:
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        a = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    eye = np.eye(k)
    extra = rng.standard_normal((count, k))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    return np.concatenate([eye, -eye, extra])


def unit_ball_cloud(structure: HTypeStructure, n_phi: int = 8, n_dirs: int = 16,
                    radii: Sequence[float] = (1.0,), seed: int = 0) -> np.ndarray:
    """Points of the closed CC unit ball: scaled spheres plus the identity.

    The unit sphere is swept by geodesic endpoints: for phi in [0, pi],
    |x| = sin(phi)/phi and |z| = (phi - sin(phi)cos(phi)) / (4 phi^2),
    crossed with a set of horizontal and vertical directions.
    """
    rng = np.random.default_rng(seed)
    m, n = structure.m, structure.n
    X = _directions(m, n_dirs, rng)
    pts = [np.zeros((1, structure.dim))]
    if n == 0:
        for R in radii:
            pts.append(R * X)
        return np.unique(np.concatenate(pts), axis=0)
    Zd = _directions(n, max(4, n_dirs // 4), rng)
    phi = np.linspace(0.0, np.pi, n_phi)
    with np.errstate(invalid="ignore", divide="ignore"):
        rr = np.where(phi > 0, np.sin(phi) / np.where(phi > 0, phi, 1.0), 1.0)
        zeta = np.where(phi > 1e-3, (phi - np.sin(phi) * np.cos(phi)) / (4 * np.where(phi > 0, phi, 1.0) ** 2),
                        phi / 6.0)
    for R in radii:
        for r, zt in zip(rr, zeta):
            xs = R * r * X
            zs = R * R * zt * Zd
            block = np.concatenate([np.repeat(xs, len(zs), axis=0), np.tile(zs, (len(xs), 1))], axis=1)
            pts.append(block)
    cloud = np.concatenate(pts)
    cloud[np.abs(cloud) < 1e-15] = 0.0
    return np.unique(np.round(cloud, 14), axis=0)


# -- test sets --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestSet:
    """A Borel set given by finitely many distance or field evaluations.

    ``ball(r)`` is the closed CC ball about the identity; ``half_space(n, c)``
    is ``{x . n <= c}`` with ``n`` a horizontal unit vector; ``sublevel(f, s)``
    is ``{f <= s}``. ``complement=True`` flips ball membership.
    """

    __test__ = False

    kind: str
    structure: HTypeStructure
    radius: float = 0.0
    normal: Optional[np.ndarray] = None
    offset: float = 0.0
    field: Optional[ScalarField] = None
    level: float = 0.0
    complement: bool = False
    label: str = ""

    @classmethod
    def ball(cls, structure, r: float, complement: bool = False) -> "TestSet":
        if not r > 0:
            raise DomainError("ball radius must be positive")
        return cls("ball", structure, radius=float(r), complement=complement,
                   label=f"{'co' if complement else ''}ball({r:g})")

    @classmethod
    def half_space(cls, structure, normal, offset: float) -> "TestSet":
        nv = np.asarray(normal, dtype=float).reshape(-1)
        if nv.size != structure.m or not np.linalg.norm(nv) > 0:
            raise DomainError("normal must be a non-zero horizontal vector")
        nv = nv / np.linalg.norm(nv)
        return cls("half_space", structure, normal=nv, offset=float(offset),
                   label=f"half_space({np.round(nv, 4).tolist()}, {offset:g})")

    @classmethod
    def sublevel(cls, structure, f: ScalarField, s: float) -> "TestSet":
        return cls("sublevel", structure, field=f, level=float(s), label=f"{{{f.name} <= {s:g}}}")

    def complement_set(self) -> "TestSet":
        if self.kind == "ball":
            return TestSet.ball(self.structure, self.radius, not self.complement)
        if self.kind == "half_space":
            return TestSet.half_space(self.structure, -self.normal, -self.offset)
        neg = self.field
        f = ScalarField(lambda P: -np.asarray(neg.eval(P)),
                        None if neg.grad_hint is None else (lambda P: -np.asarray(neg.grad_hint(P))),
                        name=f"-{neg.name}")
        return TestSet.sublevel(self.structure, f, -self.level)

    def contains(self, P) -> np.ndarray:
        return self.enlarged(P, 0.0)

    def enlarged(self, P, eps: float, cloud: Optional[np.ndarray] = None) -> np.ndarray:
        """Membership in the open eps-enlargement (eps = 0 gives the set itself)."""
        P = np.asarray(P, dtype=float)
        if self.kind == "ball":
            d, _ = distance_features(self.structure, P)
            if self.complement:
                return d > self.radius - eps if eps > 0 else d > self.radius
            return d < self.radius + eps if eps > 0 else d <= self.radius
        if self.kind == "half_space":
            proj = P[:, : self.structure.m] @ self.normal
            return proj < self.offset + eps if eps > 0 else proj <= self.offset
        if eps == 0:
            return np.asarray(self.field.eval(P)) <= self.level
        return min_over_ball(self.structure, self.field, P, eps, cloud) <= self.level


def _over_ball(structure, f, P, eps, cloud, reduce):
    if cloud is None:
        cloud = unit_ball_cloud(structure)
    scaled = cloud.copy()
    m = structure.m
    scaled[:, :m] *= eps
    scaled[:, m:] *= eps * eps
    K = scaled.shape[0]
    out = np.empty(P.shape[0])
    step = max(1, CHUNK // K)
    for a in range(0, P.shape[0], step):
        blk = P[a:a + step]
        Q = mul_arrays(structure, blk[:, None, :], scaled[None, :, :]).reshape(-1, structure.dim)
        out[a:a + step] = reduce(np.asarray(f.eval(Q), dtype=float).reshape(blk.shape[0], K), axis=1)
    return out


def min_over_ball(structure, f, P, eps, cloud=None) -> np.ndarray:
    """min of f over g . delta_eps(cloud) for each row g of P."""
    return _over_ball(structure, f, P, eps, cloud, np.min)


def max_over_ball(structure, f, P, eps, cloud=None) -> np.ndarray:
    return _over_ball(structure, f, P, eps, cloud, np.max)


# -- surface measure ------------------------------------------------------------------

@dataclass
class SurfaceEstimate:
    mu_A: Estimate
    mu_plus: Estimate
    eps_ladder: List[Tuple[float, Estimate]]
    extrapolation_order: float
    status: str = "ok"
    note: str = ""

    def to_dict(self) -> dict:
        from .reports import to_jsonable
        return to_jsonable({"mu_A": self.mu_A, "mu_plus": self.mu_plus,
                            "eps_ladder": [[e, v] for e, v in self.eps_ladder],
                            "extrapolation_order": self.extrapolation_order, "status": self.status,
                            "note": self.note})


def default_ladder(spec_or_scale=1.0, rungs: int = 4, top: float = 0.2) -> List[float]:
    scale = spec_or_scale if np.isscalar(spec_or_scale) else spec_or_scale.alpha ** (-1.0 / spec_or_scale.p)
    return [top * scale * 0.5 ** k for k in range(rungs)]


def enlargement_measure(A: TestSet, eps: float, s, cloud=None) -> Estimate:
    """mu(A^eps) with a batch-means SE; unpacks as (mean, se)."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    return s.batcher().mean(A.enlarged(s.points, eps, cloud).astype(float))


def _extrapolate(eps: np.ndarray, D: List[Estimate]) -> Tuple[Estimate, float]:
    """Weighted linear fit D(eps) = mu+ + a eps; the same weights serve every replicate."""
    nb = D[0].reps.size
    if all(d.value == 0 and not np.any(d.reps) for d in D):
        return Estimate.exact(0.0, nb), float("nan")
    se = np.array([d.se for d in D])
    pos = se[np.isfinite(se) & (se > 0)]
    if pos.size == 0:
        w = np.ones_like(eps)
    else:
        # rungs with no spread get the smallest observed SE rather than infinite weight
        se = np.where(np.isfinite(se) & (se > 0), se, pos.min())
        w = 1.0 / se ** 2
    X = np.stack([np.ones_like(eps), eps], axis=1)
    G = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(G, (X * w[:, None]).T)[0]
    val = float(coef @ np.array([d.value for d in D]))
    reps = coef @ np.stack([d.reps for d in D])
    diffs = np.abs(np.diff([d.value for d in D]))
    order = float("nan")
    if diffs.size >= 2 and np.all(diffs > 0):
        order = float(np.mean(np.log2(diffs[:-1] / diffs[1:])))
    return Estimate(val, reps), order


def boundary_measure(A: TestSet, s, ladder: Optional[Sequence[float]] = None, cloud=None) -> SurfaceEstimate:
    """Outer Minkowski content mu+(A) from a halving eps-ladder.

    The difference quotients (mu(A^eps) - mu(A))/eps are fit linearly in
    eps and extrapolated to 0. If the last rung moves by more than 10%
    and more than 3 SE, the estimate is inconclusive and mu+ is NaN.
    """
    eps = np.array(sorted(ladder if ladder is not None else default_ladder(), reverse=True), dtype=float)
    if eps.size < 4 or np.any(eps <= 0):
        raise DomainError("ladder needs at least 4 positive rungs")
    b = s.batcher()
    inside = A.contains(s.points).astype(float)
    muA = b.mean(inside)
    D = []
    for e in eps:
        grown = A.enlarged(s.points, float(e), cloud).astype(float)
        D.append(b.mean((np.maximum(grown, inside) - inside) / e))
    mu_plus, order = _extrapolate(eps, D)
    last = D[-1] - D[-2]
    status, note = "ok", ""
    scale = abs(D[-1].value)
    if abs(last.value) > STABLE_REL * scale and abs(last.value) > N_SE * last.se:
        status, note = "inconclusive", f"last rung moved {abs(last.value) / max(scale, 1e-300):.1%}"
        mu_plus = Estimate(float("nan"), np.full(b.nb, np.nan))
    elif mu_plus.value < 0:
        mu_plus = Estimate(0.0, np.maximum(mu_plus.reps, 0.0))
    return SurfaceEstimate(muA, mu_plus, list(zip(eps.tolist(), D)), order, status, note)


def iso_ratio(A: TestSet, s, pt: ProfileTable, ladder=None, cloud=None, surface: Optional[SurfaceEstimate] = None):
    """(U_q(mu(A)) / mu+(A), status). Status is "undefined" when mu+ is consistent with 0."""
    se = surface if surface is not None else boundary_measure(A, s, ladder, cloud)
    nb = se.mu_A.reps.size
    if se.mu_A.value in (0.0, 1.0) and np.all(np.isin(se.mu_A.reps, (0.0, 1.0))):
        return Estimate.exact(0.0, nb), "ok"
    if se.status != "ok":
        return Estimate(float("nan"), np.full(nb, np.nan)), "inconclusive"
    if not se.mu_plus.value > N_SE * se.mu_plus.se:
        return Estimate(float("nan"), np.full(nb, np.nan)), "undefined"
    num = Estimate(pt(se.mu_A.value), pt(np.clip(se.mu_A.reps, 0, 1)))
    return num / se.mu_plus, "ok"


def eta_constant(beta: float) -> float:
    return (math.log(3) / math.log(2)) ** beta - 1.0


def eta_violations(beta: float, n: int = 1000, rtol: float = 1e-12) -> int:
    """Count grid points t in (0, 1/2] where eta (log 1/t)^beta exceeds (log(1+1/t))^beta - (log 2)^beta."""
    t = np.linspace(0.5 / n, 0.5, n)
    lhs = eta_constant(beta) * np.log(1 / t) ** beta
    rhs = np.log1p(1 / t) ** beta - math.log(2) ** beta
    return int(np.sum(lhs > rhs + rtol * np.abs(rhs)))


def implied_iso_constant(c: float, beta: float, L_q: float) -> float:
    """c~ = c L_q / eta from an L1-Phi-entropy constant c."""
    return c * L_q / eta_constant(beta)


def verify_isoperimetry(sets: Sequence[TestSet], s, pt: ProfileTable, ladder=None, cloud=None,
                        constants: Optional[dict] = None) -> InequalityReport:
    """U_q(mu(A)) <= c~ mu+(A) over a family of sets, and the set-level Cheeger form.

    c~ is the largest ratio over conclusive sets. The Cheeger check is
    min(t, 1 - t) <= (c~ L_q / (log 2)^beta) mu+(A) with beta = 1/q.
    """
    rep = InequalityReport(Kind.ISOPERIMETRY, corpus_id=f"{len(sets)} sets", n_eff=float(s.meta.get("ess_total", len(s))))
    rep.details["scope"] = "constants fitted over the listed sets only"
    rows, surfaces = [], {}
    for A in sets:
        sf = boundary_measure(A, s, ladder, cloud)
        surfaces[A.label] = sf.to_dict()
        ratio, st = iso_ratio(A, s, pt, surface=sf)
        rep.per_function.append(FunctionResult(A.label, sf.mu_A, {"mu_plus": sf.mu_plus}, ratio, st))
        if st == "ok":
            rows.append((A, sf, ratio))
        else:
            rep.excluded.append(A.label)
            rep.warnings.append(f"{A.label}: ratio {st}")
    rep.details["surfaces"] = surfaces
    if not rows:
        rep.status = Status.INCONCLUSIVE
        return rep
    external = constants is not None
    c = stack_max([r[2] for r in rows]) if not external else constants["c_tilde"]
    c = c if isinstance(c, Estimate) else Estimate.exact(float(c), rows[0][2].reps.size)
    rep.fitted_constants["c_tilde"] = c
    beta = 1.0 / pt.q
    k = c * (pt.L_q / math.log(2) ** beta)
    rep.fitted_constants["cheeger_set_constant"] = k
    for A, sf, ratio in rows:
        num = Estimate(pt(sf.mu_A.value), pt(np.clip(sf.mu_A.reps, 0, 1)))
        diff = num - c * sf.mu_plus if not external else num - sf.mu_plus * c.value
        se = diff.se if not external else math.hypot(diff.se, sf.mu_plus.value * c.se)
        if diff.value > N_SE * se + 1e-12:
            rep.violations.append(A.label)
        tmin = sf.mu_A.map(lambda t: np.minimum(t, 1 - t))
        cd = tmin - k * sf.mu_plus
        cse = cd.se if not external else math.hypot(cd.se, sf.mu_plus.value * k.se)
        if cd.value > N_SE * cse + 1e-12:
            rep.violations.append(f"{A.label}:cheeger")
    return rep.finalize()


# -- coarea ---------------------------------------------------------------------------

def coarea_check(f: ScalarField, s, level_grid: Optional[Sequence[float]] = None, n_levels: int = 24,
                 ladder=None, cloud=None, max_points: int = 4000) -> InequalityReport:
    """mu|grad f| >= sum over levels of mu+({f > s}) ds, within 3 combined SE.

    Superlevel enlargements come from M_eps(g) = max f over g . delta_eps(ball),
    computed once per rung for all levels. Levels whose surface estimate
    is inconclusive are dropped, which only weakens the right side.
    """
    rep = InequalityReport(Kind.COAREA, corpus_id=f.name, n_eff=0.0)
    sub = s.thin_to(max_points)
    rep.n_eff = float(len(sub))
    b = sub.batcher()
    vals, gn = evaluate(sub, f)
    lhs = b.mean(gn)
    if np.ptp(vals) == 0:
        zero = Estimate.exact(0.0, b.nb)
        rep.per_function.append(FunctionResult(f.name, zero, {"sum_mu_plus": zero}, None, "constant"))
        rep.details["levels"] = []
        return rep.finalize()
    if level_grid is None:
        lo, hi = float(vals.min()), float(vals.max())
        ds = (hi - lo) / n_levels
        levels = lo + ds * (np.arange(n_levels) + 0.5)
        widths = np.full(n_levels, ds)
    else:
        lv = np.sort(np.asarray(level_grid, dtype=float))
        if lv.size < 2:
            raise DomainError("level grid needs at least two levels")
        edges = np.concatenate([[lv[0] - 0.5 * (lv[1] - lv[0])], 0.5 * (lv[1:] + lv[:-1]),
                                [lv[-1] + 0.5 * (lv[-1] - lv[-2])]])
        levels, widths = lv, np.diff(edges)
    scale = None
    eps = np.array(sorted(ladder if ladder is not None else default_ladder(), reverse=True), dtype=float)
    if eps.size < 4:
        raise DomainError("ladder needs at least 4 rungs")
    if cloud is None:
        cloud = unit_ball_cloud(s.structure)
    M = [max_over_ball(s.structure, f, sub.points, float(e), cloud) for e in eps]
    total = Estimate.exact(0.0, b.nb)
    kept, dropped = [], []
    for lvl, w in zip(levels, widths):
        inside = (vals > lvl).astype(float)
        D = [b.mean((np.maximum((Me > lvl).astype(float), inside) - inside) / e) for Me, e in zip(M, eps)]
        mp, _ = _extrapolate(eps, D)
        last = D[-1] - D[-2]
        if abs(last.value) > STABLE_REL * abs(D[-1].value) and abs(last.value) > N_SE * last.se:
            dropped.append(float(lvl))
            continue
        mp = Estimate(max(mp.value, 0.0), np.maximum(mp.reps, 0.0))
        total = total + mp * float(w)
        kept.append(float(lvl))
    diff = total - lhs
    rep.per_function.append(FunctionResult(f.name, lhs, {"sum_mu_plus": total}, total / lhs if lhs.value > 0 else None))
    if diff.value > N_SE * diff.se + 1e-12:
        rep.violations.append(f.name)
    if dropped:
        rep.warnings.append(f"{len(dropped)} levels inconclusive and dropped")
    rep.details.update(levels_kept=kept, levels_dropped=dropped, ladder=eps.tolist())
    return rep.finalize()


def verify_coarea(corpus: FunctionCorpus, s, **kw) -> InequalityReport:
    """coarea_check over a corpus; violations are the union."""
    rep = InequalityReport(Kind.COAREA, corpus_id=corpus.corpus_id)
    for f in corpus:
        r = coarea_check(f, s, **kw)
        rep.per_function.extend(r.per_function)
        rep.violations.extend(r.violations)
        rep.warnings.extend(f"{f.name}: {w}" for w in r.warnings)
        rep.n_eff = r.n_eff
    return rep.finalize()
