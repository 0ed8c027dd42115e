"""Sample-based checks of the functional-inequality battery.

Every verifier evaluates a corpus on a :class:`SampleSet`, reports the
per-function left and right sides with batch-means standard errors, and
fits the smallest constants consistent with the corpus. Constants can
also be supplied (for example, fitted on another seed); a function is
then flagged when its left side exceeds the right by more than three
combined standard errors.
"""
from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq, linprog

from .._stats import Estimate, stack_max
from ..errors import DomainError, IntegrabilityError
from ..distance import distance_features
from ..reports import FunctionResult, InequalityReport, Kind, Status
from ._eval import evaluate
from .corpus import FunctionCorpus
from .phi import PhiSpec, _phi, entropy_from_means, theta_constant
from .profile import ProfileTable, profile_Uq

MIN_CORPUS = 20
N_SE = 3.0
SCOPE = "constants are fitted over a finite corpus: a pass means not falsified at this corpus and sample size"

ConstMap = Optional[Dict[str, Union[float, Estimate]]]


# -- shared plumbing -------------------------------------------------------------

def n_effective(s) -> float:
    if "ess_total" in s.meta:
        return float(s.meta["ess_total"])
    if s.weights is not None:
        w = s.weights
        return float(w.sum() ** 2 / np.sum(w * w))
    return float(len(s))


def _new_report(kind: Kind, s, corpus: FunctionCorpus) -> InequalityReport:
    rep = InequalityReport(kind, corpus_id=corpus.corpus_id, n_eff=n_effective(s))
    rep.details["scope"] = SCOPE
    rep.details["corpus_size"] = len(corpus)
    rep.details["n_samples"] = len(s)
    return rep


def _as_est(c, nb: int) -> Estimate:
    return c if isinstance(c, Estimate) else Estimate.exact(float(c), nb)


def _exceeds(lhs: Estimate, terms: Sequence[Tuple[Estimate, Estimate]], external: bool) -> Tuple[bool, float, float]:
    """Is lhs - sum(c * comp) above N_SE standard errors?

    Fitted constants share replicates with the components, so their
    difference is propagated replicate-wise. External constants come
    from another sample; their SE is added in quadrature.
    """
    if external:
        diff = lhs - sum(comp * c.value for c, comp in terms)
        se = math.sqrt(diff.se ** 2 + sum((comp.value * c.se) ** 2 for c, comp in terms))
    else:
        diff = lhs - sum(comp * c for c, comp in terms)
        se = diff.se
    if not math.isfinite(se):
        se = 0.0
    val = diff.value
    return val > N_SE * se + 1e-9 * abs(lhs.value) + 1e-300, val, se


def _positive(vals) -> np.ndarray:
    return np.abs(np.asarray(vals, dtype=float))


def _rep_aware(b, fn, center: Estimate) -> Estimate:
    """Mean of ``fn(center)`` where each replicate uses its own center."""
    val = b.mean(fn(center.value)).value
    reps = np.empty(b.nb)
    for k in range(b.nb):
        reps[k] = b.mean(fn(center.reps[k])).reps[k]
    return Estimate(val, reps)


def _fit_lp(lhs: List[Estimate], comps: List[List[Estimate]], names: Sequence[str]) -> Dict[str, Estimate]:
    """Smallest non-negative constants with sum_j c_j comp_ij >= lhs_i.

    "Smallest" minimizes the mean relative right side, a scale-free
    objective fixed from the point values; each replicate reuses it.
    """
    nb = lhs[0].reps.size
    L = np.array([e.value for e in lhs])
    C = np.array([[c.value for c in row] for row in comps])
    pos = L > 0
    if not pos.any():
        return {n: Estimate.exact(0.0, nb) for n in names}
    w = np.mean(C[pos] / L[pos, None], axis=0)
    w = np.where(w > 0, w, 1e-12)

    def solve(Lv, Cv):
        res = linprog(w, A_ub=-Cv, b_ub=-Lv, bounds=[(0, None)] * Cv.shape[1], method="highs")
        if res.status == 2:
            return np.full(Cv.shape[1], np.inf)
        if res.status != 0:
            return np.full(Cv.shape[1], np.nan)
        return res.x

    point = solve(L, C)
    reps = np.empty((nb, len(names)))
    Lr = np.array([e.reps for e in lhs])
    Cr = np.array([[c.reps for c in row] for row in comps])
    for k in range(nb):
        reps[k] = solve(Lr[:, k], Cr[:, :, k])
    return {n: Estimate(point[j], reps[:, j]) for j, n in enumerate(names)}


def _finish_fit(rep: InequalityReport, corpus: FunctionCorpus, min_corpus: int) -> bool:
    if len(corpus) < min_corpus:
        rep.status = Status.REFUSED
        rep.warnings.append(f"corpus has {len(corpus)} entries; at least {min_corpus} needed to fit constants")
        return False
    return True


def _constants(consts: ConstMap, names, nb) -> Dict[str, Estimate]:
    missing = [n for n in names if n not in consts]
    if missing:
        raise DomainError(f"missing constants: {missing}")
    return {n: _as_est(consts[n], nb) for n in names}


# -- ratio-type checks ---------------------------------------------------------------

def _ratio_check(kind: Kind, s, corpus: FunctionCorpus, cname: str, lhs_of, rhs_of,
                 constants: ConstMap, min_corpus: int, rhs_label: str, entropy_type: bool) -> InequalityReport:
    rep = _new_report(kind, s, corpus)
    b = s.batcher()
    rows = []
    for f in corpus:
        vals, gn = evaluate(s, f)
        if np.ptp(vals) == 0:
            zero = Estimate.exact(0.0, b.nb)
            rep.per_function.append(FunctionResult(f.name, zero, {rhs_label: zero}, None, "constant: 0/0"))
            rep.excluded.append(f.name)
            continue
        lhs = lhs_of(b, vals, gn)
        rhs = rhs_of(b, vals, gn)
        if entropy_type and lhs.value < -N_SE * lhs.se:
            rep.warnings.append(f"{f.name}: entropy estimate {lhs.value:.3g} below -3 SE")
        if not rhs.value > 0:
            rep.per_function.append(FunctionResult(f.name, lhs, {rhs_label: rhs}, None, "zero gradient mass"))
            rep.excluded.append(f.name)
            rep.warnings.append(f"{f.name}: non-constant with vanishing gradient term; excluded")
            continue
        ratio = lhs / rhs
        rep.per_function.append(FunctionResult(f.name, lhs, {rhs_label: rhs}, ratio))
        rows.append((f.name, lhs, rhs, ratio))
    fit_ok = _finish_fit(rep, corpus, min_corpus)
    if rows and fit_ok:
        rep.fitted_constants[cname] = stack_max([r[3] for r in rows])
    external = constants is not None
    if external:
        c = _constants(constants, [cname], b.nb)[cname]
    elif rows and fit_ok:
        c = rep.fitted_constants[cname]
    else:
        c = None
    if c is not None:
        for fid, lhs, rhs, _ in rows:
            bad, val, se = _exceeds(lhs, [(c, rhs)], external)
            if bad:
                rep.violations.append(fid)
    rep.details["constants_source"] = "supplied" if external else "fitted"
    return rep.finalize()


def verify_cheeger(s, corpus: FunctionCorpus, constants: ConstMap = None,
                   min_corpus: int = MIN_CORPUS) -> InequalityReport:
    """mu|f - mu f| <= c0 mu|grad f|; c0 is the largest corpus ratio."""

    def lhs(b, v, g):
        return _rep_aware(b, lambda c: np.abs(v - c), b.mean(v))

    def rhs(b, v, g):
        return b.mean(g)

    return _ratio_check(Kind.CHEEGER, s, corpus, "c0", lhs, rhs, constants, min_corpus, "grad", False)


def verify_l1phi_entropy(ps: PhiSpec, s, corpus: FunctionCorpus, constants: ConstMap = None,
                         min_corpus: int = MIN_CORPUS) -> InequalityReport:
    """Ent^Phi(|f|) <= c mu|grad f|."""

    def lhs(b, v, g):
        a = _positive(v)
        return entropy_from_means(ps, b.mean(_phi(a, ps.beta)), b.mean(a))

    def rhs(b, v, g):
        return b.mean(g)

    rep = _ratio_check(Kind.L1PHI, s, corpus, "c", lhs, rhs, constants, min_corpus, "grad", True)
    rep.details["beta"] = ps.beta
    return rep


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def verify_lsq(ps: PhiSpec, s, corpus: FunctionCorpus, constants: ConstMap = None,
               min_corpus: int = MIN_CORPUS) -> InequalityReport:
    """mu(|f|^q log(|f|^q / mu|f|^q)) <= C' mu|grad f|^q with q = 1/beta."""
    q = ps.q
    if not 1 < q <= 2:
        raise DomainError(f"LS_q needs q = 1/beta in (1, 2], got {q:.4g}")

    def lhs(b, v, g):
        F = _positive(v) ** q
        mF = b.mean(F)
        return b.mean(_xlogx(F)) - mF.map(_xlogx)

    def rhs(b, v, g):
        return b.mean(g ** q)

    rep = _ratio_check(Kind.LSQ, s, corpus, "C_prime", lhs, rhs, constants, min_corpus, "grad_q", True)
    rep.details["q"] = q
    return rep


# -- linear-program fits ---------------------------------------------------------------

def verify_ubound(spec, s, corpus: FunctionCorpus, constants: ConstMap = None,
                  min_corpus: int = MIN_CORPUS) -> InequalityReport:
    """mu(|f|(|U|^beta + |grad U|)) <= A mu|grad f| + B mu|f|.

    Also fits the variant mu(|f| d^{p-1}) <= A_d mu|grad f| + B_d mu|f|.
    The bounded perturbation V does not enter the growth term.
    """
    rep = _new_report(Kind.UBOUND, s, corpus)
    b = s.batcher()
    U, gU = spec.U_bound_potential(s.points)
    growth = np.abs(U) ** spec.beta + np.sqrt(np.sum(gU * gU, axis=1))
    d, _ = distance_features(s.structure, s.points)
    dvar = d ** (spec.p - 1)
    rows = []
    for f in corpus:
        vals, gn = evaluate(s, f)
        a = _positive(vals)
        if not a.any():
            rep.excluded.append(f.name)
            continue
        lhs, lhs_d = b.mean(a * growth), b.mean(a * dvar)
        grad, mass = b.mean(gn), b.mean(a)
        rep.per_function.append(FunctionResult(f.name, lhs, {"grad": grad, "mass": mass, "lhs_d": lhs_d}))
        rows.append((f.name, lhs, lhs_d, grad, mass))
    fit_ok = _finish_fit(rep, corpus, min_corpus) and rows
    names = ["A", "B", "A_d", "B_d"]
    if fit_ok:
        comps = [[r[3], r[4]] for r in rows]
        rep.fitted_constants.update(_fit_lp([r[1] for r in rows], comps, ["A", "B"]))
        rep.fitted_constants.update(_fit_lp([r[2] for r in rows], comps, ["A_d", "B_d"]))
    external = constants is not None
    if external:
        cs = {n: _as_est(constants[n], b.nb) for n in names if n in constants}
    else:
        cs = rep.fitted_constants
    for fid, lhs, lhs_d, grad, mass in rows:
        for L, (ka, kb) in ((lhs, ("A", "B")), (lhs_d, ("A_d", "B_d"))):
            if ka in cs and kb in cs and all(math.isfinite(cs[k].value) for k in (ka, kb)):
                if _exceeds(L, [(cs[ka], grad), (cs[kb], mass)], external)[0]:
                    rep.violations.append(fid if ka == "A" else f"{fid}:d")
    rep.details.update(beta=spec.beta, p=spec.p, alpha=spec.alpha,
                       constants_source="supplied" if external else "fitted")
    return rep.finalize()


def verify_tight_ledoux(ps: PhiSpec, s, corpus: FunctionCorpus, constants: ConstMap = None,
                        min_corpus: int = MIN_CORPUS) -> InequalityReport:
    """mu(F (log+ F)^beta) <= K mu|grad F| + K' for F = f / mu f."""
    rep = _new_report(Kind.TIGHT_LEDOUX, s, corpus)
    b = s.batcher()
    beta = ps.beta
    rows = []
    one = Estimate.exact(1.0, b.nb)
    for f in corpus:
        vals, gn = evaluate(s, f)
        m = b.mean(vals)
        if not m.value > 0 or not np.all(m.reps > 0):
            rep.excluded.append(f.name)
            rep.warnings.append(f"{f.name}: mean not positive; excluded")
            continue

        def integrand(c, v=vals):
            F = v / c
            return F * np.log(np.maximum(F, 1.0)) ** beta

        lhs = _rep_aware(b, integrand, m)
        grad = b.mean(gn) / m
        rep.per_function.append(FunctionResult(f.name, lhs, {"grad": grad}))
        rows.append((f.name, lhs, grad))
    fit_ok = _finish_fit(rep, corpus, min_corpus) and rows
    if fit_ok:
        rep.fitted_constants.update(_fit_lp([r[1] for r in rows], [[r[2], one] for r in rows], ["K", "K_prime"]))
    external = constants is not None
    cs = _constants(constants, ["K", "K_prime"], b.nb) if external else rep.fitted_constants
    if cs:
        for fid, lhs, grad in rows:
            if _exceeds(lhs, [(cs["K"], grad), (cs["K_prime"], one)], external)[0]:
                rep.violations.append(fid)
    rep.details.update(beta=beta, constants_source="supplied" if external else "fitted")
    return rep.finalize()


# -- IFI_2 ------------------------------------------------------------------------------

CLIP_TOL = 1e-9


def _ifi_rhs(b, u, g2, C) -> Estimate:
    return b.mean(np.sqrt(u * u + C * g2))


def _smallest_C(b, u, g2, lhs: Estimate) -> Estimate:
    if np.ptp(u) == 0 and not np.any(g2 > 0):
        return Estimate.exact(0.0, b.nb)
    r0 = _ifi_rhs(b, u, g2, 0.0)
    if r0.value >= lhs.value * (1 - 1e-12):
        C = 0.0
    elif not np.any(g2 > 0):
        return Estimate(np.inf, np.full(b.nb, np.inf))
    else:
        hi = 1.0
        while _ifi_rhs(b, u, g2, hi).value < lhs.value:
            hi *= 4.0
            if hi > 1e12:
                return Estimate(np.inf, np.full(b.nb, np.inf))
        C = brentq(lambda c: _ifi_rhs(b, u, g2, c).value - lhs.value, 0.0, hi, xtol=1e-12, rtol=1e-10)
    # one Newton step per replicate from the point solution
    root = np.sqrt(u * u + C * g2)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = b.mean(np.where(root > 0, g2 / (2 * root), 0.0))
    rc = _ifi_rhs(b, u, g2, C)
    with np.errstate(divide="ignore", invalid="ignore"):
        reps = C + (lhs.reps - rc.reps) / slope.reps
    reps = np.where(np.isfinite(reps), np.maximum(reps, 0.0), C)
    return Estimate(C, reps)


def verify_ifi2(s, corpus: FunctionCorpus, pt: Optional[ProfileTable] = None, constants: ConstMap = None,
                min_corpus: int = MIN_CORPUS) -> InequalityReport:
    """U_2(mu f) <= mu sqrt(U_2(f)^2 + C'' |grad f|^2) for 0 <= f <= 1."""
    if pt is None:
        pt = profile_Uq(2.0)
    if abs(pt.q - 2.0) > 1e-12:
        raise DomainError("IFI_2 needs the q = 2 profile")
    rep = _new_report(Kind.IFI2, s, corpus)
    b = s.batcher()
    rows = []
    for f in corpus:
        vals, gn = evaluate(s, f)
        if vals.min() < -CLIP_TOL or vals.max() > 1 + CLIP_TOL:
            rep.excluded.append(f.name)
            rep.warnings.append(f"{f.name}: values leave [0, 1]; excluded")
            continue
        v = np.clip(vals, 0.0, 1.0)
        m = b.mean(v)
        lhs = Estimate(pt(m.value), pt(m.reps))
        u = pt(v)
        g2 = gn * gn
        C = _smallest_C(b, u, g2, lhs)
        rhs0 = _ifi_rhs(b, u, g2, 0.0)
        rep.per_function.append(FunctionResult(f.name, lhs, {"rhs_C0": rhs0}, C,
                                               "constant" if np.ptp(v) == 0 else ""))
        rows.append((f.name, lhs, u, g2, C))
    fit_ok = _finish_fit(rep, corpus, min_corpus) and rows
    if fit_ok:
        rep.fitted_constants["C_dprime"] = stack_max([r[4] for r in rows])
    external = constants is not None
    c = _constants(constants, ["C_dprime"], b.nb)["C_dprime"] if external else rep.fitted_constants.get("C_dprime")
    if c is not None and math.isfinite(c.value):
        for fid, lhs, u, g2, _ in rows:
            r = _ifi_rhs(b, u, g2, c.value)
            diff = lhs - r
            se = diff.se
            if external:
                root = np.sqrt(u * u + c.value * g2)
                with np.errstate(divide="ignore", invalid="ignore"):
                    slope = b.mean(np.where(root > 0, g2 / (2 * root), 0.0)).value
                se = math.sqrt(se ** 2 + (slope * c.se) ** 2)
            if diff.value > N_SE * se + 1e-9 * abs(lhs.value) + 1e-300:
                rep.violations.append(fid)
    rep.details["constants_source"] = "supplied" if external else "fitted"
    return rep.finalize()


# -- relative entropy with Theta --------------------------------------------------------

def theta_bound(ps: PhiSpec, s, f, h, sval: float) -> Tuple[Estimate, Estimate, Estimate]:
    """(lhs, rhs, Theta) for mu(f h) <= (Ent^Phi(f) + Theta(s h)) / s.

    ``f`` is rescaled to mu f = 1 on the sample. Theta(h) is
    theta + (log 2)^beta + (log mu e^{h^q})^beta.
    """
    if not sval > 0:
        raise DomainError("s must be positive")
    b = s.batcher()
    fv = np.asarray(f.eval(s.points), dtype=float)
    hv = np.asarray(h.eval(s.points), dtype=float)
    if np.any(fv < 0) or np.any(hv < 0):
        raise DomainError("f and h must be non-negative")
    mf = b.mean(fv)
    if not mf.value > 0:
        raise DomainError("f has zero mean on the sample")
    F = fv / mf.value
    with np.errstate(over="ignore"):
        ex = np.exp((sval * hv) ** ps.q)
    if not np.all(np.isfinite(ex)):
        raise IntegrabilityError(f"e^((s h)^q) overflows at s = {sval}; s is too large for this h")
    E = b.mean(ex)
    if not (math.isfinite(E.value) and np.all(np.isfinite(E.reps))):
        raise IntegrabilityError(f"mu e^((s h)^q) is not finite at s = {sval}")
    beta = ps.beta
    theta = theta_constant(beta)
    Theta = E.map(lambda e: theta + math.log(2.0) ** beta + np.log(e) ** beta)
    lhs = b.mean(F * hv)
    ent = Estimate.exact(0.0, b.nb) if np.ptp(F) == 0 else entropy_from_means(ps, b.mean(_phi(F, beta)), b.mean(F))
    rhs = (ent + Theta) / sval
    return lhs, rhs, Theta


# -- exponential integrability ---------------------------------------------------------

MAX_REL_SE = 0.2


def verify_exp_integrability(spec, s, lam_grid: Sequence[float], L: Optional[float] = None,
                             C: Optional[float] = None, D: Optional[float] = None,
                             constants: ConstMap = None) -> InequalityReport:
    """Estimate mu e^{lambda min(d, L)^2} on a lambda grid and fit D''.

    D'' is the smallest constant with mu e^{lambda min(d,L)^2} <= e^{lambda D''}
    on the retained grid. Given the constants (C, D) of
    mu(f d) <= C mu|grad f| + D mu f, the grid is cut at lambda_0 = 1/(2C)
    and the implied bound on D'' is checked. The potential variant
    mu e^{lambda min(U, alpha L^p)} <= e^{lambda B} is reported alongside.
    """
    lam = np.sort(np.asarray(lam_grid, dtype=float))
    if lam.size == 0 or np.any(lam <= 0):
        raise DomainError("lambda grid must be non-empty and positive")
    sig = spec.alpha ** (-1.0 / spec.p)
    L = 6.0 * sig if L is None else float(L)
    if not L > 0:
        raise DomainError("L must be positive")
    corpus_id = "lambda-grid"
    rep = InequalityReport(Kind.EXP_INT, corpus_id=corpus_id, n_eff=n_effective(s))
    rep.details["scope"] = "integrability is checked on the listed lambda values only"
    b = s.batcher()
    if C is not None:
        lam0 = 1.0 / (2.0 * C)
        if np.any(lam >= lam0):
            rep.warnings.append(f"lambda >= lambda_0 = {lam0:.4g} dropped (2 lambda C < 1 required)")
        lam = lam[lam < lam0]
        rep.fitted_constants["lambda_0"] = Estimate.exact(lam0, b.nb)
    d, _ = distance_features(s.structure, s.points)
    dd = np.minimum(d, L) ** 2
    UL = np.minimum(spec.U(s.points), spec.alpha * L ** spec.p)
    kept, logs, logs_U, estimates = [], [], [], []
    for lv in lam:
        E = b.mean(np.exp(lv * dd))
        if not (E.se <= MAX_REL_SE * E.value):
            rep.warnings.append(f"relative SE above {MAX_REL_SE:.0%} at lambda = {lv:g}; grid truncated")
            rep.status = Status.INCONCLUSIVE if not kept else rep.status
            break
        EU = b.mean(np.exp(lv * UL))
        r = E.map(np.log) / lv
        rU = EU.map(np.log) / lv
        kept.append(float(lv))
        logs.append(r)
        logs_U.append(rU)
        estimates.append(E)
        rep.per_function.append(FunctionResult(f"lambda={lv:g}", E, {"log_over_lambda": r, "potential_variant": EU}, r))
    if kept:
        rep.fitted_constants["D_dprime"] = stack_max(logs)
        rep.fitted_constants["B_appendix"] = stack_max(logs_U)
        vals = [e.value for e in estimates]
        rep.details["monotone_in_lambda"] = bool(np.all(np.diff(vals) >= 0))
    rep.details.update(L=L, lambda_kept=kept)
    checks = []
    if C is not None and D is not None and kept:
        lmax = max(kept)
        Dp = D / (1 - 2 * lmax * C)
        Dpp = (Dp + C) / (1 - 2 * lmax * C)
        rep.details["D_dprime_implied"] = Dpp
        checks.append(Estimate.exact(Dpp, b.nb))
    if constants is not None:
        checks.append(_as_est(constants["D_dprime"], b.nb))
    for bound in checks:
        for lv, r in zip(kept, logs):
            diff_se = math.sqrt(r.se ** 2 + bound.se ** 2)
            if r.value - bound.value > N_SE * diff_se:
                rep.violations.append(f"lambda={lv:g}")
    if rep.status != Status.INCONCLUSIVE:
        rep.finalize()
    return rep
