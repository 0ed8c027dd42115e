"""Measures e^{-alpha d^p} dlambda / Z, optional perturbations, and a Metropolis sampler."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .distance import distance_features
from .errors import (ConfigError, DegenerateError, DomainError, StructureError,
                     TruncationError, TuningError)
from .htype import (GroupPoint, HTypeStructure, ScalarField, frame_apply, kaplan_norm_arrays,
                    load_structure)
from ._stats import Batcher, Estimate, N_BATCHES, batch_labels, effective_sample_size

# N <= d for the Kaplan gauge with c_N = 16; used to screen proposals exactly.
GAUGE_LOWER = 1.0
ACCEPT_BAND = (0.15, 0.6)
ACCEPT_HARD = (0.01, 0.95)
BLOCK = 128


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    structure: HTypeStructure
    p: float = 2.0
    alpha: float = 1.0
    W: Optional[ScalarField] = None
    V: Optional[ScalarField] = None
    V_osc: Optional[float] = None
    perturbation_doc: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.p > 1:
            raise DomainError(f"p must exceed 1, got {self.p}")
        if not self.alpha > 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.V is not None and self.V_osc is None:
            object.__setattr__(self, "V_osc", _oscillation(self))

    @property
    def beta(self) -> float:
        return 1.0 - 1.0 / self.p

    @property
    def perturbed(self) -> bool:
        return self.W is not None or self.V is not None

    def base_potential(self, P) -> np.ndarray:
        d, _ = distance_features(self.structure, P)
        return self.alpha * d ** self.p

    def U(self, P) -> np.ndarray:
        """Full potential alpha d^p + W + V."""
        u = self.base_potential(P)
        if self.W is not None:
            u = u + self.W.eval(P)
        if self.V is not None:
            u = u + self.V.eval(P)
        return u

    def U_bound_potential(self, P) -> tuple:
        """alpha d^p + W and its horizontal gradient; bounded V is left out."""
        d, dg = distance_features(self.structure, P)
        u = self.alpha * d ** self.p
        eg = (self.alpha * self.p * d ** (self.p - 1))[:, None] * dg
        if self.W is not None:
            u = u + self.W.eval(P)
            if self.W.grad_hint is None:
                raise DomainError("W needs a grad_hint for gradient-based checks")
            eg = eg + self.W.grad_hint(P)
        return u, frame_apply(self.structure, P, eg)

    def digest_doc(self) -> dict:
        return {"structure": self.structure.to_dict(), "p": self.p, "alpha": self.alpha,
                "perturbations": self.perturbation_doc}

    def to_dict(self) -> dict:
        out = {"group": self.structure.name or self.structure.to_dict(), "p": self.p, "alpha": self.alpha}
        out.update(self.perturbation_doc)
        return out


def _oscillation(spec: MeasureSpec, n: int = 4096, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    s = spec.structure
    scale = spec.alpha ** (-1 / spec.p)
    P = rng.uniform(-4, 4, (n, s.dim))
    P[:, : s.m] *= scale
    P[:, s.m:] *= scale * scale
    v = spec.V.eval(P)
    osc = float(np.max(v) - np.min(v))
    if not math.isfinite(osc):
        raise DomainError("V has infinite oscillation on the sampling box")
    return osc


# -- perturbation registry used by JSON specs ---------------------------------

def _perturbation(structure: HTypeStructure, doc: dict) -> ScalarField:
    kind = doc.get("kind")
    m = structure.m
    if kind == "quadratic_x":
        c = float(doc.get("c", 0.1))

        def ev(P):
            return c * np.sum(P[:, :m] ** 2, axis=1)

        def gr(P):
            g = np.zeros_like(P)
            g[:, :m] = 2 * c * P[:, :m]
            return g

        return ScalarField(ev, gr, name=f"W=quadratic_x({c})")
    if kind == "cos_x1":
        a = float(doc.get("amp", 0.5))

        def ev(P):
            return a * np.cos(P[:, 0])

        def gr(P):
            g = np.zeros_like(P)
            g[:, 0] = -a * np.sin(P[:, 0])
            return g

        return ScalarField(ev, gr, lipschitz_hint=abs(a), name=f"V=cos_x1({a})")
    if kind == "tanh_x1":
        a = float(doc.get("amp", 0.5))

        def ev(P):
            return a * np.tanh(P[:, 0])

        def gr(P):
            g = np.zeros_like(P)
            g[:, 0] = a / np.cosh(P[:, 0]) ** 2
            return g

        return ScalarField(ev, gr, lipschitz_hint=abs(a), name=f"V=tanh_x1({a})")
    raise ConfigError(f"unknown perturbation kind {kind!r}")


def spec_from_dict(doc: dict) -> MeasureSpec:
    allowed = {"group", "structure", "p", "alpha", "W", "V"}
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown keys in measure spec: {sorted(extra)}")
    structure = load_structure(doc.get("group", doc.get("structure", "heisenberg1")))
    pert = {}
    W = V = None
    if doc.get("W") is not None:
        W = _perturbation(structure, doc["W"])
        pert["W"] = doc["W"]
    if doc.get("V") is not None:
        V = _perturbation(structure, doc["V"])
        pert["V"] = doc["V"]
    return MeasureSpec(structure, float(doc.get("p", 2.0)), float(doc.get("alpha", 1.0)), W, V,
                       perturbation_doc=pert)


def load_spec(path) -> MeasureSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


# -- samples ---------------------------------------------------------------

@dataclass(frozen=True)
class ChainConfig:
    n_samples: int = 1000
    burn_in: int = 300
    thinning: int = 1
    proposal_scale: float = 1.0
    n_chains: int = 100
    seed: int = 0
    adapt: bool = True
    block_size: int = BLOCK

    def __post_init__(self):
        if self.n_samples < 1:
            raise DomainError("n_samples must be positive")
        if self.burn_in < 0 or self.thinning < 1 or self.n_chains < 1:
            raise DomainError("burn_in >= 0, thinning >= 1 and n_chains >= 1 required")
        if not self.proposal_scale > 0:
            raise DomainError("proposal_scale must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.block_size < 1:
            raise DomainError("block_size must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("n_samples", "burn_in", "thinning", "proposal_scale", "n_chains", "seed", "adapt", "block_size")}


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Stacked sample coordinates, chain-major, with optional weights.

    ``chain_length`` tells the batch-means machinery how rows group into
    chains; ``None`` means one sequence (e.g. i.i.d. draws).
    """

    structure: HTypeStructure
    points: np.ndarray
    weights: Optional[np.ndarray] = None
    chain_length: Optional[int] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim != 2 or P.shape[1] != self.structure.dim:
            raise StructureError(f"points must be (N, {self.structure.dim})")
        if P.shape[0] == 0:
            raise DegenerateError("empty sample set")
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "points", P)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).copy()
            if w.shape != (P.shape[0],) or not np.all(np.isfinite(w)) or np.any(w < 0):
                raise DomainError("weights must be finite, non-negative, one per sample")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.points.shape[0]

    @property
    def n_chains(self) -> int:
        if self.chain_length is None:
            return 1
        return self.points.shape[0] // self.chain_length

    def group_points(self) -> List[GroupPoint]:
        return [GroupPoint.from_array(self.structure, row) for row in self.points]

    def batcher(self, nb: int = N_BATCHES) -> Batcher:
        if self.weights is not None and not self.weights.sum() > 0:
            raise DegenerateError("all weights are zero")
        labels = batch_labels(len(self), self.chain_length, nb)
        return Batcher(labels, self.weights, nb)

    def subsample(self, n: int) -> "SampleSet":
        """Keep the first ``n`` rows of every chain, time-ordered, preserving batches."""
        if self.chain_length is None or n >= self.chain_length:
            if self.chain_length is None and n < len(self):
                idx = np.arange(n)
                w = None if self.weights is None else self.weights[idx]
                return SampleSet(self.structure, self.points[idx], w, None, dict(self.meta))
            return self
        nc = self.n_chains
        idx = (np.arange(nc)[:, None] * self.chain_length + np.arange(n)[None]).ravel()
        w = None if self.weights is None else self.weights[idx]
        return SampleSet(self.structure, self.points[idx], w, n, dict(self.meta))

    def thin_to(self, total: int) -> "SampleSet":
        """Evenly thin every chain so that about ``total`` rows remain."""
        if total >= len(self):
            return self
        L = self.chain_length or len(self)
        nc = len(self) // L
        keep = max(N_BATCHES, total // nc)
        step = max(1, L // keep)
        t = np.arange(0, L, step)[:keep]
        idx = (np.arange(nc)[:, None] * L + t[None]).ravel()
        w = None if self.weights is None else self.weights[idx]
        return SampleSet(self.structure, self.points[idx], w, t.size if nc > 1 or self.chain_length else None,
                         dict(self.meta))


def _initial_points(spec: MeasureSpec, rng, n):
    s = spec.structure
    scale = 0.5 * spec.alpha ** (-1.0 / spec.p)
    P = rng.standard_normal((n, s.dim))
    P[:, : s.m] *= scale
    P[:, s.m:] *= scale * scale
    return P


def _run_block(spec: MeasureSpec, cfg: ChainConfig, rng, nc: int):
    s = spec.structure
    dim = s.dim
    base = spec.alpha ** (-1.0 / spec.p)
    scales = np.full(dim, cfg.proposal_scale * base)
    scales[s.m:] *= base * 1.5
    X = _initial_points(spec, rng, nc)
    U = spec.U(X)
    screen = not spec.perturbed
    out = np.empty((nc, cfg.n_samples, dim))
    acc = np.zeros(dim)
    tried = np.zeros(dim)
    n_screened = 0
    total = cfg.burn_in + cfg.n_samples * cfg.thinning
    rec = 0
    for sweep in range(total):
        burning = sweep < cfg.burn_in
        for c in range(dim):
            prop = X.copy()
            prop[:, c] += scales[c] * rng.standard_normal(nc)
            logu = np.log(rng.random(nc))
            todo = np.ones(nc, bool)
            if screen:
                lb = spec.alpha * (kaplan_norm_arrays(s, prop) / GAUGE_LOWER) ** spec.p
                todo = logu < U - lb
                n_screened += int((~todo).sum())
            Unew = np.full(nc, np.inf)
            if todo.any():
                Unew[todo] = spec.U(prop[todo])
            ok = logu < U - Unew
            X[ok] = prop[ok]
            U[ok] = Unew[ok]
            rate = ok.mean()
            if burning and cfg.adapt:
                scales[c] *= math.exp((rate - 0.35) / math.sqrt(1.0 + sweep / 10.0))
            elif not burning:
                acc[c] += ok.sum()
                tried[c] += nc
        if not burning and (sweep - cfg.burn_in + 1) % cfg.thinning == 0:
            out[:, rec] = X
            rec += 1
    return out, acc, tried, scales, n_screened


def sample_measure(spec: MeasureSpec, cfg: ChainConfig) -> SampleSet:
    """Component-wise random-walk Metropolis in the flat (x, z) chart.

    Chains run in blocks of up to ``cfg.block_size``, each block driven by its own child
    seed of ``cfg.seed``; the result is byte-identical for a given
    ``(spec, cfg)``. Without perturbations, proposals whose gauge lower
    bound already fails the Metropolis test are rejected before any
    distance solve; this never changes an accept/reject decision.
    """
    if cfg.n_samples < 1:
        raise DomainError("n_samples must be positive")
    n_blocks = -(-cfg.n_chains // cfg.block_size)
    seeds = np.random.SeedSequence(int(cfg.seed)).spawn(n_blocks)
    chunks, acc, tried, scales_all = [], 0.0, 0.0, []
    screened = 0
    for b in range(n_blocks):
        nc = min(cfg.block_size, cfg.n_chains - b * cfg.block_size)
        rng = np.random.default_rng(seeds[b])
        out, a, t, sc, ns = _run_block(spec, cfg, rng, nc)
        chunks.append(out)
        acc = acc + a
        tried = tried + t
        scales_all.append(sc.tolist())
        screened += ns
    samples = np.concatenate(chunks, axis=0)
    rate_c = acc / np.maximum(tried, 1)
    rate = float(np.mean(rate_c))
    warn = []
    if rate < ACCEPT_HARD[0] or rate > ACCEPT_HARD[1]:
        suggested = cfg.proposal_scale * (0.2 if rate < ACCEPT_HARD[0] else 5.0)
        raise TuningError(f"acceptance rate {rate:.3f} outside {ACCEPT_HARD}", suggested)
    if not ACCEPT_BAND[0] <= rate <= ACCEPT_BAND[1]:
        msg = f"acceptance rate {rate:.3f} outside target band {ACCEPT_BAND}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        warn.append(msg)
    d, _ = distance_features(spec.structure, samples.reshape(-1, spec.structure.dim))
    dch = d.reshape(cfg.n_chains, cfg.n_samples)
    ess = [effective_sample_size(row) for row in dch] if cfg.n_samples >= 4 else [float(cfg.n_samples)] * cfg.n_chains
    meta = {"acceptance_rate": rate, "acceptance_per_coordinate": rate_c.tolist(),
            "ess_per_chain": ess, "ess_total": float(np.sum(ess)), "seed": int(cfg.seed),
            "n_chains": cfg.n_chains, "proposal_scales": scales_all, "screened": screened,
            "config": cfg.to_dict(), "warnings": warn}
    return SampleSet(spec.structure, samples.reshape(-1, spec.structure.dim), None, cfg.n_samples, meta)


def estimate_expectation(s: SampleSet, f: ScalarField) -> Estimate:
    """Weight-aware mean of ``f`` with a batch-means standard error.

    The returned :class:`Estimate` unpacks as ``mean, se = ...``.
    """
    vals = np.asarray(f.eval(s.points), dtype=float)
    return s.batcher().mean(vals)


def reweight(s: SampleSet, W: Optional[ScalarField] = None, V: Optional[ScalarField] = None) -> SampleSet:
    """Importance weights e^{-W-V} relative to the current weights."""
    logw = np.zeros(len(s))
    if W is not None:
        logw -= W.eval(s.points)
    if V is not None:
        logw -= V.eval(s.points)
    w = np.exp(logw - logw.max())
    if s.weights is not None:
        w = w * s.weights
    meta = dict(s.meta)
    meta["reweighted"] = True
    return SampleSet(s.structure, s.points, w / w.mean(), s.chain_length, meta)


# -- normalization ---------------------------------------------------------

def _composite_axis(h: float, q: int, panels: int = 4):
    """Composite Gauss-Legendre on [-h, h] with a panel break at 0."""
    per = max(4, q // (2 * panels))
    nodes, wts = leggauss(per)
    edges = np.linspace(-h, h, 2 * panels + 1)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    return (mid[:, None] + half[:, None] * nodes).ravel(), (half[:, None] * wts).ravel()


def _grid_Z(spec: MeasureSpec, L: float, q: int) -> float:
    s = spec.structure
    axes, ws = [], []
    for i in range(s.dim):
        # d >= 2 sqrt|z|, so |z| <= L^2 / 4 covers the sublevel set {d <= L}
        a, w = _composite_axis(L if i < s.m else 0.25 * L * L, q)
        axes.append(a)
        ws.append(w)
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack([g.ravel() for g in mesh], axis=1)
    W = ws[0]
    for w in ws[1:]:
        W = np.multiply.outer(W, w)
    flatW = W.ravel()
    total = 0.0
    for start in range(0, P.shape[0], 200_000):
        chunk = P[start:start + 200_000]
        total += float(np.sum(np.exp(-spec.U(chunk)) * flatW[start:start + 200_000]))
    return total


def estimate_normalization(spec: MeasureSpec, box_halfwidth: float = 5.0, quad_points: int = 96,
                           rel_tol: float = 1e-8, seed: int = 0) -> Estimate:
    """Z = integral of e^{-U} over the group.

    Composite Gauss-Legendre on the box ``|x_i| <= L, |z_k| <= L^2/4`` for
    dimension up to 3, otherwise importance sampling from a coordinate
    Gaussian. The box is doubled once; a relative change above ``rel_tol``
    raises :class:`TruncationError`. The reported SE is the quadrature
    discrepancy between ``quad_points`` and half as many nodes.
    """
    if not box_halfwidth > 0 or quad_points < 2:
        raise DomainError("box_halfwidth > 0 and quad_points >= 2 required")
    s = spec.structure
    L = box_halfwidth * spec.alpha ** (-1.0 / spec.p)
    if s.dim <= 3:
        q = quad_points
        Z = _grid_Z(spec, L, q)
        err = abs(_grid_Z(spec, L, max(2, q // 2)) - Z)
        Z2 = _grid_Z(spec, 2 * L, q)
        err2 = abs(_grid_Z(spec, 2 * L, max(2, q // 2)) - Z2)
        if abs(Z2 - Z) > rel_tol * abs(Z) + 3 * (err + err2):
            raise TruncationError(f"Z changed by {abs(Z2 - Z) / Z:.3g} relative under box doubling")
        return Estimate.with_se(Z, err)
    rng = np.random.default_rng(seed)
    n = 32 * 4096
    sig = np.ones(s.dim) * 0.8 * spec.alpha ** (-1.0 / spec.p)
    sig[s.m:] = sig[s.m:] ** 2 * 2.0
    P = rng.standard_normal((n, s.dim)) * sig
    logq = -0.5 * np.sum((P / sig) ** 2, axis=1) - np.sum(np.log(sig)) - 0.5 * s.dim * math.log(2 * math.pi)
    w = np.exp(-spec.U(P) - logq)
    b = Batcher(batch_labels(n), None)
    return b.mean(w)


# -- CSV I/O ---------------------------------------------------------------

def write_samples_csv(s: SampleSet, path) -> None:
    m, n = s.structure.m, s.structure.n
    header = [f"x_{i + 1}" for i in range(m)] + [f"z_{k + 1}" for k in range(n)] + ["weight"]
    w = s.weights if s.weights is not None else np.ones(len(s))
    info = {"chain_length": s.chain_length, "structure": s.structure.to_dict()}
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(info, sort_keys=True) + "\n")
        wr = csv.writer(fh)
        wr.writerow(header)
        for row, wi in zip(s.points, w):
            wr.writerow([repr(float(v)) for v in row] + [repr(float(wi))])


def read_samples_csv(path, structure: Optional[HTypeStructure] = None) -> SampleSet:
    chain_length = None
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("#"):
            info = json.loads(first[1:])
            chain_length = info.get("chain_length")
            if structure is None:
                structure = HTypeStructure.from_dict(info["structure"])
            rest = fh
        else:
            fh.seek(0)
            rest = fh
        rows = list(csv.reader(rest))
    if structure is None:
        raise StructureError("CSV has no structure header; pass structure explicitly")
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(-1, len(header))
    pts = data[:, : structure.dim]
    w = data[:, header.index("weight")] if "weight" in header else None
    if w is not None and np.all(w == 1.0):
        w = None
    return SampleSet(structure, pts, w, chain_length, {"source": str(path)})
