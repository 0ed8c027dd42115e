"""Built-in test-function corpora.

The inequalities quantify over all locally Lipschitz functions; a corpus is
a finite stand-in, so a passing check only means "not falsified here".
Every entry carries exact Euclidean partials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..distance import distance_features
from ..errors import ConfigError, DomainError
from ..htype import HTypeStructure, ScalarField, dilate_arrays


@dataclass
class FunctionCorpus:
    entries: List[ScalarField]
    families: List[str]
    corpus_id: str = "custom"

    def __post_init__(self):
        if len(self.entries) != len(self.families):
            raise DomainError("one family tag per entry required")
        ids = [f.name for f in self.entries]
        if len(set(ids)) != len(ids):
            raise DomainError("corpus ids must be unique")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, fid: str) -> ScalarField:
        for f in self.entries:
            if f.name == fid:
                return f
        raise KeyError(fid)

    @property
    def ids(self) -> List[str]:
        return [f.name for f in self.entries]

    def select(self, ids: Sequence[str]) -> "FunctionCorpus":
        keep = [i for i, f in enumerate(self.entries) if f.name in set(ids)]
        return FunctionCorpus([self.entries[i] for i in keep], [self.families[i] for i in keep],
                              self.corpus_id + ":subset")


# -- building blocks -----------------------------------------------------------

def radial(structure: HTypeStructure, h: Callable, dh: Callable, name: str) -> ScalarField:
    """f = h(d) with grad f = h'(d) grad d."""

    def ev(P):
        return h(distance_features(structure, P)[0])

    def gr(P):
        d, g = distance_features(structure, P)
        return dh(d)[:, None] * g

    return ScalarField(ev, gr, name=name)


def coordinate(structure: HTypeStructure, h: Callable, dh: Callable, name: str) -> ScalarField:
    """f = h(P) with a user-supplied Euclidean gradient."""
    return ScalarField(h, dh, name=name)


def _sig(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _dsig(u):
    s = _sig(u)
    return s * (1.0 - s)


def bump(structure: HTypeStructure, center, R: float, name: str, poly=None) -> ScalarField:
    """exp(1 - 1/(1 - s)) for s = |x - c_x|^2/R^2 + |z - c_z|^2/R^4 < 1, else 0.

    ``poly`` is an optional ``(value, grad)`` pair multiplying the bump.
    """
    c = np.asarray(center, dtype=float)
    m = structure.m
    scale = np.concatenate([np.full(m, 1.0 / R ** 2), np.full(structure.n, 1.0 / R ** 4)])

    def parts(P):
        diff = P - c
        s = np.sum(diff * diff * scale, axis=1)
        inside = s < 1
        b = np.zeros(P.shape[0])
        with np.errstate(divide="ignore", over="ignore"):
            b[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        db_ds = np.zeros_like(b)
        db_ds[inside] = -b[inside] / (1.0 - s[inside]) ** 2
        grad_b = db_ds[:, None] * 2 * diff * scale
        return b, grad_b

    def ev(P):
        b, _ = parts(P)
        return b if poly is None else poly[0](P) * b

    def gr(P):
        b, gb = parts(P)
        if poly is None:
            return gb
        return poly[0](P)[:, None] * gb + b[:, None] * poly[1](P)

    return ScalarField(ev, gr, name=name)


def constant(value: float, structure: HTypeStructure, name: str) -> ScalarField:
    return ScalarField(lambda P: np.full(P.shape[0], float(value)), lambda P: np.zeros_like(P),
                       lipschitz_hint=0.0, name=name)


def _unit(structure, j):
    def g(P):
        out = np.zeros_like(P)
        out[:, j] = 1.0
        return out
    return g


# -- corpora -------------------------------------------------------------------

def standard_corpus(spec, include_constant: bool = True) -> FunctionCorpus:
    """27 functions: h(d) families, potential composites, coordinates, bumps."""
    S = spec.structure
    m, n, dim = S.m, S.n, S.dim
    a, p = spec.alpha, spec.p
    sig = a ** (-1.0 / p)
    L1, L2 = 1.5 * sig, 4.0 * sig * sig
    c8, c4 = a / 8.0, a / 4.0
    T = 3.0 * sig
    E, fam = [], []

    def add(f, tag):
        E.append(f)
        fam.append(tag)

    add(radial(S, lambda d: d, lambda d: np.ones_like(d), "d"), "h(d)")
    add(radial(S, lambda d: d * d, lambda d: 2 * d, "d2"), "h(d)")
    add(radial(S, lambda d: np.tanh(d / sig), lambda d: 1 / sig / np.cosh(d / sig) ** 2, "tanh_d"), "h(d)")
    add(radial(S, np.log1p, lambda d: 1 / (1 + d), "log1p_d"), "h(d)")
    add(radial(S, lambda d: np.sqrt(1 + d * d), lambda d: d / np.sqrt(1 + d * d), "sqrt1p_d2"), "h(d)")
    add(radial(S, lambda d: np.exp(c8 * d ** p), lambda d: c8 * p * d ** (p - 1) * np.exp(c8 * d ** p),
               "exp_a8_dp"), "h(d)")
    add(radial(S, lambda d: np.exp(c4 * np.minimum(d, T) ** p),
               lambda d: np.where(d < T, c4 * p * d ** (p - 1) * np.exp(c4 * d ** p), 0.0),
               "exp_a4_dp_trunc"), "h(d)")
    add(radial(S, lambda d: np.minimum(d, L1), lambda d: (d < L1).astype(float), "min_d"), "h(d)")
    add(radial(S, lambda d: np.minimum(d * d, L2), lambda d: np.where(d * d < L2, 2 * d, 0.0), "min_d2"), "h(d)")
    add(radial(S, lambda d: 1 / (1 + (d / sig) ** 2), lambda d: -2 * d / sig ** 2 / (1 + (d / sig) ** 2) ** 2,
               "inv1p_d2"), "h(d)")
    add(radial(S, lambda d: np.exp(-(d / sig) ** 2), lambda d: -2 * d / sig ** 2 * np.exp(-(d / sig) ** 2),
               "gauss_d"), "h(d)")
    add(radial(S, lambda d: _sig(3 * (d - sig) / sig), lambda d: 3 / sig * _dsig(3 * (d - sig) / sig),
               "sig_d"), "indicator-smoothing")
    # composites of the unperturbed potential u = alpha d^p
    add(radial(S, lambda d: a * d ** p, lambda d: a * p * d ** (p - 1), "U"), "log-density")
    add(radial(S, lambda d: np.log1p(a * d ** p), lambda d: a * p * d ** (p - 1) / (1 + a * d ** p),
               "log1p_U"), "log-density")
    add(radial(S, lambda d: np.sqrt(1 + a * d ** p), lambda d: 0.5 * a * p * d ** (p - 1) / np.sqrt(1 + a * d ** p),
               "sqrt1p_U"), "log-density")
    add(radial(S, lambda d: np.minimum(a * d ** p, 4.0), lambda d: np.where(a * d ** p < 4.0, a * p * d ** (p - 1), 0.0),
               "min_U"), "log-density")
    # coordinates
    e0 = _unit(S, 0)
    add(coordinate(S, lambda P: P[:, 0], e0, "x1"), "coordinate")
    add(coordinate(S, lambda P: _sig(2 * P[:, 0] / sig), lambda P: (2 / sig * _dsig(2 * P[:, 0] / sig))[:, None] * e0(P),
                   "sig_x1"), "indicator-smoothing")
    add(coordinate(S, lambda P: 2 + np.cos(P[:, 0] / sig), lambda P: (-np.sin(P[:, 0] / sig) / sig)[:, None] * e0(P),
                   "cos_x1"), "coordinate")
    if n:
        ez = _unit(S, m)
        s2 = sig * sig
        add(coordinate(S, lambda P: _sig(P[:, m] / s2), lambda P: (_dsig(P[:, m] / s2) / s2)[:, None] * ez(P),
                       "sig_z1"), "indicator-smoothing")

        def mix(P):
            return 1 + 0.5 * np.sin(P[:, 0] / sig + P[:, m] / s2)

        def dmix(P):
            c = 0.5 * np.cos(P[:, 0] / sig + P[:, m] / s2)
            return (c / sig)[:, None] * e0(P) + (c / s2)[:, None] * ez(P)

        add(coordinate(S, mix, dmix, "sin_mix"), "coordinate")
    else:
        add(coordinate(S, lambda P: _sig(P[:, 0] ** 2 / sig ** 2 - 1),
                       lambda P: (2 * P[:, 0] / sig ** 2 * _dsig(P[:, 0] ** 2 / sig ** 2 - 1))[:, None] * e0(P),
                       "sig_x1sq"), "indicator-smoothing")
        add(coordinate(S, lambda P: 1 + 0.5 * np.sin(P[:, 0] / sig),
                       lambda P: (0.5 * np.cos(P[:, 0] / sig) / sig)[:, None] * e0(P), "sin_x1"), "coordinate")
    # bumps and polynomial x bump
    zero = np.zeros(dim)
    shift = zero.copy()
    shift[0] = 0.5 * sig
    add(bump(S, zero, 1.5 * sig, "bump0"), "bump")
    add(bump(S, shift, sig, "bump_shift"), "bump")
    add(bump(S, zero, 2 * sig, "polybump",
             poly=(lambda P: (1 + P[:, 0] / sig) ** 2, lambda P: (2 * (1 + P[:, 0] / sig) / sig)[:, None] * e0(P))),
        "polynomial x bump")
    j2 = m if n else 0
    e2 = _unit(S, j2)
    w2 = sig * sig if n else sig
    add(bump(S, zero, 2 * sig, "polybump_z",
             poly=(lambda P: 1 + P[:, j2] / w2, lambda P: e2(P) / w2)), "polynomial x bump")
    if include_constant:
        add(constant(1.0, S, "const"), "constant")
    return FunctionCorpus(E, fam, "builtin:standard")


def bounded_corpus(spec) -> FunctionCorpus:
    """Functions with values in [0, 1], including smoothed ball indicators."""
    S = spec.structure
    m, n = S.m, S.n
    sig = spec.alpha ** (-1.0 / spec.p)
    std = standard_corpus(spec, include_constant=False)
    keep = {"tanh_d", "inv1p_d2", "gauss_d", "sig_d", "sig_x1", "sig_z1", "bump0", "bump_shift", "sig_x1sq"}
    E = [f for f in std.entries if f.name in keep]
    fam = [t for f, t in zip(std.entries, std.families) if f.name in keep]
    L = 1.5 * sig
    E.append(radial(S, lambda d: np.minimum(d, L) / L, lambda d: (d < L) / L, "min_d_scaled"))
    fam.append("h(d)")
    e0 = _unit(S, 0)
    E.append(coordinate(S, lambda P: 0.5 * (1 + np.cos(P[:, 0] / sig)),
                        lambda P: (-0.5 * np.sin(P[:, 0] / sig) / sig)[:, None] * e0(P), "cos_half"))
    fam.append("coordinate")
    for r in (0.5, 1.0, 1.5, 2.0):
        for w in (0.1, 0.3):
            rr, ww = r * sig, w * sig
            E.append(radial(S, lambda d, rr=rr, ww=ww: 1 - _sig((d - rr) / ww),
                            lambda d, rr=rr, ww=ww: -_dsig((d - rr) / ww) / ww,
                            f"ball_{r:g}_{w:g}"))
            fam.append("indicator-smoothing")
    for v in (0.0, 0.5, 1.0):
        E.append(constant(v, S, f"const_{v:g}"))
        fam.append("constant")
    return FunctionCorpus(E, fam, "builtin:bounded")


def bump_corpus(structure: HTypeStructure, scale: float = 1.0) -> FunctionCorpus:
    """Compactly supported bumps (support inside |x| <= 3 scale, |z| <= 9 scale^2)."""
    S = structure
    dim, m, n = S.dim, S.m, S.n
    E, fam = [], []
    e0 = _unit(S, 0)
    for i, (R, off) in enumerate([(1.0, 0.0), (1.5, 0.0), (0.7, 0.8), (2.0, 0.5), (1.2, -1.0)]):
        c = np.zeros(dim)
        c[0] = off * scale
        E.append(bump(S, c, R * scale, f"bump_{i}"))
        fam.append("bump")
    for i, (R, k) in enumerate([(1.5, 1), (2.0, 2), (1.0, 3)]):
        E.append(bump(S, np.zeros(dim), R * scale, f"polybump_{i}",
                      poly=(lambda P, k=k: 1 + (P[:, 0] / scale) ** k,
                            lambda P, k=k: (k * P[:, 0] ** (k - 1) / scale ** k)[:, None] * e0(P))))
        fam.append("polynomial x bump")
    return FunctionCorpus(E, fam, "builtin:bumps")


def constants_corpus(structure: HTypeStructure) -> FunctionCorpus:
    return FunctionCorpus([constant(v, structure, f"const_{v:g}") for v in (1.0, 2.0)],
                          ["constant", "constant"], "builtin:constants")


def dilate_field(f: ScalarField, structure: HTypeStructure, r: float) -> ScalarField:
    """g -> f(delta_{1/r} g), i.e. the graph of f dilated by r."""
    inv = 1.0 / r
    m = structure.m

    def ev(P):
        return f.eval(dilate_arrays(structure, P, inv))

    gr = None
    if f.grad_hint is not None:
        def gr(P):
            g = np.array(f.grad_hint(dilate_arrays(structure, P, inv)), dtype=float)
            g[:, :m] *= inv
            g[:, m:] *= inv * inv
            return g

    lip = None if f.lipschitz_hint is None else f.lipschitz_hint * inv
    return ScalarField(ev, gr, lip, name=f.name)


def dilate_corpus(corpus: FunctionCorpus, structure: HTypeStructure, r: float) -> FunctionCorpus:
    return FunctionCorpus([dilate_field(f, structure, r) for f in corpus.entries], list(corpus.families),
                          f"{corpus.corpus_id}@dilate({r:g})")


def scale_field(f: ScalarField, c: float) -> ScalarField:
    gr = None if f.grad_hint is None else (lambda P: c * np.asarray(f.grad_hint(P)))
    return ScalarField(lambda P: c * np.asarray(f.eval(P)), gr, name=f.name)


def scale_corpus(corpus: FunctionCorpus, c: float) -> FunctionCorpus:
    return FunctionCorpus([scale_field(f, c) for f in corpus.entries], list(corpus.families),
                          f"{corpus.corpus_id}*{c:g}")


BUILTIN = ("builtin:standard", "builtin:bounded", "builtin:bumps", "builtin:constants")


def resolve_corpus(name: str, spec) -> FunctionCorpus:
    if name == "builtin:standard":
        return standard_corpus(spec)
    if name == "builtin:bounded":
        return bounded_corpus(spec)
    if name == "builtin:bumps":
        return bump_corpus(spec.structure, spec.alpha ** (-1.0 / spec.p))
    if name == "builtin:constants":
        return constants_corpus(spec.structure)
    raise ConfigError(f"unknown corpus {name!r}; known: {', '.join(BUILTIN)}")
