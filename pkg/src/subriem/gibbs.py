"""Lattice spin systems with group-valued spins.

The finite box {0..side-1}^D carries interior spins; a fixed outer shell
supplies the boundary condition. Sites split by coordinate-sum parity,
so each parity class is conditionally independent given the other and
the sweep E_{Gamma_1} E_{Gamma_0} resamples one class at a time.

Group spins are drawn from their single-site conditionals by rejection
from a pool of single-site measure samples: the acceptance probability is
exp(J h - |J| deg M) for the bounded pair potential. The pool is split by
replica batch so batch-means standard errors see its sampling noise.
One-dimensional spins use an exact grid inverse CDF instead, which also
handles unbounded (quadratic) couplings.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._stats import Batcher, Estimate, N_BATCHES, stack_max
from .errors import DomainError, NumericError
from .functionals.corpus import FunctionCorpus, standard_corpus
from .functionals.inequalities import MIN_CORPUS, N_SE, SCOPE, _exceeds, _smallest_C
from .functionals.phi import PhiSpec, _phi, entropy_from_means
from .functionals.profile import ProfileTable, profile_Uq
from .htype import GroupPoint, HTypeStructure, ScalarField, euclidean, horizontal_gradient_arrays
from .measures import ChainConfig, MeasureSpec, SampleSet, sample_measure
from .reports import FunctionResult, InequalityReport, Kind, Status

MAX_REJECTION_ROUNDS = 2000
GRID_POINTS = 4097
MERGE_BY = 20
POOL_PER_CHAIN = 32
POOL_THINNING = 10


# -- potentials ------------------------------------------------------------------------

@dataclass(frozen=True)
class Interaction:
    """Symmetric pair potential psi(a, b) on two spin arrays.

    ``grad_b(a, b)`` is the horizontal gradient in the second spin, shape
    ``(..., m)``. ``M`` bounds |psi| and |grad psi| (``inf`` for
    unbounded couplings such as the quadratic one).
    """

    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_b: Callable[[np.ndarray, np.ndarray], np.ndarray]
    M: float
    name: str = "psi"


def cosine_coupling(structure: HTypeStructure) -> Interaction:
    """psi(a, b) = mean_k cos(a_k - b_k) over the horizontal coordinates; M = 1."""
    m = structure.m

    def ev(A, B):
        return np.mean(np.cos(A[..., :m] - B[..., :m]), axis=-1)

    def gb(A, B):
        return np.sin(A[..., :m] - B[..., :m]) / m

    return Interaction(ev, gb, 1.0, "cosine")


def quadratic_coupling(g: float = 1.0) -> Interaction:
    """psi(a, b) = g a b for one-dimensional spins (unbounded)."""

    def ev(A, B):
        return g * A[..., 0] * B[..., 0]

    def gb(A, B):
        return g * A[..., :1] + 0.0 * B[..., :1]

    return Interaction(ev, gb, math.inf, f"quadratic({g:g})")


def check_interaction(inter: Interaction, structure: HTypeStructure, n: int = 4000, scale: float = 3.0,
                      seed: int = 0) -> dict:
    """Grid check of sup |psi|, sup |grad psi| and symmetry on a random box."""
    rng = np.random.default_rng(seed)
    half = np.array([scale] * structure.m + [scale * scale] * structure.n)
    A = (2 * rng.random((n, structure.dim)) - 1) * half
    B = (2 * rng.random((n, structure.dim)) - 1) * half
    v = inter.eval(A, B)
    g = np.linalg.norm(inter.grad_b(A, B), axis=-1)
    sym = float(np.max(np.abs(v - inter.eval(B, A))))
    out = {"sup_psi": float(np.max(np.abs(v))), "sup_grad": float(np.max(g)), "symmetry_residual": sym,
           "M": inter.M}
    out["within_bound"] = bool(out["sup_psi"] <= inter.M * (1 + 1e-12) and out["sup_grad"] <= inter.M * (1 + 1e-12))
    return out


@dataclass(frozen=True)
class PolynomialPotential:
    """Single-site potential U(x) = sum_k c_k x^k for one-dimensional spins."""

    coeffs: Tuple[float, ...]

    def __post_init__(self):
        c = np.trim_zeros(np.asarray(self.coeffs, dtype=float), "b")
        if c.size < 3 or (c.size - 1) % 2 or c[-1] <= 0:
            raise DomainError("need an even degree >= 2 with a positive leading coefficient")
        object.__setattr__(self, "coeffs", tuple(float(x) for x in c))

    @property
    def structure(self) -> HTypeStructure:
        return euclidean(1)

    def U(self, P) -> np.ndarray:
        return np.polynomial.polynomial.polyval(np.asarray(P, dtype=float)[..., 0], self.coeffs)

    def to_dict(self) -> dict:
        return {"polynomial": list(self.coeffs)}


SingleSite = Union[MeasureSpec, PolynomialPotential]


# -- geometry --------------------------------------------------------------------------

class Geometry:
    """Interior sites in lexicographic order, the face-adjacent shell, and neighbor lists."""

    def __init__(self, D: int, side: int):
        if D < 1 or side < 1:
            raise DomainError("D and side must be positive")
        self.D, self.side = D, side
        self.sites = list(itertools.product(range(side), repeat=D))
        self.index = {s: i for i, s in enumerate(self.sites)}
        self.shell: List[tuple] = []
        shell_index: Dict[tuple, int] = {}
        self.inner_nbrs: List[List[int]] = []
        self.shell_nbrs: List[List[int]] = []
        for s in self.sites:
            inn, out = [], []
            for ax in range(D):
                for step in (-1, 1):
                    t = list(s)
                    t[ax] += step
                    t = tuple(t)
                    if t in self.index:
                        inn.append(self.index[t])
                    else:
                        if t not in shell_index:
                            shell_index[t] = len(self.shell)
                            self.shell.append(t)
                        out.append(shell_index[t])
            self.inner_nbrs.append(inn)
            self.shell_nbrs.append(out)
        self.shell_index = shell_index
        self.parity = np.array([sum(s) % 2 for s in self.sites])
        self.classes = (np.nonzero(self.parity == 0)[0].tolist(), np.nonzero(self.parity == 1)[0].tolist())

    def degree(self, i: int) -> int:
        return len(self.inner_nbrs[i]) + len(self.shell_nbrs[i])

    def center(self) -> int:
        c = (self.side - 1) / 2.0
        return int(np.argmin([sum((x - c) ** 2 for x in s) for s in self.sites]))


def checkerboard_partition(D: int, box: int) -> Tuple[List[tuple], List[tuple]]:
    """Even and odd coordinate-sum sites of {0..box-1}^D."""
    geo = Geometry(D, box)
    return [geo.sites[i] for i in geo.classes[0]], [geo.sites[i] for i in geo.classes[1]]


# -- configuration ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpinField:
    """Interior spins of one box configuration, as a ``(sites, dim)`` array."""

    structure: HTypeStructure
    D: int
    side: int
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.side ** self.D, self.structure.dim):
            raise DomainError(f"expected {(self.side ** self.D, self.structure.dim)} spin array")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, structure: HTypeStructure, D: int, side: int, g=None) -> "SpinField":
        row = np.zeros(structure.dim) if g is None else (g.as_array() if isinstance(g, GroupPoint) else np.asarray(g))
        return cls(structure, D, side, np.tile(row, (side ** D, 1)))

    @property
    def spins(self) -> Dict[tuple, GroupPoint]:
        geo = Geometry(self.D, self.side)
        return {s: GroupPoint.from_array(self.structure, self.values[i]) for i, s in enumerate(geo.sites)}

    def to_dict(self) -> dict:
        return {"D": self.D, "side": self.side, "values": self.values.tolist()}


@dataclass(frozen=True, eq=False)
class LatticeConfig:
    """A finite box with fixed outer shell ``boundary`` (a constant spin or a dict shell-site -> spin)."""

    single_site: SingleSite
    interaction: Interaction
    J: float = 0.0
    D: int = 2
    side: int = 3
    boundary: Optional[Union[GroupPoint, Dict[tuple, GroupPoint]]] = None

    def __post_init__(self):
        if self.D < 1 or self.side < 1:
            raise DomainError("D and side must be positive")
        if not math.isfinite(self.interaction.M) and not self._one_d:
            raise DomainError("unbounded couplings need one-dimensional spins")

    @property
    def structure(self) -> HTypeStructure:
        return self.single_site.structure

    @property
    def _one_d(self) -> bool:
        S = self.structure
        return S.m == 1 and S.n == 0

    def geometry(self) -> Geometry:
        return Geometry(self.D, self.side)

    def with_J(self, J: float) -> "LatticeConfig":
        return replace(self, J=float(J))

    def boundary_array(self, geo: Optional[Geometry] = None) -> np.ndarray:
        geo = geo or self.geometry()
        S = self.structure
        out = np.zeros((len(geo.shell), S.dim))
        if self.boundary is None:
            return out
        if isinstance(self.boundary, GroupPoint):
            out[:] = self.boundary.as_array()
            return out
        for site, g in self.boundary.items():
            out[geo.shell_index[tuple(site)]] = g.as_array()
        return out

    def J0_proof_form(self, c0: float) -> float:
        """1/(32 M c0): the threshold form from the contraction argument (D = 2, R = 1)."""
        return 1.0 / (32.0 * self.interaction.M * c0)

    def to_dict(self) -> dict:
        ss = self.single_site
        return {"D": self.D, "side": self.side, "J": self.J, "interaction": self.interaction.name,
                "M": self.interaction.M,
                "single_site": ss.to_dict() if hasattr(ss, "to_dict") else str(ss)}


# -- conditional sampling --------------------------------------------------------------

class _Kernel:
    """Draws single-site conditionals for many rows at once."""

    def __init__(self, cfg: LatticeConfig, rng: np.random.Generator, expected_draws: int,
                 nb: int = N_BATCHES, pool_seed: int = 0):
        self.cfg = cfg
        self.geo = cfg.geometry()
        self.bd = cfg.boundary_array(self.geo)
        self.rng = rng
        self.nb = nb
        self.inter = cfg.interaction
        self.accepted = 0
        self.proposed = 0
        if cfg._one_d:
            self._setup_grid()
        else:
            self._setup_pool(expected_draws, pool_seed)

    # one-dimensional spins: grid inverse CDF
    def _setup_grid(self):
        U = self.cfg.single_site.U
        L = 1.0
        while float(np.min(U(np.array([[L], [-L]])))) - float(U(np.zeros((1, 1)))[0]) < 60.0 or L < 3:
            L *= 1.5
            if L > 1e4:
                raise NumericError("single-site potential does not grow")
        # the coupling can shift the mode by |J| deg |x| ~ O(L); widen once
        self.grid = np.linspace(-2 * L, 2 * L, GRID_POINTS)
        self.Ugrid = U(self.grid[:, None])

    def _grid_draw(self, logw: np.ndarray) -> np.ndarray:
        g = self.grid
        logw = logw - logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        if np.any(w[:, 0] > 1e-12) or np.any(w[:, -1] > 1e-12):
            raise NumericError("conditional mass reaches the grid edge; coupling too strong")
        dx = g[1] - g[0]
        cdf = np.concatenate([np.zeros((w.shape[0], 1)), np.cumsum(0.5 * (w[:, 1:] + w[:, :-1]) * dx, axis=1)], axis=1)
        target = self.rng.random(w.shape[0]) * cdf[:, -1]
        k = np.clip((cdf < target[:, None]).sum(axis=1), 1, g.size - 1)
        r = np.arange(w.shape[0])
        c0, c1 = cdf[r, k - 1], cdf[r, k]
        frac = np.where(c1 > c0, (target - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.5)
        return (g[k - 1] + frac * dx)[:, None]

    # group spins: rejection from a batch-split pool
    def _setup_pool(self, expected_draws: int, pool_seed: int):
        cfg = self.cfg
        deg = max(self.geo.degree(i) for i in range(len(self.geo.sites)))
        # typical acceptance sits near exp(-|J| deg M); the pool grows on demand
        slack = math.exp(min(abs(cfg.J) * deg * cfg.interaction.M, 3.0))
        self.chunk = int(math.ceil(1.25 * slack * expected_draws / self.nb)) + 64
        self.pool_seeds = np.random.SeedSequence(int(pool_seed))
        self.pool = np.empty((self.nb, 0, cfg.structure.dim))
        self.ptr = np.zeros(self.nb, dtype=np.int64)
        self.pool_meta = {"refills": 0}
        self._refill()

    def _refill(self):
        # short thinned chains in one wide block: near-independent draws, and the
        # distance solver sees large vectors
        n_samples = POOL_PER_CHAIN
        chains_per_batch = max(-(-self.chunk // n_samples), 4)
        n_chains = self.nb * chains_per_batch
        seed = int(self.pool_seeds.spawn(1)[0].generate_state(1)[0])
        cc = ChainConfig(n_samples=n_samples, burn_in=300, thinning=POOL_THINNING, n_chains=n_chains, seed=seed,
                         block_size=n_chains)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ss = sample_measure(self.cfg.single_site, cc)
        P = ss.points.reshape(self.nb, chains_per_batch * n_samples, -1).copy()
        for b in range(self.nb):
            P[b] = P[b][self.rng.permutation(P.shape[1])]
        self.pool = np.concatenate([self.pool, P], axis=1)
        self.pool_meta["refills"] += 1
        self.pool_meta["pool_per_batch"] = int(self.pool.shape[1])
        self.pool_meta["acceptance_rate"] = ss.meta["acceptance_rate"]

    def _take(self, labels: np.ndarray) -> np.ndarray:
        order = np.argsort(labels, kind="stable")
        lab = labels[order]
        counts = np.bincount(lab, minlength=self.nb)
        while np.any(self.ptr + counts > self.pool.shape[1]):
            self._refill()
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        rank = np.arange(lab.size) - starts[lab]
        out = np.empty((labels.size, self.pool.shape[2]))
        out[order] = self.pool[lab, self.ptr[lab] + rank]
        self.ptr = self.ptr + counts
        return out

    def field_energy(self, i: int, X: np.ndarray, cand: np.ndarray) -> np.ndarray:
        """sum over neighbors j of psi(spin_j, cand); cand may carry extra trailing axes."""
        h = 0.0
        for j in self.geo.inner_nbrs[i]:
            h = h + self.inter.eval(X[:, j], cand)
        for j in self.geo.shell_nbrs[i]:
            h = h + self.inter.eval(self.bd[j], cand)
        return h

    def draw(self, i: int, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """New spins for site ``i`` given the rest of ``X`` (rows are independent)."""
        J = self.cfg.J
        if self.cfg._one_d:
            cand = self.grid[None, :, None]
            Xe = X[:, None]
            h = 0.0
            for j in self.geo.inner_nbrs[i]:
                h = h + self.inter.eval(Xe[:, :, j], cand)
            for j in self.geo.shell_nbrs[i]:
                h = h + self.inter.eval(self.bd[j][None, None], cand)
            logw = -self.Ugrid[None, :] + J * h
            logw = np.broadcast_to(logw, (X.shape[0], self.grid.size))
            self.accepted += X.shape[0]
            self.proposed += X.shape[0]
            return self._grid_draw(np.array(logw))
        n = X.shape[0]
        out = np.empty((n, X.shape[2]))
        todo = np.arange(n)
        bound = abs(J) * self.geo.degree(i) * self.inter.M
        for _ in range(MAX_REJECTION_ROUNDS):
            cand = self._take(labels[todo])
            self.proposed += todo.size
            if J == 0:
                out[todo] = cand
                self.accepted += todo.size
                return out
            h = self.field_energy(i, X[todo], cand)
            ok = np.log(self.rng.random(todo.size)) < J * h - bound
            out[todo[ok]] = cand[ok]
            self.accepted += int(ok.sum())
            todo = todo[~ok]
            if todo.size == 0:
                return out
        raise NumericError(f"rejection sampler did not finish for site {i}")

    def sweep(self, X: np.ndarray, labels: np.ndarray) -> None:
        for cls in self.geo.classes:
            for i in cls:
                X[:, i] = self.draw(i, X, labels)

    def meta(self) -> dict:
        out = {"acceptance": self.accepted / max(self.proposed, 1)}
        if hasattr(self, "pool"):
            out.update(self.pool_meta)
        return out


def _seeds(seed: int, k: int):
    return np.random.SeedSequence(int(seed)).spawn(k)


def _replica_labels(R: int, nb: int = N_BATCHES) -> np.ndarray:
    if R < nb:
        raise DomainError(f"need at least {nb} replicas")
    return (np.arange(R) * nb) // R


def _start_array(cfg: LatticeConfig, start) -> np.ndarray:
    geo = cfg.geometry()
    if start is None:
        return np.zeros((len(geo.sites), cfg.structure.dim))
    if isinstance(start, SpinField):
        return np.array(start.values)
    if isinstance(start, GroupPoint):
        return np.tile(start.as_array(), (len(geo.sites), 1))
    return np.array(start, dtype=float)


# -- samples of the field ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FieldSample:
    """Configurations ``(N, sites, dim)`` with batch labels (replica groups)."""

    structure: HTypeStructure
    points: np.ndarray
    labels: np.ndarray
    sites: Tuple[int, ...]
    meta: Dict = field(default_factory=dict)

    def __len__(self):
        return self.points.shape[0]

    def batcher(self) -> Batcher:
        return Batcher(self.labels)

    def site(self, j: int) -> SampleSet:
        k = self.sites.index(j)
        return SampleSet(self.structure, self.points[:, k], None, None, {"site": j})


def local_spec_sample(cfg: LatticeConfig, Lam: Sequence, omega, mcmc: ChainConfig) -> FieldSample:
    """Independent draws of the spins in ``Lam`` from E^omega_Lam.

    ``Lam`` holds site tuples or interior indices and must lie in one
    parity class, where the conditional law is a product over sites.
    ``mcmc.n_samples`` draws are made; ``mcmc.seed`` fixes them.
    """
    geo = cfg.geometry()
    idx = [geo.index[tuple(s)] if not isinstance(s, (int, np.integer)) else int(s) for s in Lam]
    if len({int(geo.parity[i]) for i in idx}) > 1:
        raise DomainError("Lambda spans both parity classes; the product structure is lost")
    N = mcmc.n_samples
    labels = _replica_labels(N)
    s_pool, s_draw = _seeds(mcmc.seed, 2)
    rng = np.random.default_rng(s_draw)
    kern = _Kernel(cfg, rng, N * len(idx), pool_seed=int(s_pool.generate_state(1)[0]))
    X = np.tile(_start_array(cfg, omega), (N, 1, 1))
    for i in idx:
        X[:, i] = kern.draw(i, X, labels)
    return FieldSample(cfg.structure, X[:, idx], labels, tuple(idx), {"kernel": kern.meta()})


def sample_gibbs(cfg: LatticeConfig, mcmc: ChainConfig, start=None) -> FieldSample:
    """Long-run sweep chain: ``n_chains`` replicas, ``burn_in`` sweeps, then ``n_samples`` records.

    Batches group whole replicas, so their means are independent.
    """
    R = mcmc.n_chains
    labels = _replica_labels(R)
    total = mcmc.burn_in + mcmc.n_samples * mcmc.thinning
    K = len(cfg.geometry().sites)
    s_pool, s_draw = _seeds(mcmc.seed, 2)
    rng = np.random.default_rng(s_draw)
    kern = _Kernel(cfg, rng, R * K * total, pool_seed=int(s_pool.generate_state(1)[0]))
    X = np.tile(_start_array(cfg, start), (R, 1, 1))
    rec = np.empty((R, mcmc.n_samples, K, cfg.structure.dim))
    k = 0
    for sweep in range(total):
        kern.sweep(X, labels)
        if sweep >= mcmc.burn_in and (sweep - mcmc.burn_in + 1) % mcmc.thinning == 0:
            rec[:, k] = X
            k += 1
    pts = rec.reshape(R * mcmc.n_samples, K, -1)
    lab = np.repeat(labels, mcmc.n_samples)
    meta = {"kernel": kern.meta(), "config": mcmc.to_dict(), "lattice": cfg.to_dict()}
    return FieldSample(cfg.structure, pts, lab, tuple(range(K)), meta)


def sweep_P(cfg: LatticeConfig, fld: SpinField, mcmc: ChainConfig) -> SpinField:
    """One application of the sweep kernel (Gamma_0 then Gamma_1) to a single field."""
    s_pool, s_draw = _seeds(mcmc.seed, 2)
    rng = np.random.default_rng(s_draw)
    K = len(cfg.geometry().sites)
    labels = np.zeros(1, dtype=np.intp)
    kern = _Kernel(cfg, rng, 4 * K, nb=1, pool_seed=int(s_pool.generate_state(1)[0]))
    X = np.array(fld.values)[None]
    kern.sweep(X, labels)
    return SpinField(cfg.structure, cfg.D, cfg.side, X[0])


# -- cylinder functions -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Cylinder:
    """A function of finitely many interior spins.

    ``fn`` maps ``(N, k, dim)`` (the spins at ``sites``) to ``(N,)``;
    ``grad`` returns the per-site horizontal gradients ``(N, k, m)``.
    """

    sites: Tuple[int, ...]
    fn: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str

    def values(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(X[:, list(self.sites)]), dtype=float)

    def site_grads(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.grad(X[:, list(self.sites)]), dtype=float)


def lift(structure: HTypeStructure, g: ScalarField, site: int, name: Optional[str] = None) -> Cylinder:
    return Cylinder((site,), lambda Y: g.eval(Y[:, 0]),
                    lambda Y: horizontal_gradient_arrays(structure, g, Y[:, 0])[:, None],
                    name or f"{g.name}@{site}")


def site_sum(structure: HTypeStructure, g: ScalarField, sites: Sequence[int], name: Optional[str] = None) -> Cylinder:
    sites = tuple(sites)

    def fn(Y):
        return sum(g.eval(Y[:, k]) for k in range(len(sites)))

    def gr(Y):
        return np.stack([horizontal_gradient_arrays(structure, g, Y[:, k]) for k in range(len(sites))], axis=1)

    return Cylinder(sites, fn, gr, name or f"sum:{g.name}@{'-'.join(map(str, sites))}")


def site_product(structure: HTypeStructure, g: ScalarField, a: int, h: ScalarField, b: int,
                 name: Optional[str] = None) -> Cylinder:
    def fn(Y):
        return g.eval(Y[:, 0]) * h.eval(Y[:, 1])

    def gr(Y):
        ga = horizontal_gradient_arrays(structure, g, Y[:, 0]) * h.eval(Y[:, 1])[:, None]
        gb = horizontal_gradient_arrays(structure, h, Y[:, 1]) * g.eval(Y[:, 0])[:, None]
        return np.stack([ga, gb], axis=1)

    return Cylinder((a, b), fn, gr, name or f"prod:{g.name}@{a}*{h.name}@{b}")


def center_distance(cfg: LatticeConfig) -> Cylinder:
    """d(spin at the box center), the default sweep observable."""
    S = cfg.structure
    base = standard_corpus(MeasureSpec(S) if not isinstance(cfg.single_site, MeasureSpec) else cfg.single_site)
    return lift(S, base["d"], cfg.geometry().center(), "d@center")


PAIR_IDS = ("tanh_d", "sig_d", "gauss_d", "inv1p_d2", "sig_x1")


def gibbs_corpus(cfg: LatticeConfig, base: Optional[FunctionCorpus] = None) -> List[Cylinder]:
    """Single-site lifts of ``base`` at the center, plus sums and products over a center bond."""
    S = cfg.structure
    if base is None:
        spec = cfg.single_site if isinstance(cfg.single_site, MeasureSpec) else MeasureSpec(S)
        base = standard_corpus(spec)
    geo = cfg.geometry()
    c = geo.center()
    out = [lift(S, f, c, f"{f.name}@c") for f in base]
    if geo.inner_nbrs[c]:
        nb = geo.inner_nbrs[c][0]
        for fid in PAIR_IDS:
            if fid in base.ids:
                f = base[fid]
                out.append(site_sum(S, f, (c, nb), f"sum:{fid}"))
                out.append(site_product(S, f, c, f, nb, f"prod:{fid}"))
    return out


def conditional_expectation(cfg: LatticeConfig, Lam: Sequence, omega, f: Cylinder, mcmc: ChainConfig) -> Estimate:
    """E^omega_Lam f; exact when ``f`` does not see ``Lam``. Unpacks as (mean, se)."""
    geo = cfg.geometry()
    idx = [geo.index[tuple(s)] if not isinstance(s, (int, np.integer)) else int(s) for s in Lam]
    base = _start_array(cfg, omega)
    if not set(idx) & set(f.sites):
        return Estimate.exact(float(f.values(base[None])[0]))
    fs = local_spec_sample(cfg, idx, omega, mcmc)
    X = np.tile(base, (len(fs), 1, 1))
    X[:, idx] = fs.points
    v = f.values(X)
    if np.ptp(v) == 0:
        return Estimate.exact(float(v[0]))
    return fs.batcher().mean(v)


# -- sweep convergence ------------------------------------------------------------------

@dataclass
class SweepReport:
    r: int
    f_estimates: Dict[str, List[Tuple[int, Estimate]]]
    fitted_rate: Union[float, str]
    r_squared: Optional[float]
    merged_at: Optional[int]
    gradient_contraction_eps: Optional[Estimate] = None
    J: float = 0.0
    note: str = ""

    @property
    def converged(self) -> bool:
        return self.merged_at is not None and self.merged_at <= self.r

    def to_dict(self) -> dict:
        from .reports import to_jsonable
        return to_jsonable({
            "r": self.r, "J": self.J,
            "f_estimates": {k: [[r, e] for r, e in v] for k, v in self.f_estimates.items()},
            "fitted_rate": self.fitted_rate, "r_squared": self.r_squared, "merged_at": self.merged_at,
            "gradient_contraction_eps": self.gradient_contraction_eps, "note": self.note})


def default_starts(cfg: LatticeConfig) -> Dict[str, np.ndarray]:
    """Two starting fields: all spins at the identity, and all spins at x_1 = 2."""
    S = cfg.structure
    far = np.zeros(S.dim)
    far[0] = 2.0
    K = len(cfg.geometry().sites)
    return {"identity": np.zeros((K, S.dim)), "far": np.tile(far, (K, 1))}


def iterate_sweep(cfg: LatticeConfig, f: Cylinder, r_max: int, mcmc: ChainConfig,
                  starts: Optional[Dict[str, np.ndarray]] = None) -> SweepReport:
    """P^r f from two starting fields, r = 0..r_max, and the geometric rate of their gap.

    The rate is fitted by weighted least squares on log|gap_r| over the
    sweeps where the gap exceeds 3 SE (r = 0 is exact). If no sweep
    r >= 1 resolves a gap, the starts decorrelated after one sweep and
    the rate is reported as 0. A slope whose 3 SE interval reaches 0
    gives "no-contraction".
    """
    starts = starts or default_starts(cfg)
    if len(starts) != 2:
        raise DomainError("need exactly two starting fields")
    R = mcmc.n_chains
    labels = _replica_labels(R)
    K = len(cfg.geometry().sites)
    seeds = _seeds(mcmc.seed, 4)
    ests: Dict[str, List[Tuple[int, Estimate]]] = {}
    for k, (name, st) in enumerate(sorted(starts.items())):
        rng = np.random.default_rng(seeds[2 * k])
        kern = _Kernel(cfg, rng, R * K * r_max, pool_seed=int(seeds[2 * k + 1].generate_state(1)[0]))
        X = np.tile(np.asarray(st, dtype=float), (R, 1, 1))
        b = Batcher(labels)
        row = [(0, Estimate.exact(float(f.values(X[:1])[0])))]
        for r in range(1, r_max + 1):
            kern.sweep(X, labels)
            row.append((r, b.mean(f.values(X))))
        ests[name] = row
    (na, ra), (nb_, rb) = sorted(ests.items())
    gaps = [(r, a - b) for (r, a), (_, b) in zip(ra, rb)]
    merged_at = None
    for r, g in gaps:
        if abs(g.value) <= N_SE * g.se:
            if merged_at is None:
                merged_at = r
        else:
            merged_at = None
    rep = SweepReport(r_max, ests, "no-contraction", None, merged_at, J=cfg.J)
    pts = [(r, g) for r, g in gaps if abs(g.value) > N_SE * g.se or r == 0]
    if gaps[0][1].value == 0:
        rep.fitted_rate, rep.note = 0.0, "starts give equal f"
        return rep
    if len(pts) < 2:
        rep.fitted_rate, rep.note = 0.0, "decorrelated after one sweep"
        return rep
    r_arr = np.array([p[0] for p in pts], dtype=float)
    y = np.log(np.abs([p[1].value for p in pts]))
    # se of log|gap| is se/|gap|; the exact r = 0 point gets the smallest resolved se
    sd = np.array([p[1].se / abs(p[1].value) for p in pts])
    pos = sd[sd > 0]
    sd = np.where(sd > 0, sd, pos.min() if pos.size else 1.0)
    w = 1.0 / sd ** 2
    A = np.stack([np.ones_like(r_arr), r_arr], axis=1)
    cov = np.linalg.inv(A.T @ (A * w[:, None]))
    coef = cov @ (A.T @ (w * y))
    slope, slope_se = float(coef[1]), float(math.sqrt(cov[1, 1]))
    resid = y - A @ coef
    ss_tot = float(np.sum(w * (y - np.average(y, weights=w)) ** 2))
    rep.r_squared = 1.0 - float(np.sum(w * resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    if len(pts) == 2:
        # two points determine the line; the interval comes from the resolved gap alone
        slope_se = float(sd[1])
    if slope + N_SE * slope_se < 0:
        rep.fitted_rate = float(min(1.0, math.exp(slope)))
    rep.note = f"slope {slope:.4g} +/- {slope_se:.2g} over {len(pts)} points"
    return rep


# -- gradient contraction ---------------------------------------------------------------

def _norms(G: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(G * G, axis=-1))


def verify_gradient_contraction(cfg: LatticeConfig, corpus: Sequence[Cylinder], mcmc: ChainConfig,
                                c0: Optional[float] = None, n_outer: int = 512, n_inner: int = 128,
                                sample: Optional[FieldSample] = None) -> InequalityReport:
    """Fit the smallest eps with nu|grad_k E_l f| <= nu|grad_k f| + eps nu|grad_l f|.

    Gradients of conditional expectations use the score identity
    grad_i E f = E grad_i f + J Cov(f, sum_j grad_i psi(y_j, x_i)), with
    inner samples of the integrated class drawn afresh for each outer
    configuration. Both (k, l) = (0, 1) and (1, 0) enter the maximum; the
    fitted eps is clipped at 0.
    """
    S = cfg.structure
    geo = cfg.geometry()
    nu = sample if sample is not None else sample_gibbs(cfg, mcmc)
    take = np.linspace(0, len(nu) - 1, min(n_outer, len(nu))).astype(int)
    Xo = nu.points[take]
    lab_o = nu.labels[take]
    bo = Batcher(lab_o)
    n = Xo.shape[0]
    rep = InequalityReport(Kind.GIBBS_CONTRACTION, corpus_id="gibbs", n_eff=float(n))
    rep.details.update(J=cfg.J, n_outer=n, n_inner=n_inner, scope=SCOPE, M=cfg.interaction.M)
    rng = np.random.default_rng(_seeds(mcmc.seed, 3)[2])
    kern = _Kernel(cfg, rng, n * n_inner * len(geo.sites),
                   pool_seed=int(_seeds(mcmc.seed, 4)[3].generate_state(1)[0]))
    eps_list = []
    for k, l in ((0, 1), (1, 0)):
        Ks, Ls = geo.classes[k], geo.classes[l]
        Xin = np.repeat(Xo, n_inner, axis=0)
        lab_in = np.repeat(lab_o, n_inner)
        for i in Ls:
            Xin[:, i] = kern.draw(i, Xin, lab_in)
        for f in corpus:
            vo = f.values(Xo)
            if np.ptp(vo) == 0 and len(set(f.sites) & set(Ls)) == 0:
                continue
            Go = _norms(f.site_grads(Xo))
            pos = {s: j for j, s in enumerate(f.sites)}
            A = bo.mean(sum((Go[:, pos[s]] for s in Ks if s in pos), np.zeros(n)))
            B = bo.mean(sum((Go[:, pos[s]] for s in Ls if s in pos), np.zeros(n)))
            vin = f.values(Xin).reshape(n, n_inner)
            Gin = f.site_grads(Xin).reshape(n, n_inner, len(f.sites), S.m)
            dv = vin - vin.mean(axis=1, keepdims=True)
            lhs_o = np.zeros(n)
            for s in Ks:
                gs = Gin[:, :, pos[s]].mean(axis=1) if s in pos else np.zeros((n, S.m))
                for j in geo.inner_nbrs[s]:
                    if j in pos and j in Ls and cfg.J != 0:
                        W = cfg.interaction.grad_b(Xin[:, j], Xin[:, s]).reshape(n, n_inner, S.m)
                        W = W - W.mean(axis=1, keepdims=True)
                        gs = gs + cfg.J * np.einsum("ab,abm->am", dv, W) / (n_inner - 1)
                lhs_o += _norms(gs)
            lhs = bo.mean(lhs_o)
            tag = f"{f.name}[{k}<-{l}]"
            if not B.value > 0:
                rep.per_function.append(FunctionResult(tag, lhs, {"grad_k": A, "grad_l": B}, None, "no grad_l mass"))
                continue
            e = (lhs - A) / B
            rep.per_function.append(FunctionResult(tag, lhs, {"grad_k": A, "grad_l": B}, e))
            eps_list.append(e)
    if eps_list:
        m = stack_max(eps_list)
        rep.fitted_constants["epsilon"] = Estimate(max(m.value, 0.0), np.maximum(m.reps, 0.0))
        rep.details["epsilon_unclipped"] = m
    if c0 is not None:
        rep.details["c0"] = float(c0)
        rep.details["proof_form_epsilon"] = 32.0 * cfg.interaction.M * float(c0) * abs(cfg.J)
        rep.details["J0_proof_form"] = cfg.J0_proof_form(float(c0))
    rep.details["kernel"] = kern.meta()
    return rep.finalize()


def contraction_trend(Js: Sequence[float], eps: Sequence[Estimate]) -> dict:
    """Least-squares slope of eps against |J| through the origin, with its SE."""
    x = np.abs(np.asarray(Js, dtype=float))
    y = np.array([e.value for e in eps])
    se = np.array([max(e.se, 1e-12) for e in eps])
    w = 1.0 / se ** 2
    denom = float(np.sum(w * x * x))
    if denom == 0:
        return {"slope": 0.0, "slope_se": math.inf, "excludes_zero": False}
    slope = float(np.sum(w * x * y) / denom)
    slope_se = float(math.sqrt(1.0 / denom))
    resid = y - slope * x
    lin = {"slope": slope, "slope_se": slope_se, "excludes_zero": slope > N_SE * slope_se,
           "max_residual_over_se": float(np.max(np.abs(resid) / se))}
    return lin


# -- Gibbs-level entropy inequality --------------------------------------------------

def verify_gibbs_l1phi(cfg: LatticeConfig, corpus: Sequence[Cylinder], mcmc: ChainConfig, ps: PhiSpec,
                       sweep: Optional[SweepReport] = None, sample: Optional[FieldSample] = None,
                       pt: Optional[ProfileTable] = None, min_corpus: int = MIN_CORPUS,
                       sweep_mcmc: Optional[ChainConfig] = None) -> InequalityReport:
    """Ent^Phi_nu(|f|) <= C nu(sum_i |grad_i f|) with nu the long-run sweep law.

    Also fits the IFI_2 form U_2(nu f) <= nu sqrt(U_2(f)^2 + C'' sum_i |grad_i f|^2)
    for f in [0, 1] and the cylinder-length variant with sqrt(k) |grad f|_2
    (k = number of sites f depends on). The sweep diagnostic runs first
    unless supplied; without demonstrated merging the report is refused.
    """
    rep = InequalityReport(Kind.GIBBS_L1PHI, corpus_id="gibbs", n_eff=0.0)
    rep.details.update(scope=SCOPE, J=cfg.J, beta=ps.beta, lattice=cfg.to_dict())
    if sweep is None:
        sm = sweep_mcmc or replace(mcmc, n_chains=max(N_BATCHES * 16, 512))
        sweep = iterate_sweep(cfg, center_distance(cfg), MERGE_BY, sm)
    rep.details["sweep"] = sweep.to_dict()
    if not sweep.converged:
        rep.status = Status.REFUSED
        rep.warnings.append("sweep chain did not demonstrate merging; constants not quoted")
        return rep
    nu = sample if sample is not None else sample_gibbs(cfg, mcmc)
    rep.n_eff = float(len(nu))
    rep.details["sample"] = nu.meta.get("kernel", {})
    b = nu.batcher()
    pt = pt or profile_Uq(2.0)
    rows, ifi, l2 = [], [], []
    for f in corpus:
        v = f.values(nu.points)
        if not np.all(np.isfinite(v)):
            raise NumericError(f"{f.name} is not finite on the sample")
        if np.ptp(v) == 0:
            rep.excluded.append(f.name)
            continue
        G = _norms(f.site_grads(nu.points))
        g1 = G.sum(axis=1)
        g2 = np.sum(G * G, axis=1)
        a = np.abs(v)
        lhs = entropy_from_means(ps, b.mean(_phi(a, ps.beta)), b.mean(a))
        rhs = b.mean(g1)
        if not rhs.value > 0:
            rep.excluded.append(f.name)
            continue
        ratio = lhs / rhs
        rep.per_function.append(FunctionResult(f.name, lhs, {"grad_l1": rhs}, ratio))
        rows.append((f.name, lhs, rhs, ratio))
        l2.append(lhs / (math.sqrt(len(f.sites)) * b.mean(np.sqrt(g2))))
        if v.min() >= -1e-9 and v.max() <= 1 + 1e-9:
            u = np.clip(v, 0, 1)
            m = b.mean(u)
            L = Estimate(pt(m.value), pt(m.reps))
            ifi.append(_smallest_C(b, pt(u), g2, L))
    if len(corpus) < min_corpus:
        rep.status = Status.REFUSED
        rep.warnings.append(f"corpus has {len(corpus)} entries; at least {min_corpus} needed to fit constants")
        return rep
    if rows:
        C = stack_max([r[3] for r in rows])
        rep.fitted_constants["C"] = C
        rep.fitted_constants["C_sqrtN"] = stack_max(l2)
        for fid, lhs, rhs, _ in rows:
            if _exceeds(lhs, [(C, rhs)], False)[0]:
                rep.violations.append(fid)
    if ifi:
        rep.fitted_constants["C_dprime"] = stack_max(ifi)
    return rep.finalize()
