"""Step-2 group algebra for H-type structures.

Points live in exponential coordinates ``(x, z)`` with ``x`` in R^m and
``z`` in R^n. Most functions take either a :class:`GroupPoint` or a stacked
array of shape ``(N, m + n)``; the array path is what the samplers use.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DomainError, NumericError, StructureError

# Kaplan gauge constant for the 1/2 frame convention.
KAPLAN_C = 16.0

FD_REL_STEP = 1e-5
FD2_REL_STEP = 1e-4


@dataclass(frozen=True, eq=False)
class HTypeStructure:
    """Composition data of a step-2 group: ``m``, ``n`` and the skew maps ``J``.

    With ``strict=True`` (the default) the J-property
    ``(sum_k u_k J_k)^2 = -|u|^2 I`` is required. ``strict=False`` accepts any
    skew family; such structures support the group law but not
    :func:`subriem.distance.cc_distance`.
    """

    m: int
    n: int
    J: np.ndarray
    name: Optional[str] = None
    strict: bool = True
    is_htype: bool = field(init=False, default=True)

    def __post_init__(self):
        m, n = int(self.m), int(self.n)
        if m < 1 or n < 0:
            raise StructureError(f"need m >= 1 and n >= 0, got m={m}, n={n}")
        J = np.asarray(self.J, dtype=float)
        if n == 0:
            J = J.reshape(0, m, m)
        if J.shape != (n, m, m):
            raise StructureError(f"J must have shape ({n}, {m}, {m}), got {J.shape}")
        if not np.all(np.isfinite(J)):
            raise StructureError("J has non-finite entries")
        skew = np.abs(J + np.transpose(J, (0, 2, 1)))
        if skew.size and skew.max() > 1e-12:
            raise StructureError(f"J_k not skew-symmetric (max |J + J^T| = {skew.max():.3g})")
        J = J.copy()
        J.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "J", J)
        ok = self.jproperty_residual(n_trials=32) <= 1e-10
        object.__setattr__(self, "is_htype", ok)
        if self.strict and not ok:
            raise StructureError("structure violates (J_u)^2 = -|u|^2 I")

    @property
    def Q(self) -> int:
        """Homogeneous dimension m + 2n."""
        return self.m + 2 * self.n

    @property
    def dim(self) -> int:
        return self.m + self.n

    def J_u(self, u: np.ndarray) -> np.ndarray:
        """Return sum_k u_k J_k; ``u`` may be stacked as (N, n)."""
        return np.tensordot(np.asarray(u, dtype=float), self.J, axes=([-1], [0]))

    def jproperty_residual(self, n_trials: int = 100, seed: int = 0) -> float:
        """Max entrywise error of (J_u)^2 + |u|^2 I over random ``u``."""
        if self.n == 0:
            return 0.0
        rng = np.random.default_rng(seed)
        u = rng.standard_normal((n_trials, self.n))
        Ju = self.J_u(u)
        sq = Ju @ Ju
        target = -np.sum(u * u, axis=1)[:, None, None] * np.eye(self.m)
        return float(np.max(np.abs(sq - target)))

    def key(self) -> tuple:
        return (self.m, self.n, self.J.tobytes())

    def __eq__(self, other):
        return isinstance(other, HTypeStructure) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        label = self.name or "custom"
        return f"HTypeStructure({label}, m={self.m}, n={self.n})"

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {"m": self.m, "n": self.n, "J": self.J.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "HTypeStructure":
        extra = set(doc) - {"m", "n", "J", "name"}
        if extra:
            raise StructureError(f"unknown keys in structure document: {sorted(extra)}")
        return cls(int(doc["m"]), int(doc["n"]), np.asarray(doc["J"], dtype=float),
                   name=doc.get("name"))

    @classmethod
    def from_json(cls, text: str) -> "HTypeStructure":
        return cls.from_dict(json.loads(text))


# -- presets ---------------------------------------------------------------

def _rot() -> np.ndarray:
    return np.array([[0.0, -1.0], [1.0, 0.0]])


def heisenberg(k: int = 1) -> HTypeStructure:
    """Isotropic Heisenberg group H^k: m = 2k, n = 1."""
    J = np.kron(np.eye(k), _rot())[None]
    return HTypeStructure(2 * k, 1, J, name=f"heisenberg{k}")


def quaternionic() -> HTypeStructure:
    """Quaternionic H-type group: R^4 = H with left multiplication by i, j, k."""
    Li = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], float)
    Lj = np.array([[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]], float)
    Lk = np.array([[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]], float)
    return HTypeStructure(4, 3, np.stack([Li, Lj, Lk]), name="quaternionic")


def euclidean(m: int = 1) -> HTypeStructure:
    return HTypeStructure(m, 0, np.zeros((0, m, m)), name=f"euclidean({m})")


PRESET_NAMES = ("heisenberg1", "heisenberg2", "quaternionic", "euclidean(m)")


def preset(name: str) -> HTypeStructure:
    """Resolve a preset name such as ``heisenberg1`` or ``euclidean(3)``."""
    name = name.strip()
    if name == "heisenberg1":
        return heisenberg(1)
    if name == "heisenberg2":
        return heisenberg(2)
    if name == "quaternionic":
        return quaternionic()
    mt = re.fullmatch(r"euclidean\((\d+)\)", name)
    if mt:
        return euclidean(int(mt.group(1)))
    if name == "euclidean":
        return euclidean(1)
    raise StructureError(f"unknown preset {name!r}; known: {', '.join(PRESET_NAMES)}")


def load_structure(spec: Union[str, dict, HTypeStructure]) -> HTypeStructure:
    """Accept a structure, a preset name, or a ``{m, n, J}`` mapping."""
    if isinstance(spec, HTypeStructure):
        return spec
    if isinstance(spec, dict):
        return HTypeStructure.from_dict(spec)
    return preset(spec)


# -- points ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GroupPoint:
    structure: HTypeStructure
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float)).copy()
        z = np.asarray(self.z, dtype=float).reshape(-1).copy()
        s = self.structure
        if x.shape != (s.m,) or z.shape != (s.n,):
            raise StructureError(
                f"point dims ({x.size}, {z.size}) do not match structure ({s.m}, {s.n})")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise NumericError("point has non-finite coordinates")
        x.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_array(cls, structure: HTypeStructure, a) -> "GroupPoint":
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != structure.dim:
            raise StructureError(f"expected {structure.dim} coordinates, got {a.size}")
        return cls(structure, a[: structure.m], a[structure.m:])

    @classmethod
    def identity(cls, structure: HTypeStructure) -> "GroupPoint":
        return cls(structure, np.zeros(structure.m), np.zeros(structure.n))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.z])

    def __matmul__(self, other: "GroupPoint") -> "GroupPoint":
        return group_mul(self, other)

    def __eq__(self, other):
        return (isinstance(other, GroupPoint) and self.structure == other.structure
                and np.array_equal(self.x, other.x) and np.array_equal(self.z, other.z))

    def __hash__(self):
        return hash((self.structure, self.x.tobytes(), self.z.tobytes()))

    def __repr__(self):
        return f"GroupPoint(x={self.x.tolist()}, z={self.z.tolist()})"


PointLike = Union[GroupPoint, np.ndarray]


def _check_array(structure: HTypeStructure, P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.shape[-1] != structure.dim:
        raise StructureError(f"last axis must have length {structure.dim}, got {P.shape[-1]}")
    return P


def mul_arrays(structure: HTypeStructure, P, R) -> np.ndarray:
    """Vectorized group law on stacked coordinates (broadcasting)."""
    P = _check_array(structure, P)
    R = _check_array(structure, R)
    m = structure.m
    x, z = P[..., :m], P[..., m:]
    xp, zp = R[..., :m], R[..., m:]
    # <J_k x, x'> = x'^T J_k x
    bracket = np.einsum("kij,...j,...i->...k", structure.J, x, xp)
    batch = np.broadcast_shapes(P.shape[:-1], R.shape[:-1])
    xs = np.broadcast_to(x + xp, batch + (m,))
    zs = np.broadcast_to(z + zp + 0.5 * bracket, batch + (structure.n,))
    return np.concatenate([xs, zs], axis=-1)


def inverse_arrays(structure: HTypeStructure, P) -> np.ndarray:
    return -_check_array(structure, P)


def dilate_arrays(structure: HTypeStructure, P, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("dilation factor must be positive")
    P = _check_array(structure, P)
    m = structure.m
    r_ = r[..., None] if r.ndim else r
    return np.concatenate([P[..., :m] * r_, P[..., m:] * r_ ** 2], axis=-1)


def group_mul(a: GroupPoint, b: GroupPoint) -> GroupPoint:
    if a.structure != b.structure:
        raise StructureError("points belong to different structures")
    out = mul_arrays(a.structure, a.as_array(), b.as_array())
    return GroupPoint.from_array(a.structure, out)


def group_inverse(g: GroupPoint) -> GroupPoint:
    return GroupPoint(g.structure, -g.x, -g.z)


def dilate(g: GroupPoint, r: float) -> GroupPoint:
    if not r > 0:
        raise DomainError(f"dilation factor must be positive, got {r}")
    return GroupPoint(g.structure, r * g.x, r * r * g.z)


def kaplan_norm_arrays(structure: HTypeStructure, P) -> np.ndarray:
    P = _check_array(structure, P)
    m = structure.m
    r = np.linalg.norm(P[..., :m], axis=-1)
    zeta = np.linalg.norm(P[..., m:], axis=-1) if structure.n else np.zeros_like(r)
    # factor out the homogeneous scale so x^4 cannot under- or overflow
    s = np.maximum(r, np.sqrt(zeta))
    safe = np.where(s > 0, s, 1.0)
    return np.where(s > 0, safe * ((r / safe) ** 4 + KAPLAN_C * (zeta / safe ** 2) ** 2) ** 0.25, 0.0)


def kaplan_norm(g: GroupPoint) -> float:
    return float(kaplan_norm_arrays(g.structure, g.as_array()))


# -- scalar fields -----------------------------------------------------------

@dataclass(frozen=True)
class HorizontalVector:
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float).copy()
        c.setflags(write=False)
        object.__setattr__(self, "components", c)

    @property
    def length(self) -> float:
        return float(np.sqrt(np.sum(self.components ** 2)))


@dataclass(frozen=True)
class ScalarField:
    """A function on the group, evaluated on stacked coordinates.

    ``eval`` maps an ``(N, m + n)`` array to ``(N,)``. ``grad_hint``, if
    given, returns the Euclidean partials as an ``(N, m + n)`` array.
    Calling the field on a :class:`GroupPoint` returns a float.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    grad_hint: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz_hint: Optional[float] = None
    name: str = "f"

    def __call__(self, g):
        if isinstance(g, GroupPoint):
            return float(np.asarray(self.eval(g.as_array()[None]))[0])
        P = np.asarray(g, dtype=float)
        if P.ndim == 1:
            return float(np.asarray(self.eval(P[None]))[0])
        return np.asarray(self.eval(P), dtype=float)


def frame_apply(structure: HTypeStructure, P, egrad) -> np.ndarray:
    """Convert Euclidean partials into horizontal-frame components X_j f."""
    P = _check_array(structure, P)
    m = structure.m
    gx, gz = egrad[..., :m], egrad[..., m:]
    if structure.n == 0:
        return np.array(gx, dtype=float)
    # (J_k x)_j = sum_i J[k, j, i] x_i
    Jx = np.einsum("kji,...i->...kj", structure.J, P[..., :m])
    return gx + 0.5 * np.einsum("...kj,...k->...j", Jx, gz)


def _shift(structure: HTypeStructure, P: np.ndarray, j: int, h: np.ndarray) -> np.ndarray:
    step = np.zeros(P.shape)
    step[..., j] = h
    return mul_arrays(structure, P, step)


def _checked(vals, what):
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericError(f"non-finite value while evaluating {what}")
    return vals


def horizontal_gradient_arrays(structure: HTypeStructure, f: ScalarField, P,
                               use_hint: bool = True) -> np.ndarray:
    """X_j f at each row of ``P``; returns (N, m)."""
    P = np.atleast_2d(_check_array(structure, P))
    if use_hint and f.grad_hint is not None:
        return _checked(frame_apply(structure, P, np.asarray(f.grad_hint(P))), f.name)
    out = np.empty((P.shape[0], structure.m))
    for j in range(structure.m):
        h = FD_REL_STEP * (1.0 + np.abs(P[:, j]))
        fp = f.eval(_shift(structure, P, j, h))
        fm = f.eval(_shift(structure, P, j, -h))
        out[:, j] = (np.asarray(fp) - np.asarray(fm)) / (2 * h)
    return _checked(out, f.name)


def horizontal_gradient(f: ScalarField, g: GroupPoint, use_hint: bool = True) -> HorizontalVector:
    comps = horizontal_gradient_arrays(g.structure, f, g.as_array()[None], use_hint)[0]
    return HorizontalVector(comps)


def sub_laplacian_arrays(structure: HTypeStructure, f: ScalarField, P) -> np.ndarray:
    """sum_j X_j X_j f, by differencing along the one-parameter subgroups."""
    P = np.atleast_2d(_check_array(structure, P))
    total = np.zeros(P.shape[0])
    if f.grad_hint is not None:
        for j in range(structure.m):
            h = FD_REL_STEP * (1.0 + np.abs(P[:, j]))
            gp = horizontal_gradient_arrays(structure, f, _shift(structure, P, j, h))[:, j]
            gm = horizontal_gradient_arrays(structure, f, _shift(structure, P, j, -h))[:, j]
            total += (gp - gm) / (2 * h)
        return _checked(total, f.name)
    f0 = np.asarray(f.eval(P))
    for j in range(structure.m):
        h = FD2_REL_STEP * (1.0 + np.abs(P[:, j]))
        fp = np.asarray(f.eval(_shift(structure, P, j, h)))
        fm = np.asarray(f.eval(_shift(structure, P, j, -h)))
        total += (fp - 2 * f0 + fm) / (h * h)
    return _checked(total, f.name)


def sub_laplacian(f: ScalarField, g: GroupPoint) -> float:
    return float(sub_laplacian_arrays(g.structure, f, g.as_array()[None])[0])


def as_points_array(structure: HTypeStructure, pts: Union[Sequence[GroupPoint], np.ndarray]) -> np.ndarray:
    if isinstance(pts, np.ndarray):
        return np.atleast_2d(_check_array(structure, pts))
    if isinstance(pts, GroupPoint):
        pts = [pts]
    return np.array([p.as_array() for p in pts], dtype=float).reshape(-1, structure.dim)
