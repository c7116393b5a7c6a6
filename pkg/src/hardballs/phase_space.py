"""Hard-ball system on the flat unit torus: parameters, states, and the mass metric.

Positions live in ``[0, 1)^nu`` and are stored as ``(N, nu)`` arrays, as are
velocities and tangent-vector components ("compound vectors").  We never
quotient by uniform translations; every quantity computed downstream is
translation invariant.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import InadmissibleConfiguration, ZeroEnergy


@dataclass(frozen=True)
class ToleranceSet:
    contact_tol: float = 1e-12
    singular_gap: float = 1e-9
    grazing_cos: float = 1e-6
    conservation_tol: float = 1e-9

    def __post_init__(self):
        for name in ("contact_tol", "singular_gap", "grazing_cos", "conservation_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def as_dict(self) -> dict:
        return {
            "contact_tol": self.contact_tol,
            "singular_gap": self.singular_gap,
            "grazing_cos": self.grazing_cos,
            "conservation_tol": self.conservation_tol,
        }


@dataclass(frozen=True)
class SystemParams:
    """N balls of common radius ``r`` on the ``nu``-torus."""

    N: int
    nu: int
    r: float
    masses: tuple[float, ...]
    tolerances: ToleranceSet = field(default_factory=ToleranceSet)

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if self.N < 2:
            raise ValueError("need at least two balls")
        if self.nu < 2:
            raise ValueError("torus dimension must be at least 2")
        if len(self.masses) != self.N:
            raise ValueError(f"expected {self.N} masses, got {len(self.masses)}")
        if any(not m > 0 for m in self.masses):
            raise ValueError("masses must be positive")
        if not 0 < self.r < 0.25:
            raise ValueError("radius must satisfy 0 < r < 1/4")

    @classmethod
    def uniform(cls, N: int, nu: int, r: float, mass: float = 1.0, **kw) -> "SystemParams":
        return cls(N=N, nu=nu, r=r, masses=(mass,) * N, **kw)

    @property
    def M(self) -> float:
        return float(sum(self.masses))

    @property
    def m_min(self) -> float:
        return min(self.masses)

    @property
    def d(self) -> int:
        return self.nu * (self.N - 1)

    @property
    def mass_array(self) -> np.ndarray:
        return np.asarray(self.masses, dtype=float)

    def pairs(self) -> list[tuple[int, int]]:
        return list(combinations(range(self.N), 2))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """Configuration ``q`` and compound velocity ``v``, both ``(N, nu)``."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = _frozen(self.q)
        v = _frozen(self.v)
        if q.ndim != 2 or q.shape != v.shape:
            raise ValueError(f"q and v must be matching (N, nu) arrays, got {q.shape}, {v.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)

    def __eq__(self, other):
        if not isinstance(other, PhasePoint):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.v, other.v)

    __hash__ = None

    @property
    def N(self) -> int:
        return self.q.shape[0]

    @property
    def nu(self) -> int:
        return self.q.shape[1]


class MassMetric:
    """Kinetic-energy inner product on compound vectors."""

    def __init__(self, masses: Sequence[float]):
        self.masses = np.asarray(masses, dtype=float)

    def inner(self, u, w):
        return mass_inner(u, w, self.masses)

    def norm(self, u) -> float:
        return float(np.sqrt(self.inner(u, u)))


def mass_inner(u, w, masses):
    """Return ``sum_i m_i <u_i, w_i>`` for compound vectors of shape ``(N, nu)``.

    Works for float arrays and for object arrays of mpmath numbers.
    """
    u = np.asarray(u)
    w = np.asarray(w)
    masses = np.asarray(masses)
    if u.shape != w.shape or u.ndim != 2 or u.shape[0] != masses.shape[0]:
        raise ValueError(f"shape mismatch: {u.shape}, {w.shape}, {len(masses)} masses")
    # form u * w first so that the result is exactly symmetric in u and w
    return (masses[:, None] * (u * w)).sum()


def kinetic_energy(x: PhasePoint, masses) -> float:
    return 0.5 * float(mass_inner(x.v, x.v, masses))


def total_momentum(x: PhasePoint, masses) -> np.ndarray:
    return np.asarray(masses, dtype=float) @ x.v


def min_image_delta(a, b) -> np.ndarray:
    """Torus difference ``a - b`` reduced to components in ``[-1/2, 1/2)``."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d - np.floor(d + 0.5)
    # d + 0.5 can round up onto an integer just below the +1/2 boundary
    d = np.where(d < -0.5, d + 1.0, d)
    return np.where(d >= 0.5, d - 1.0, d)


def wrap(q) -> np.ndarray:
    """Reduce coordinates to ``[0, 1)``."""
    q = np.mod(q, 1.0)
    # fmod rounding can land exactly on 1.0 for tiny negative inputs
    q[q >= 1.0] = 0.0
    return q


def pair_distances(q: np.ndarray) -> dict[tuple[int, int], float]:
    return {
        (i, j): float(np.linalg.norm(min_image_delta(q[i], q[j])))
        for i, j in combinations(range(q.shape[0]), 2)
    }


def check_admissible(q: np.ndarray, params: SystemParams) -> None:
    limit = 2 * params.r - params.tolerances.contact_tol
    for (i, j), dist in pair_distances(q).items():
        if dist < limit:
            raise InadmissibleConfiguration(
                f"balls {i} and {j} overlap: distance {dist:.6g} < 2r = {2 * params.r:.6g}"
            )


def normalize_state(q, v_raw, params: SystemParams) -> PhasePoint:
    """Shift to zero total momentum and scale to kinetic energy 1/2."""
    q = wrap(np.array(q, dtype=float))
    v = np.array(v_raw, dtype=float)
    if q.shape != (params.N, params.nu) or v.shape != q.shape:
        raise ValueError(f"expected ({params.N}, {params.nu}) arrays")
    check_admissible(q, params)
    m = params.mass_array
    v = v - (m @ v) / params.M
    two_e = float(mass_inner(v, v, m))
    if two_e <= 0.0:
        raise ZeroEnergy("all velocities equal; no energy left after removing momentum")
    v = v / np.sqrt(two_e)
    return PhasePoint(q, v)


def check_normalized(x: PhasePoint, params: SystemParams, tol: float | None = None) -> None:
    tol = params.tolerances.conservation_tol if tol is None else tol
    m = params.mass_array
    e = kinetic_energy(x, m)
    p = total_momentum(x, m)
    if abs(e - 0.5) > tol or np.max(np.abs(p)) > tol:
        raise ValueError(f"state not normalized: E={e!r}, I={p!r}")


def time_reverse(x: PhasePoint) -> PhasePoint:
    return PhasePoint(x.q, -x.v)
