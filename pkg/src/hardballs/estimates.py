"""Computable bounds: relative-velocity bounds, the collision-speed threshold,
the post-collision curvature bound and the linear expansion check."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Iterable

import numpy as np

from .errors import HypothesisUnmet
from .tangent import TangentTrace


@dataclass(frozen=True)
class MassMultiset:
    masses: tuple[float, ...]

    def __post_init__(self):
        ms = tuple(sorted(float(m) for m in self.masses))
        if not ms or any(not m > 0 for m in ms):
            raise ValueError("need a nonempty list of positive masses")
        object.__setattr__(self, "masses", ms)

    @classmethod
    def of(cls, masses: Iterable[float] | "MassMultiset") -> "MassMultiset":
        return masses if isinstance(masses, MassMultiset) else cls(tuple(masses))

    @property
    def M(self) -> float:
        return math.fsum(self.masses)

    @property
    def m_min(self) -> float:
        return self.masses[0]

    def __len__(self) -> int:
        return len(self.masses)


def lemma_3_10_bound(a: float, ms) -> float:
    """Relative speeds stay below ``2 a sqrt(M / m_min)`` if they start below ``a``."""
    ms = MassMultiset.of(ms)
    if a < 0:
        raise ValueError("a must be non-negative")
    return 2.0 * a * math.sqrt(ms.M / ms.m_min)


def _two_class_splits(masses: tuple[float, ...]):
    """All unordered splits into two nonempty classes, as sorted mass tuples."""
    n = len(masses)
    rest = range(1, n)
    for size in range(0, n - 1):
        for extra in combinations(rest, size):
            first = (0,) + extra
            second = tuple(k for k in range(n) if k not in first)
            yield tuple(masses[k] for k in first), tuple(masses[k] for k in second)


@lru_cache(maxsize=None)
def _f(a: float, masses: tuple[float, ...]) -> float:
    n = len(masses)
    if n == 1:
        return 0.0
    if n == 2:
        return a
    g = max(a + _f(a, d1) + _f(a, d2) for d1, d2 in _two_class_splits(masses))
    return 2.0 * math.sqrt(math.fsum(masses) / masses[0]) * g


def f_bound(a: float, ms) -> float:
    """Inductive bound on all relative speeds of a segment with a connected
    collision graph whose collisions all have relative speed at most ``a``.

    One mass gives 0, two masses give ``a``; for more balls the bound is
    ``2 sqrt(M/m_min)`` times the worst ``a + f(D1) + f(D2)`` over two-class
    splits ``(D1, D2)`` of the balls.  Memoized on (a, mass multiset).
    """
    if a < 0:
        raise ValueError("a must be non-negative")
    return _f(float(a), MassMultiset.of(ms).masses)


def g_threshold(ms, *, margin: float = 0.99, method: str = "closed") -> float:
    """Collision-speed threshold ``G`` with ``f_bound(G) <= margin / sqrt(M)``.

    ``method="closed"`` uses the homogeneity ``f(a) = a f(1)``;
    ``method="bisect"`` bisects the monotone map ``a -> f_bound(a)`` instead.
    """
    ms = MassMultiset.of(ms)
    if len(ms) < 2:
        raise ValueError("need at least two masses")
    target = margin / math.sqrt(ms.M)
    if method == "closed":
        return target / f_bound(1.0, ms)
    if method != "bisect":
        raise ValueError(f"unknown method {method!r}")
    lo, hi = 0.0, 1.0
    while f_bound(hi, ms) <= target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f_bound(mid, ms) <= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


def curvature_lower_bound(ev, params) -> float:
    """Guaranteed post-collision curvature of a flat seed planted at ``ev``."""
    return ev.rel_speed / params.r


def curvature(w, masses) -> float:
    """``<dq, dv> / |dq|^2`` of a single tangent vector."""
    from .tangent import minner

    return float(minner(w.dq, w.dv, masses) / minner(w.dq, w.dq, masses))


def max_relative_speed(v: np.ndarray) -> float:
    v = np.asarray(v)
    i, j = np.triu_indices(v.shape[0], k=1)
    return float(np.sqrt(((v[i] - v[j]) ** 2).sum(axis=1)).max())


@dataclass(frozen=True)
class ExpansionReport:
    c0: float
    n_samples: int
    violations: int
    min_slack: float
    slack_tol: float

    @property
    def ok(self) -> bool:
        return self.violations == 0


def prop_3_5_check(trace: TangentTrace, c0: float, slack_tol: float = 1e-8) -> ExpansionReport:
    """Check ``|dq_t| / |dq_0| >= 1 + c0 t`` along a single-vector trace.

    The trace must start at a vector whose curvature is at least ``c0 > 0``.
    ``min_slack`` is the smallest ``ratio - (1 + c0 t)`` seen (ratios beyond
    double range count as infinite slack).
    """
    masses = trace.masses
    first = trace.samples[0]
    start = curvature(first.w, masses)
    if not c0 > 0 or start < c0:
        raise HypothesisUnmet(f"starting curvature {start!r} below required c0={c0!r} (> 0)")
    log0 = float(first.log_norm_dq(masses))
    t0 = first.t
    violations = 0
    min_slack = math.inf
    for s in trace.samples:
        bound = 1.0 + c0 * (s.t - t0)
        log_ratio = float(s.log_norm_dq(masses)) - log0
        if log_ratio < 700.0:
            slack = math.exp(log_ratio) - bound
        else:
            slack = math.inf
        min_slack = min(min_slack, slack)
        if slack < -slack_tol:
            violations += 1
    return ExpansionReport(c0, len(trace.samples), violations, min_slack, slack_tol)
