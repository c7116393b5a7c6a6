"""Linearized flow on tangent vectors and the infinitesimal Lyapunov form.

Between collisions a tangent vector ``(dq, dv)`` evolves as
``dq <- dq + t dv``, ``dv <- dv``.  Through a collision with pair ``(i, j)``

    dq+ = R dq-
    dv+ = R dv- + 2 cos(phi) R V* K V dq-

with ``R`` the mass-metric reflection across the boundary tangent plane,
``V`` the projection of ``dq`` onto that plane along ``v-``, ``V*`` its
adjoint (projection onto ``(v-)^perp`` along the normal) and ``K`` the second
fundamental form of the cylinder ``|q_i - q_j| = 2r``.  For the unit inner
normal ``n = sqrt(mu) (e/m_i, -e/m_j)`` (``e`` the unit contact vector,
``mu`` the reduced mass) differentiating ``n`` along the boundary gives

    K u = sqrt(mu)/(2r) (P du / m_i, -P du / m_j),   du = u_i - u_j,

``P`` projecting out ``e``.  The map is implemented componentwise so it runs
on float arrays and on object arrays of mpmath numbers alike, with any
leading batch axes: vectors have shape ``(..., N, nu)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import Grazing
from .flow import CollisionEvent, TrajectorySegment, _contact_normal
from .phase_space import PhasePoint, SystemParams

# rescale tangent vectors by an exact power of two once they grow past this
_RESCALE_ABOVE = 2.0**200


def minner(u, w, masses):
    """Batched mass inner product over the trailing ``(N, nu)`` axes."""
    return (np.asarray(masses)[:, None] * (u * w)).sum(axis=(-2, -1))


@dataclass(frozen=True, eq=False)
class TangentVector:
    dq: np.ndarray
    dv: np.ndarray

    def __post_init__(self):
        dq, dv = np.asarray(self.dq), np.asarray(self.dv)
        if dq.dtype != object:
            dq, dv = dq.astype(float), dv.astype(float)
        if dq.shape != dv.shape:
            raise ValueError("dq and dv must have the same shape")
        object.__setattr__(self, "dq", dq)
        object.__setattr__(self, "dv", dv)

    @classmethod
    def zeros(cls, N: int, nu: int) -> "TangentVector":
        return cls(np.zeros((N, nu)), np.zeros((N, nu)))

    def __add__(self, other: "TangentVector") -> "TangentVector":
        return TangentVector(self.dq + other.dq, self.dv + other.dv)

    def __rmul__(self, c) -> "TangentVector":
        return TangentVector(c * self.dq, c * self.dv)

    def __getitem__(self, k) -> "TangentVector":
        return TangentVector(self.dq[k], self.dv[k])

    def norm_dq(self, masses):
        return np.sqrt(minner(self.dq, self.dq, masses))

    def norm_dv(self, masses):
        return np.sqrt(minner(self.dv, self.dv, masses))

    def norm(self, masses):
        """``sqrt(|dq|^2 + |dv|^2)`` in the mass metric."""
        return np.sqrt(minner(self.dq, self.dq, masses) + minner(self.dv, self.dv, masses))


def q_form(w: TangentVector, masses):
    """Infinitesimal Lyapunov form ``<dq, dv>``."""
    return minner(w.dq, w.dv, masses)


def propagate_free(w: TangentVector, dt: float) -> TangentVector:
    return TangentVector(w.dq + dt * w.dv, w.dv)


class CollisionFrame:
    """Operators of the linearized collision map at one boundary point.

    The matrix views (``n``, ``R``, ``V``, ``V_adj``, ``K``) act on flattened
    compound vectors of length ``N * nu``; the ``apply_*`` methods act on
    ``(..., N, nu)`` arrays directly and are what the propagation uses.
    """

    def __init__(self, pair, contact_normal, v_pre, masses, r, sqrt=math.sqrt):
        self.pair = tuple(pair)
        i, j = self.pair
        e = np.asarray(contact_normal)
        self.e = e / sqrt(e @ e)
        self.v_pre = np.asarray(v_pre)
        self.masses = np.asarray(masses)
        self.r = r
        self.mu = self.masses[i] * self.masses[j] / (self.masses[i] + self.masses[j])
        self._sqrt = sqrt
        # e . (v_i - v_j) < 0 for an approaching pair
        self.approach = (self.v_pre[i] - self.v_pre[j]) @ self.e

    @property
    def N(self) -> int:
        return self.v_pre.shape[0]

    @property
    def nu(self) -> int:
        return self.v_pre.shape[1]

    @property
    def cos_phi(self):
        """``<n, v+>``; the cosine of the reflection angle when ``|v| = 1``."""
        return -self._sqrt(self.mu) * self.approach

    def _g(self):
        i, j = self.pair
        g = np.zeros((self.N, self.nu), dtype=self.e.dtype)
        g[i] = self.e / self.masses[i]
        g[j] = -self.e / self.masses[j]
        return g

    def _rel(self, u):
        i, j = self.pair
        return u[..., i, :] - u[..., j, :]

    def _along_pair(self, vec):
        """Compound vector ``(vec/m_i, -vec/m_j)`` for ``vec`` of shape ``(..., nu)``."""
        i, j = self.pair
        out = np.zeros(vec.shape[:-1] + (self.N, self.nu), dtype=vec.dtype)
        out[..., i, :] = vec / self.masses[i]
        out[..., j, :] = -vec / self.masses[j]
        return out

    def apply_R(self, u):
        s = self._rel(u) @ self.e
        return u - self._along_pair((2.0 * self.mu) * np.asarray(s)[..., None] * self.e)

    def apply_V(self, u):
        s = (self._rel(u) @ self.e) / self.approach
        return u - np.asarray(s)[..., None, None] * self.v_pre

    def apply_K(self, u):
        du = self._rel(u)
        pdu = du - np.asarray(du @ self.e)[..., None] * self.e
        return self._along_pair((self._sqrt(self.mu) / (2 * self.r)) * pdu)

    def apply_V_adj(self, y):
        s = minner(y, self.v_pre, self.masses) / self.approach
        return y - np.asarray(s)[..., None, None] * self._g()

    def collision_map(self, dq, dv):
        i, j = self.pair
        vdq = self.apply_V(dq)
        du = self._rel(vdq)
        pdu = du - np.asarray(du @ self.e)[..., None] * self.e
        # 2 cos(phi) K V dq with cos(phi) = -sqrt(mu) * approach
        kick = self._along_pair((-self.mu * self.approach / self.r) * pdu)
        return self.apply_R(dq), self.apply_R(dv + self.apply_V_adj(kick))

    # dense matrix views, for checking and for export
    def _matrix(self, apply) -> np.ndarray:
        n = self.N * self.nu
        basis = np.eye(n).reshape(n, self.N, self.nu)
        return apply(basis).reshape(n, n).T

    @property
    def n(self) -> np.ndarray:
        return (self._sqrt(self.mu) * self._g()).reshape(-1)

    @property
    def R(self) -> np.ndarray:
        return self._matrix(self.apply_R)

    @property
    def V(self) -> np.ndarray:
        return self._matrix(self.apply_V)

    @property
    def V_adj(self) -> np.ndarray:
        return self._matrix(self.apply_V_adj)

    @property
    def K(self) -> np.ndarray:
        return self._matrix(self.apply_K)


def build_frame(x: PhasePoint, pair, params: SystemParams) -> CollisionFrame:
    """Frame at a pre-collision contact state ``x`` of ``pair``."""
    e = _contact_normal(x, pair, params)
    frame = CollisionFrame(pair, e, x.v, params.mass_array, params.r)
    speed = math.sqrt(float(minner(x.v, x.v, params.mass_array)))
    if not frame.cos_phi > params.tolerances.grazing_cos * speed:
        raise Grazing(f"cos phi = {frame.cos_phi / speed:.3g} below grazing guard")
    return frame


def frame_from_event(ev: CollisionEvent, params: SystemParams, sqrt=math.sqrt, cast=None) -> CollisionFrame:
    if cast is None:
        return CollisionFrame(ev.pair, ev.contact_normal, ev.v_pre, params.mass_array, params.r)
    return CollisionFrame(
        ev.pair,
        cast(ev.contact_normal),
        cast(ev.v_pre),
        cast(params.mass_array),
        cast(params.r),
        sqrt=sqrt,
    )


def propagate_collision(w: TangentVector, frame: CollisionFrame) -> TangentVector:
    dq, dv = frame.collision_map(w.dq, w.dv)
    return TangentVector(dq, dv)


def project_reduced(w: TangentVector, v: np.ndarray, masses) -> TangentVector:
    """Remove the translation part of ``dq``, ``dv`` and the ``v`` part of ``dv``."""
    masses = np.asarray(masses)
    M = masses.sum()
    dq = w.dq - (np.tensordot(w.dq, masses, axes=([-2], [0])) / M)[..., None, :]
    dv = w.dv - (np.tensordot(w.dv, masses, axes=([-2], [0])) / M)[..., None, :]
    s = minner(dv, v, masses) / minner(v, v, masses)
    dv = dv - s[..., None, None] * v if np.ndim(s) else dv - s * v
    return TangentVector(dq, dv)


@dataclass(frozen=True, eq=False)
class TraceSample:
    """One record of the tangent trace.

    ``w`` and ``Q`` are stored scaled: the propagated vector equals
    ``w * 2**scale_exp``.
    """

    t: float
    side: str
    w: TangentVector
    Q: np.ndarray
    scale_exp: np.ndarray

    def log_norm_dq(self, masses) -> np.ndarray:
        return np.log(self.w.norm_dq(masses).astype(float)) + self.scale_exp * math.log(2.0)

    def log_norm(self, masses) -> np.ndarray:
        return np.log(self.w.norm(masses).astype(float)) + self.scale_exp * math.log(2.0)


@dataclass
class TangentTrace:
    samples: list[TraceSample]
    masses: np.ndarray
    projection_residuals: list[float]

    @property
    def final(self) -> TraceSample:
        return self.samples[-1]


def _rescale(w: TangentVector, scale_exp: np.ndarray) -> tuple[TangentVector, np.ndarray]:
    if w.dq.dtype == object:
        return w, scale_exp
    big = np.maximum(np.abs(w.dq).max(axis=(-2, -1)), np.abs(w.dv).max(axis=(-2, -1)))
    if not np.any(big > _RESCALE_ABOVE):
        return w, scale_exp
    shift = np.where(big > _RESCALE_ABOVE, np.frexp(big)[1], 0)
    f = np.ldexp(1.0, -shift)
    f = f[..., None, None] if np.ndim(f) else f
    return TangentVector(w.dq * f, w.dv * f), scale_exp + shift


def propagate_along(
    w0: TangentVector,
    seg: TrajectorySegment,
    *,
    samples_per_flight: int = 8,
    reproject: bool = True,
    rescale: bool = True,
    frames=None,
) -> TangentTrace:
    """Push ``w0`` (attached at ``seg.x0``) along the whole segment.

    Samples are taken at the start, on both sides of every collision, at
    ``samples_per_flight`` interior points of every flight, and at the end.
    ``frames`` may supply prebuilt collision frames (one per event).
    ``reproject`` restores the reduced constraints after each collision and is
    only meaningful for vectors that satisfy them to begin with.
    """
    masses = seg.params.mass_array
    if frames is None:
        frames = [frame_from_event(ev, seg.params) for ev in seg.events]
    batch = w0.dq.shape[:-2]
    scale = np.zeros(batch, dtype=int)
    samples: list[TraceSample] = []
    residuals: list[float] = []

    def record(t, side, w):
        samples.append(TraceSample(t, side, w, q_form(w, masses), scale.copy()))

    w = w0
    t = 0.0
    record(0.0, "flight", w)
    boundaries = [ev.t for ev in seg.events] + [seg.t_end]
    for k, t_next in enumerate(boundaries):
        dt = t_next - t
        for s in range(1, samples_per_flight + 1):
            h = dt * s / (samples_per_flight + 1)
            record(t + h, "flight", propagate_free(w, h))
        w = propagate_free(w, dt)
        t = t_next
        if k == len(seg.events):
            record(t, "flight", w)
            break
        record(t, "pre", w)
        w = propagate_collision(w, frames[k])
        if reproject:
            p = project_reduced(w, seg.events[k].v_post, masses)
            # residual relative to the size of the vector, which may be huge before rescaling
            size = max(np.abs(np.asarray(w.dq, dtype=float)).max(), np.abs(np.asarray(w.dv, dtype=float)).max())
            diff = np.abs(np.asarray(p.dq - w.dq, dtype=float)).max() + np.abs(
                np.asarray(p.dv - w.dv, dtype=float)
            ).max()
            residuals.append(float(diff / size) if size > 0 else 0.0)
            w = p
        if rescale:
            w, scale = _rescale(w, scale)
        record(t, "post", w)
    return TangentTrace(samples=samples, masses=masses, projection_residuals=residuals)


def propagate_to_end(w0: TangentVector, seg: TrajectorySegment, *, frames=None, reproject=False):
    """Final propagated vector and its power-of-two scale, without sampling."""
    if frames is None:
        frames = [frame_from_event(ev, seg.params) for ev in seg.events]
    masses = seg.params.mass_array
    scale = np.zeros(w0.dq.shape[:-2], dtype=int)
    w, t = w0, 0.0
    for ev, frame in zip(seg.events, frames):
        w = propagate_collision(propagate_free(w, ev.t - t), frame)
        if reproject:
            w = project_reduced(w, ev.v_post, masses)
        w, scale = _rescale(w, scale)
        t = ev.t
    return propagate_free(w, seg.t_end - t), scale


def write_trace_csv(trace: TangentTrace, path) -> None:
    """Tangent trace of a single vector; values are scaled by ``2**scale_log2``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "side", "Q", "norm_dq", "norm_dv", "scale_log2"])
        for s in trace.samples:
            out.writerow(
                [
                    f"{s.t:.18g}",
                    s.side,
                    f"{float(s.Q):.18g}",
                    f"{float(s.w.norm_dq(trace.masses)):.18g}",
                    f"{float(s.w.norm_dv(trace.masses)):.18g}",
                    int(s.scale_exp),
                ]
            )


def mp_cast(dps: int):
    """Converter from float arrays to object arrays of ``mpmath.mpf``."""
    import mpmath

    ctx = mpmath.mp.clone()
    ctx.dps = dps

    def cast(a):
        if np.ndim(a) == 0:
            return ctx.mpf(float(a))
        return np.vectorize(ctx.mpf, otypes=[object])(np.asarray(a, dtype=float))

    cast.ctx = ctx
    return cast


@dataclass
class LinearizedOrbit:
    """Alternating flight durations and collision frames along a segment.

    ``flights`` has one more entry than ``frames``.  Built from float data,
    optionally lifted to mpmath precision; :meth:`reversed` gives the exact
    linearization of the time-reversed orbit in the same arithmetic.
    """

    flights: list
    frames: list[CollisionFrame]

    @classmethod
    def from_segment(cls, seg: TrajectorySegment, cast=None) -> "LinearizedOrbit":
        times = [0.0] + [ev.t for ev in seg.events] + [seg.t_end]
        if cast is None:
            flights = [b - a for a, b in zip(times, times[1:])]
            frames = [frame_from_event(ev, seg.params) for ev in seg.events]
        else:
            ctx = cast.ctx
            flights = [cast(b) - cast(a) for a, b in zip(times, times[1:])]
            frames = [frame_from_event(ev, seg.params, sqrt=ctx.sqrt, cast=cast) for ev in seg.events]
        return cls(flights, frames)

    def reversed(self) -> "LinearizedOrbit":
        frames = []
        for f in reversed(self.frames):
            v_post = f.apply_R(f.v_pre)
            frames.append(CollisionFrame(f.pair, f.e, -v_post, f.masses, f.r, sqrt=f._sqrt))
        return LinearizedOrbit(list(reversed(self.flights)), frames)

    @property
    def duration(self):
        return sum(self.flights[1:], self.flights[0])

    def apply(self, w: TangentVector) -> tuple[TangentVector, np.ndarray]:
        """Image of ``w`` and its power-of-two scale (always 0 for mpmath data)."""
        scale = np.zeros(w.dq.shape[:-2], dtype=int)
        for dt, frame in zip(self.flights, self.frames):
            w = propagate_collision(propagate_free(w, dt), frame)
            w, scale = _rescale(w, scale)
        return propagate_free(w, self.flights[-1]), scale
