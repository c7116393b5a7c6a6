"""Event-driven billiard flow for hard balls on the torus.

The simulator alternates exact free flights with elastic pair collisions.
Each recorded :class:`CollisionEvent` keeps the full contact state (positions
plus pre- and post-collision velocities) so the linearized flow can later be
evaluated along exactly the same pseudo-orbit, forwards or backwards.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np

from .errors import CollisionFlood, Grazing, HardBallError, NotInContact, Receding, SingularOrbit
from .phase_space import (
    PhasePoint,
    SystemParams,
    kinetic_energy,
    mass_inner,
    min_image_delta,
    time_reverse,
    total_momentum,
    wrap,
)

# slack on | |dq| - 2r | accepted as "in contact" when resolving a collision
CONTACT_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class CollisionEvent:
    """One elastic collision of ``pair = (i, j)``, ``i < j``, zero-based labels.

    ``contact_normal`` is the unit vector from ball ``j`` to ball ``i`` and
    ``cos_phi`` the cosine between the outgoing relative velocity
    ``v_i - v_j`` and that normal.
    """

    t: float
    pair: tuple[int, int]
    rel_speed: float
    cos_phi: float
    contact_normal: np.ndarray
    q: np.ndarray
    v_pre: np.ndarray
    v_post: np.ndarray

    @property
    def x_pre(self) -> PhasePoint:
        return PhasePoint(self.q, self.v_pre)

    @property
    def x_post(self) -> PhasePoint:
        return PhasePoint(self.q, self.v_post)


@dataclass(frozen=True, eq=False)
class TrajectorySegment:
    params: SystemParams
    x0: PhasePoint
    t_end: float
    events: list[CollisionEvent] = field(default_factory=list)
    x_end: PhasePoint | None = None

    @property
    def times(self) -> np.ndarray:
        return np.array([ev.t for ev in self.events])

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return [ev.pair for ev in self.events]


@dataclass(frozen=True)
class Contact:
    dt: float
    pair: tuple[int, int]
    normal: np.ndarray


@lru_cache(maxsize=None)
def _offsets(nu: int, K: int) -> np.ndarray:
    return np.array(list(product(range(-K, K + 1), repeat=nu)), dtype=float)


@lru_cache(maxsize=None)
def _pair_index(N: int) -> tuple[np.ndarray, np.ndarray]:
    I, J = np.triu_indices(N, k=1)
    return I, J


def next_collision(x: PhasePoint, params: SystemParams, horizon: float) -> Contact | None:
    """Earliest approaching contact within ``(0, horizon]``, or ``None``.

    A pair exactly at contact and approaching (e.g. a time-reversed
    post-collision state) collides at ``dt = 0``.
    """
    tol = params.tolerances
    r2 = (2.0 * params.r) ** 2
    I, J = _pair_index(params.N)
    dq = min_image_delta(x.q[I], x.q[J])
    dv = x.v[I] - x.v[J]
    a = np.einsum("pk,pk->p", dv, dv)
    reach = 2.0 * params.r + horizon * np.sqrt(a.max())
    K = int(math.ceil(reach + 0.5))
    k = _offsets(params.nu, K)

    s = dq[:, None, :] - k[None, :, :]
    b = np.einsum("pik,pk->pi", s, dv)
    c = np.einsum("pik,pik->pi", s, s) - r2
    disc = b * b - a[:, None] * c
    hit = (b < 0.0) & (disc >= 0.0)
    if not hit.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(hit, c / (-b + np.sqrt(np.where(hit, disc, 0.0))), np.inf)
    t = np.where(hit & (t < 0.0), 0.0, t)

    flat = np.argsort(t, axis=None)
    p, img = np.unravel_index(flat[0], t.shape)
    t0 = float(t[p, img])
    if t0 > horizon:
        return None
    # a second, distinct pair colliding within singular_gap is a multiple collision
    for idx in flat[1:]:
        p2, _ = np.unravel_index(idx, t.shape)
        if not np.isfinite(t.flat[idx]) or t.flat[idx] - t0 > tol.singular_gap:
            break
        if p2 != p:
            raise SingularOrbit(
                f"pairs {(int(I[p]), int(J[p]))} and {(int(I[p2]), int(J[p2]))} collide within {tol.singular_gap:g}"
            )

    # one Newton step on |s + t dv|^2 - (2r)^2
    sp, dvp = s[p, img], dv[p]
    y = sp + t0 * dvp
    f = y @ y - r2
    fp = 2.0 * (y @ dvp)
    if fp < 0.0:
        t0 = max(t0 - f / fp, 0.0)
        y = sp + t0 * dvp
    normal = y / np.linalg.norm(y)
    cos_phi = -(normal @ dvp) / math.sqrt(a[p])
    if cos_phi < tol.grazing_cos:
        raise Grazing(f"grazing collision of {(int(I[p]), int(J[p]))}: cos phi = {cos_phi:.3g}")
    return Contact(dt=t0, pair=(int(I[p]), int(J[p])), normal=normal)


def advance_free(x: PhasePoint, dt: float, params: SystemParams | None = None) -> PhasePoint:
    """Free flight by ``dt``; with ``params`` the output is checked for overlaps."""
    out = PhasePoint(wrap(x.q + dt * x.v), x.v)
    if params is not None:
        from .phase_space import check_admissible

        check_admissible(out.q, params)
    return out


def _contact_normal(x: PhasePoint, pair, params: SystemParams) -> np.ndarray:
    i, j = pair
    y = min_image_delta(x.q[i], x.q[j])
    dist = float(np.linalg.norm(y))
    if abs(dist - 2.0 * params.r) > CONTACT_SLACK:
        raise NotInContact(f"pair {pair} at distance {dist!r}, contact needs {2 * params.r!r}")
    return y / dist


def resolve_collision(x: PhasePoint, pair, contact_normal, params: SystemParams) -> PhasePoint:
    """Two-body elastic exchange along the contact normal (normal points j -> i)."""
    i, j = pair
    _contact_normal(x, pair, params)
    e = np.asarray(contact_normal, dtype=float)
    mi, mj = params.masses[i], params.masses[j]
    approach = float((x.v[i] - x.v[j]) @ e)
    if approach >= 0.0:
        raise Receding(f"pair {pair} is not approaching (normal relative velocity {approach!r})")
    v = np.array(x.v)
    v[i] -= (2.0 * mj / (mi + mj)) * approach * e
    v[j] += (2.0 * mi / (mi + mj)) * approach * e
    return PhasePoint(x.q, v)


def inner_normal(pair, contact_normal, params: SystemParams) -> np.ndarray:
    """Unit inner normal of the configuration-space boundary, in the mass metric."""
    i, j = pair
    m = params.masses
    mu = m[i] * m[j] / (m[i] + m[j])
    n = np.zeros((params.N, params.nu))
    n[i] = contact_normal / m[i]
    n[j] = -np.asarray(contact_normal) / m[j]
    return math.sqrt(mu) * n


def reflect_mass_metric(x: PhasePoint, pair, contact_normal, params: SystemParams) -> PhasePoint:
    """Orthogonal reflection ``v - 2 <v, n> n`` of the compound velocity."""
    n = inner_normal(pair, contact_normal, params)
    v = x.v - 2.0 * mass_inner(x.v, n, params.mass_array) * n
    return PhasePoint(x.q, v)


def simulate(
    x0: PhasePoint,
    params: SystemParams,
    *,
    t_max: float | None = None,
    n_collisions: int | None = None,
    horizon: float = 1.0,
    n0_guard: int = 1000,
) -> TrajectorySegment:
    """Run the flow until time ``t_max`` or until ``n_collisions`` events.

    With both given, whichever comes first stops the run.  A stop on the
    collision count leaves ``x_end`` at the post-collision contact state.
    """
    if t_max is None and n_collisions is None:
        raise ValueError("need t_max or n_collisions")
    tol = params.tolerances
    m = params.mass_array
    e0 = kinetic_energy(x0, m)
    p0 = total_momentum(x0, m)
    t_stop = math.inf if t_max is None else float(t_max)
    n_stop = math.inf if n_collisions is None else n_collisions

    x, t = x0, 0.0
    events: list[CollisionEvent] = []
    while len(events) < n_stop and t < t_stop:
        h = min(horizon, t_stop - t)
        c = next_collision(x, params, h)
        if c is None:
            x = advance_free(x, h)
            t = t_stop if h == t_stop - t else t + h
            continue
        x = advance_free(x, c.dt)
        t = t + c.dt
        if events and t - events[-1].t < tol.singular_gap:
            raise SingularOrbit(f"collisions at {events[-1].t!r} and {t!r} closer than singular_gap")
        if len(events) >= n0_guard and t - events[-n0_guard].t < n0_guard * tol.singular_gap:
            raise CollisionFlood(f"{n0_guard} collisions within {t - events[-n0_guard].t:g}")
        xp = resolve_collision(x, c.pair, c.normal, params)
        i, j = c.pair
        dv_post = xp.v[i] - xp.v[j]
        rel = float(np.linalg.norm(x.v[i] - x.v[j]))
        events.append(
            CollisionEvent(
                t=t,
                pair=c.pair,
                rel_speed=rel,
                cos_phi=float(dv_post @ c.normal) / float(np.linalg.norm(dv_post)),
                contact_normal=c.normal,
                q=x.q,
                v_pre=x.v,
                v_post=xp.v,
            )
        )
        x = xp
        if abs(kinetic_energy(x, m) - e0) > tol.conservation_tol or np.max(
            np.abs(total_momentum(x, m) - p0)
        ) > tol.conservation_tol:
            raise HardBallError(f"conservation drift beyond tolerance at t={t!r}")
    return TrajectorySegment(params=params, x0=x0, t_end=t, events=events, x_end=x)


def reverse_segment(seg: TrajectorySegment) -> TrajectorySegment:
    """The same orbit traversed backwards, starting from ``-x_end``."""
    events = [
        CollisionEvent(
            t=seg.t_end - ev.t,
            pair=ev.pair,
            rel_speed=ev.rel_speed,
            cos_phi=ev.cos_phi,
            contact_normal=ev.contact_normal,
            q=ev.q,
            v_pre=-ev.v_post,
            v_post=-ev.v_pre,
        )
        for ev in reversed(seg.events)
    ]
    return TrajectorySegment(
        params=seg.params,
        x0=time_reverse(seg.x_end),
        t_end=seg.t_end,
        events=events,
        x_end=time_reverse(seg.x0),
    )


def state_at(seg: TrajectorySegment, t: float) -> PhasePoint:
    """Phase point at time ``t`` along a recorded segment (post-collision at event times)."""
    if not 0.0 <= t <= seg.t_end:
        raise ValueError(f"t={t!r} outside [0, {seg.t_end!r}]")
    times = seg.times
    k = int(np.searchsorted(times, t, side="right"))
    if k == 0:
        return advance_free(seg.x0, t)
    ev = seg.events[k - 1]
    return advance_free(ev.x_post, t - ev.t)


def write_events_csv(events, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "i", "j", "rel_speed", "cos_phi"])
        for ev in events:
            i, j = ev.pair
            w.writerow([f"{ev.t:.18g}", i, j, f"{ev.rel_speed:.18g}", f"{ev.cos_phi:.18g}"])


def subsegment(seg: TrajectorySegment, start: int, stop: int | None = None, *, at: str = "post") -> TrajectorySegment:
    """Piece of a recorded segment beginning at event ``start``.

    ``at="post"`` starts right after that collision (events ``start+1 ..``),
    ``at="pre"`` right before it (the collision then sits at ``t = 0``).
    The piece ends right after event ``stop - 1``, or at ``seg.t_end`` when
    ``stop`` is None.
    """
    ev0 = seg.events[start]
    first = start + 1 if at == "post" else start
    if at not in ("post", "pre"):
        raise ValueError(f"at must be 'post' or 'pre', not {at!r}")
    last = len(seg.events) if stop is None else stop
    shifted = [
        CollisionEvent(ev.t - ev0.t, ev.pair, ev.rel_speed, ev.cos_phi, ev.contact_normal, ev.q, ev.v_pre, ev.v_post)
        for ev in seg.events[first:last]
    ]
    if stop is None:
        t_end, x_end = seg.t_end - ev0.t, seg.x_end
    else:
        t_end, x_end = seg.events[last - 1].t - ev0.t, seg.events[last - 1].x_post
    x0 = ev0.x_post if at == "post" else ev0.x_pre
    return TrajectorySegment(seg.params, x0, t_end, shifted, x_end)
