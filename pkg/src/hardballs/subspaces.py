"""Curvature operators of the stable/unstable subspaces, expansion seeds, and
expansion/contraction certificates.

The unstable curvature operator ``B`` at ``x`` is approximated by planting
the flat family ``{(dq, 0)}`` some collisions in the past of ``x`` and
reading off ``dv = B dq`` after pushing it forward to ``x``.  Stable
operators come from the same construction at ``-x``.

Certificates plant a flat expansion seed right before a suitably fast
collision and measure its growth.  Contraction certificates are the time
reversal of an expansion certificate; because the growth factors involved
are astronomically large, their seeds are kept (and re-verified) in
mpmath arithmetic at a precision chosen from the measured ratio.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BudgetExhausted,
    DegenerateSpan,
    HardBallError,
    HypothesisUnmet,
    NoConvergence,
    ZeroRelativeVelocity,
)
from .estimates import g_threshold
from .flow import TrajectorySegment, reverse_segment, simulate, state_at, subsegment
from .graphs import CollisionSequence, richness
from .phase_space import PhasePoint, SystemParams, min_image_delta, time_reverse
from .tangent import (
    LinearizedOrbit,
    TangentVector,
    frame_from_event,
    minner,
    mp_cast,
    project_reduced,
    propagate_collision,
    propagate_free,
)

# head-on threshold on |sin| of the angle between v_i - v_j and q_i - q_j
SPAN_TOL = 1e-9


class PropertyViolation(HardBallError):
    """A measured quantity contradicts a proven bound."""


def _mass_diag(masses, nu: int) -> np.ndarray:
    return np.repeat(np.asarray(masses, dtype=float), nu)


def reduced_basis(N: int, nu: int, masses) -> np.ndarray:
    """Mass-orthonormal basis of ``{dq : sum m_i dq_i = 0}``, shape ``(d, N, nu)``."""
    m = _mass_diag(masses, nu)
    n = N * nu
    # translation directions, mass-orthonormalized
    T = np.zeros((n, nu))
    for c in range(nu):
        T[c::nu, c] = 1.0
    P = np.eye(n) - T @ np.linalg.solve(T.T @ (m[:, None] * T), T.T * m)
    # orthonormalize the projected identity in the weighted inner product
    s = np.sqrt(m)
    U, sv, _ = np.linalg.svd(s[:, None] * P)
    d = nu * (N - 1)
    basis = U[:, :d] / s[:, None]
    return basis.T.reshape(d, N, nu)


@dataclass(frozen=True, eq=False)
class CurvatureOperator:
    """Symmetric operator on configuration tangent vectors, as an ``(N nu, N nu)`` matrix."""

    B: np.ndarray
    depth: int
    masses: tuple[float, ...]
    nu: int

    def apply(self, dq: np.ndarray) -> np.ndarray:
        dq = np.asarray(dq, dtype=float)
        flat = dq.reshape(dq.shape[:-2] + (-1,))
        return (flat @ self.B.T).reshape(dq.shape)

    def _weighted(self) -> np.ndarray:
        s = np.sqrt(_mass_diag(self.masses, self.nu))
        return s[:, None] * self.B / s[None, :]

    def asymmetry(self) -> float:
        """``max |<u, Bw> - <Bu, w>|`` over coordinate directions."""
        MB = _mass_diag(self.masses, self.nu)[:, None] * self.B
        return float(np.abs(MB - MB.T).max())

    def eigenvalues(self) -> np.ndarray:
        W = self._weighted()
        return np.linalg.eigvalsh(0.5 * (W + W.T))


def _flat_family_B(seg: TrajectorySegment) -> np.ndarray:
    params = seg.params
    N, nu, masses = params.N, params.nu, params.mass_array
    basis = reduced_basis(N, nu, masses)
    dq, dv = basis.copy(), np.zeros_like(basis)
    t = 0.0
    sw = np.sqrt(_mass_diag(masses, nu))
    for ev in seg.events:
        w = propagate_free(TangentVector(dq, dv), ev.t - t)
        w = propagate_collision(w, frame_from_event(ev, params))
        w = project_reduced(w, ev.v_post, masses)
        # keep the dq frame well conditioned: same right-multiplication on dq and dv
        Qf = (w.dq.reshape(len(basis), -1) * sw).T
        _, Rm = np.linalg.qr(Qf)
        Rinv = np.linalg.inv(Rm)
        dq = (w.dq.reshape(len(basis), -1).T @ Rinv).T.reshape(basis.shape)
        dv = (w.dv.reshape(len(basis), -1).T @ Rinv).T.reshape(basis.shape)
        t = ev.t
    w = propagate_free(TangentVector(dq, dv), seg.t_end - t)
    Q = w.dq.reshape(len(basis), -1).T
    V = w.dv.reshape(len(basis), -1).T
    m = _mass_diag(masses, nu)
    gram = Q.T @ (m[:, None] * Q)
    return V @ np.linalg.solve(gram, Q.T * m)


def approximate_unstable_B(
    x: PhasePoint,
    params: SystemParams,
    depth: int,
    *,
    converge: bool = True,
    tol: float = 1e-8,
) -> CurvatureOperator:
    """Unstable curvature operator at ``x`` from the flat family ``depth`` collisions back.

    With ``converge`` the depth is doubled from 1 until successive operators
    differ by less than ``tol`` in operator norm, never exceeding ``depth``.
    """
    masses = params.masses
    n = params.N * params.nu
    if depth <= 0:
        return CurvatureOperator(np.zeros((n, n)), 0, masses, params.nu)
    back = simulate(time_reverse(x), params, n_collisions=depth)
    if len(back.events) < depth:
        raise NoConvergence(f"only {len(back.events)} past collisions available")
    fwd = reverse_segment(back)

    def at_depth(k: int) -> np.ndarray:
        return _flat_family_B(subsegment(fwd, depth - k, at="pre"))

    if not converge:
        return CurvatureOperator(at_depth(depth), depth, masses, params.nu)
    k, prev = 1, at_depth(1)
    while 2 * k <= depth:
        k *= 2
        cur = at_depth(k)
        if np.linalg.norm(cur - prev, 2) < tol:
            return CurvatureOperator(cur, k, masses, params.nu)
        prev = cur
    raise NoConvergence(f"curvature operator not converged within {depth} collisions")


def stable_subspace(x: PhasePoint, params: SystemParams, depth: int, **kw) -> CurvatureOperator:
    """``B`` with ``E^s(x) = {(dq, -B dq)}``, built as the unstable operator of ``-x``."""
    return approximate_unstable_B(time_reverse(x), params, depth, **kw)


def principal_angle_to_graph(w: TangentVector, B: CurvatureOperator, sign: float = -1.0) -> float:
    """Angle between ``w`` and ``{(dq, sign * B dq)}`` over reduced ``dq``, in the mass metric."""
    N, nu = w.dq.shape
    basis = reduced_basis(N, nu, B.masses)
    m = _mass_diag(B.masses, nu)
    G = np.concatenate([basis.reshape(len(basis), -1), sign * B.apply(basis).reshape(len(basis), -1)], axis=1).T
    wt = np.concatenate([m, m])
    s = np.sqrt(wt)
    Gs = s[:, None] * G
    y = s * np.concatenate([w.dq.ravel(), w.dv.ravel()])
    coef, *_ = np.linalg.lstsq(Gs, y, rcond=None)
    resid = y - Gs @ coef
    return float(math.asin(min(1.0, np.linalg.norm(resid) / np.linalg.norm(y))))


def lemma_3_7_seed(
    x: PhasePoint,
    pair,
    params: SystemParams,
    mode: str = "flat",
    B: CurvatureOperator | None = None,
) -> TangentVector:
    """Expansion seed at a pre-collision contact state of ``pair = (i, j)``.

    ``dq`` is ``m_j w`` on ball ``i`` and ``-m_i w`` on ball ``j``, with ``w``
    the unit vector in the plane of ``v_i - v_j`` and ``q_i - q_j`` orthogonal
    to ``v_i - v_j``.  ``dv`` is zero (``"flat"``) or ``B dq`` (``"curved"``).
    """
    i, j = pair
    m = params.masses
    rel_v = x.v[i] - x.v[j]
    speed = float(np.linalg.norm(rel_v))
    if speed == 0.0:
        raise ZeroRelativeVelocity(f"pair {pair} has zero relative velocity")
    d = rel_v / speed
    y = min_image_delta(x.q[i], x.q[j])
    e = y / np.linalg.norm(y)
    w = e - (e @ d) * d
    wn = float(np.linalg.norm(w))
    if wn < SPAN_TOL:
        raise DegenerateSpan(f"head-on collision of {pair}: relative velocity parallel to contact line")
    w = w / wn
    dq = np.zeros((params.N, params.nu))
    dq[i] = m[j] * w
    dq[j] = -m[i] * w
    if mode == "flat":
        dv = np.zeros_like(dq)
    elif mode == "curved":
        if B is None:
            raise ValueError("curved seeds need a curvature operator")
        dv = B.apply(dq)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return TangentVector(dq, dv)


@dataclass(frozen=True, eq=False)
class Certificate:
    """Numerical witness that a tangent vector expands above ``target_L``
    (``kind="expansion"``) or contracts below ``1/target_L``.

    ``segment`` is the recorded orbit the witness lives on; for contraction
    certificates ``reversed`` is set and the certified orbit is the time
    reversal of ``segment`` (starting at ``base``).  ``seed_mp`` holds the
    high-precision seed as decimal strings when one is needed.
    """

    kind: str
    base: PhasePoint
    t: float
    seed: TangentVector
    log_ratio: float
    target_L: float
    event_index: int
    segment: TrajectorySegment
    reversed: bool = False
    seed_mp: tuple | None = None
    dps: int | None = None
    collision_time: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "expansion":
            ok = self.log_ratio > math.log(self.target_L)
        elif self.kind == "contraction":
            ok = self.log_ratio < -math.log(self.target_L)
        else:
            raise ValueError(f"unknown certificate kind {self.kind!r}")
        if not ok:
            raise PropertyViolation(f"{self.kind} ratio exp({self.log_ratio}) misses target {self.target_L}")

    @property
    def ratio(self) -> float:
        try:
            return math.exp(self.log_ratio)
        except OverflowError:
            return math.inf

    def to_record(self) -> dict:
        def arr(a):
            return [[repr(float(c)) for c in row] for row in np.asarray(a, dtype=float)]

        rec = {
            "kind": self.kind,
            "target_L": repr(self.target_L),
            "t": repr(self.t),
            "log_ratio": repr(self.log_ratio),
            "log10_ratio": repr(self.log_ratio / math.log(10.0)),
            "event_index": self.event_index,
            "collision_time": None if self.collision_time is None else repr(self.collision_time),
            "base": {"q": arr(self.base.q), "v": arr(self.base.v)},
            "seed": {"dq": arr(self.seed.dq), "dv": arr(self.seed.dv)},
            "seed_mp": None
            if self.seed_mp is None
            else {"dps": self.dps, "dq": self.seed_mp[0], "dv": self.seed_mp[1]},
            "orbit": {
                "reversed": self.reversed,
                "masses": [repr(m) for m in self.segment.params.masses],
                "r": repr(self.segment.params.r),
                "t_end": repr(self.segment.t_end),
                "events": [
                    {
                        "t": repr(ev.t),
                        "pair": list(ev.pair),
                        "contact_normal": [repr(float(c)) for c in ev.contact_normal],
                        "v_pre": arr(ev.v_pre),
                    }
                    for ev in self.segment.events
                ],
            },
        }
        rec.update(self.meta)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=1, sort_keys=True)


def _check_rich(seq: CollisionSequence, upto: int, window: int) -> None:
    for start in range(0, upto + 1, window):
        block = CollisionSequence(seq.N, seq.labels[start : start + window])
        if richness(block) < 1:
            raise HypothesisUnmet(
                f"collisions {start}..{start + len(block) - 1} have a disconnected collision graph"
            )


def expansion_certificate(
    x0: PhasePoint,
    params: SystemParams,
    L: float,
    budget: int = 1000,
    *,
    window: int = 100,
    G: float | None = None,
) -> Certificate:
    """Find ``t > 0`` and an unstable-type seed at ``S^{-t} x0`` expanding by more than ``L``.

    Scans the past of ``x0`` (at most ``budget`` collisions) for the earliest
    non-head-on collision at past time ``s`` with relative speed at least
    ``G`` and ``1 + (s/r) G > L``.  The flat seed is planted mid-flight just
    before that collision and pushed forward to ``x0`` along the recorded orbit.
    """
    G = g_threshold(params.masses) if G is None else G
    back = simulate(time_reverse(x0), params, n_collisions=budget)
    events = back.events
    if not events:
        raise BudgetExhausted("no past collisions")
    gaps = np.diff([0.0] + [ev.t for ev in events])
    eps_gap = float(gaps[1:].min()) if len(gaps) > 1 else float(gaps[0])
    if events[0].t < eps_gap / 2:
        raise HypothesisUnmet("base point too close to a collision")

    chosen = None
    for k, ev in enumerate(events):
        if k + 1 >= len(events):
            break
        if ev.rel_speed < G or 1.0 + (ev.t / params.r) * G <= L:
            continue
        x_fwd_pre = PhasePoint(ev.q, -ev.v_post)
        try:
            seed = lemma_3_7_seed(x_fwd_pre, ev.pair, params)
        except DegenerateSpan:
            continue
        chosen = k, seed
        break
    if chosen is None:
        raise BudgetExhausted(f"no qualifying collision within {budget} past collisions")
    k, seed = chosen
    _check_rich(CollisionSequence.from_segment(back), k, window)

    # plant mid-flight before the collision (in forward time); flat seeds do not
    # change along a free flight
    tau = 0.5 * (events[k].t + events[k + 1].t)
    head = TrajectorySegment(params, back.x0, tau, events[: k + 1], state_at(back, tau))
    seg = reverse_segment(head)
    norm0 = float(seed.norm(params.mass_array))
    seed = (1.0 / norm0) * seed
    w, scale = LinearizedOrbit.from_segment(seg).apply(seed)
    log_ratio = math.log(float(w.norm(params.mass_array))) + int(scale) * math.log(2.0)
    return Certificate(
        kind="expansion",
        base=seg.x0,
        t=tau,
        seed=seed,
        log_ratio=log_ratio,
        target_L=L,
        event_index=k,
        segment=seg,
        collision_time=events[k].t,
        meta={"G": repr(G), "rel_speed": repr(events[k].rel_speed)},
    )


def _mp_strings(a, ctx) -> list:
    return [[ctx.nstr(c, ctx.dps, strip_zeros=False) for c in row] for row in a]


def contraction_certificate(
    x0: PhasePoint,
    params: SystemParams,
    L: float,
    budget: int = 1000,
    **kw,
) -> Certificate:
    """Stable-type seed at ``x0`` whose image after time ``t`` shrinks below ``1/L``.

    Time reversal of :func:`expansion_certificate` at ``-x0``: the expanded
    image ``(dq, dv)`` at ``-x0`` becomes the seed ``(dq, -dv)`` at ``x0``.
    """
    exp = expansion_certificate(time_reverse(x0), params, L, budget, **kw)
    dps = precision_for(exp.log_ratio)
    cast = mp_cast(dps)
    ctx = cast.ctx
    orbit = LinearizedOrbit.from_segment(exp.segment, cast)
    image, _ = orbit.apply(TangentVector(cast(exp.seed.dq), cast(exp.seed.dv)))
    norm = ctx.sqrt(minner(image.dq, image.dq, cast(params.mass_array)) + minner(image.dv, image.dv, cast(params.mass_array)))
    dq = image.dq / norm
    dv = -image.dv / norm
    seed = TangentVector(np.asarray(dq, dtype=float), np.asarray(dv, dtype=float))
    return Certificate(
        kind="contraction",
        base=x0,
        t=exp.t,
        seed=seed,
        log_ratio=-exp.log_ratio,
        target_L=L,
        event_index=exp.event_index,
        segment=exp.segment,
        reversed=True,
        seed_mp=(_mp_strings(dq, ctx), _mp_strings(dv, ctx)),
        dps=dps,
        collision_time=exp.collision_time,
        meta=dict(exp.meta),
    )


def precision_for(log_ratio: float) -> int:
    """Decimal digits that keep a contraction by ``exp(-|log_ratio|)`` resolvable."""
    return int(2 * abs(log_ratio) / math.log(10.0)) + 40


def verify_certificate(cert: Certificate, dps: int | None = None) -> float:
    """Re-propagate the stored seed over the stored orbit in mpmath; return the log ratio.

    Independent of the float propagation that produced the certificate.
    """
    dps = dps or cert.dps or precision_for(cert.log_ratio)
    cast = mp_cast(dps)
    ctx = cast.ctx
    masses = cast(cert.segment.params.mass_array)
    orbit = LinearizedOrbit.from_segment(cert.segment, cast)
    if cert.reversed:
        orbit = orbit.reversed()
    if cert.seed_mp is not None:
        seed = TangentVector(
            np.array([[ctx.mpf(c) for c in row] for row in cert.seed_mp[0]], dtype=object),
            np.array([[ctx.mpf(c) for c in row] for row in cert.seed_mp[1]], dtype=object),
        )
    else:
        seed = TangentVector(cast(cert.seed.dq), cast(cert.seed.dv))
    image, _ = orbit.apply(seed)

    def norm(w):
        return ctx.sqrt(minner(w.dq, w.dq, masses) + minner(w.dv, w.dv, masses))

    return float(ctx.log(norm(image)) - ctx.log(norm(seed)))
