"""Independent reference computations used by the tests.

Nothing here calls the tangent module: derivatives come from re-running the
nonlinear flow on perturbed initial conditions.
"""
from __future__ import annotations

import numpy as np

from hardballs.flow import simulate
from hardballs.phase_space import PhasePoint, min_image_delta, wrap


def perturbed(x: PhasePoint, dq, dv, eps: float) -> PhasePoint:
    return PhasePoint(wrap(x.q + eps * np.asarray(dq)), x.v + eps * np.asarray(dv))


def fd_flow_derivative(x0, dq, dv, params, T, eps=1e-6):
    """Central difference of the time-``T`` flow map along ``(dq, dv)``.

    Returns ``(dq_T, dv_T, pairs_plus, pairs_minus)``; the caller must check
    that both perturbed runs saw the unperturbed collision sequence.
    """
    plus = simulate(perturbed(x0, dq, dv, eps), params, t_max=T)
    minus = simulate(perturbed(x0, dq, dv, -eps), params, t_max=T)
    dq_T = min_image_delta(plus.x_end.q, minus.x_end.q) / (2 * eps)
    dv_T = (plus.x_end.v - minus.x_end.v) / (2 * eps)
    return dq_T, dv_T, plus.pairs, minus.pairs


def brute_force_first_contact(x, params, t_max, dt=1e-4):
    """First time some pair's torus distance drops to 2r, by scanning plus bisection."""
    def gap(t):
        q = x.q + t * x.v
        best = np.inf
        for i in range(params.N):
            for j in range(i + 1, params.N):
                best = min(best, np.linalg.norm(min_image_delta(q[i], q[j])) - 2 * params.r)
        return best

    t = 0.0
    while t < t_max:
        if gap(t + dt) <= 0.0:
            lo, hi = t, t + dt
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if gap(mid) <= 0.0:
                    hi = mid
                else:
                    lo = mid
            return hi
        t += dt
    return None
