import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardballs.errors import HypothesisUnmet
from hardballs.estimates import (
    MassMultiset,
    curvature_lower_bound,
    f_bound,
    g_threshold,
    lemma_3_10_bound,
    max_relative_speed,
    prop_3_5_check,
)
from hardballs.flow import simulate
from hardballs.phase_space import SystemParams
from hardballs.tangent import TangentVector, propagate_along

masses_st = st.lists(st.floats(0.1, 10.0), min_size=1, max_size=6)


def brute_f(a, masses):
    """Direct transcription of the recursion over labelled two-class splits."""
    n = len(masses)
    if n == 1:
        return 0.0
    if n == 2:
        return a
    best = 0.0
    for bits in range(1, 2 ** n - 1):
        d1 = [masses[k] for k in range(n) if bits >> k & 1]
        d2 = [masses[k] for k in range(n) if not bits >> k & 1]
        best = max(best, a + brute_f(a, d1) + brute_f(a, d2))
    return 2.0 * math.sqrt(sum(masses) / min(masses)) * best


def test_mass_multiset():
    ms = MassMultiset((3.0, 1.0, 2.0))
    assert ms.masses == (1.0, 2.0, 3.0)
    assert ms.M == 6.0 and ms.m_min == 1.0
    with pytest.raises(ValueError):
        MassMultiset((1.0, -1.0))


def test_relative_speed_bound_examples():
    assert lemma_3_10_bound(0.0, [1, 1]) == 0.0
    assert lemma_3_10_bound(1.0, [1, 1, 1, 1]) == 4.0
    assert lemma_3_10_bound(1.0, [1, 4]) == pytest.approx(2 * math.sqrt(5), rel=1e-15)


def test_f_small_cases():
    assert f_bound(0.7, [2.5]) == 0.0
    assert f_bound(0.7, [2.5, 1.0]) == 0.7
    assert f_bound(1.0, [1, 1, 1]) == pytest.approx(4 * math.sqrt(3), abs=1e-12)
    assert f_bound(0.0, [1, 2, 3, 4]) == 0.0


@pytest.mark.parametrize("masses", [(1, 1, 1), (1, 2, 3), (0.5, 1, 1, 4), (1, 1, 2, 2, 3)])
def test_f_matches_labelled_recursion(masses):
    assert f_bound(1.3, masses) == pytest.approx(brute_f(1.3, list(masses)), rel=1e-12)


def test_f_is_symmetric_under_permutation():
    base = (0.3, 1.0, 2.0, 5.0)
    values = {f_bound(0.9, p) for p in permutations(base)}
    assert len(values) == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=8), st.floats(0.0, 50.0))
def test_f_homogeneous(masses, a):
    assert f_bound(a, masses) == pytest.approx(a * f_bound(1.0, masses), rel=1e-12, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(masses_st, st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_f_monotone(masses, a, b):
    lo, hi = sorted((a, b))
    assert f_bound(lo, masses) <= f_bound(hi, masses)


def test_g_threshold_examples():
    G2 = g_threshold([1, 1])
    assert G2 == pytest.approx(0.99 / math.sqrt(2), rel=1e-15)
    assert f_bound(G2, [1, 1]) < 2 ** -0.5
    G3 = g_threshold([1, 1, 1])
    assert G3 <= 0.99 / 12
    assert f_bound(G3, [1, 1, 1]) < 3 ** -0.5
    with pytest.raises(ValueError):
        g_threshold([1.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=6))
def test_g_threshold_criterion_and_paths(masses):
    ms = MassMultiset.of(masses)
    G = g_threshold(ms)
    assert G > 0
    assert f_bound(G, ms) < ms.M ** -0.5
    assert g_threshold(ms, method="bisect") == pytest.approx(G, rel=1e-12)


def test_curvature_lower_bound(fixture_segment):
    ev = fixture_segment.events[0]
    params = SystemParams.uniform(3, 2, 0.1)
    assert curvature_lower_bound(ev, params) == pytest.approx(10 * ev.rel_speed, rel=1e-15)
    # the sharper bound that keeps the cosine factor
    assert ev.rel_speed / (params.r * ev.cos_phi) >= curvature_lower_bound(ev, params)


def test_max_relative_speed():
    v = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 0.0]])
    assert max_relative_speed(v) == 5.0


def _flat_free_trace(c0):
    params = SystemParams.uniform(2, 2, 0.1)
    # balls far apart and moving in parallel: no collision in the window
    from hardballs.phase_space import PhasePoint

    x = PhasePoint(np.array([[0.1, 0.1], [0.6, 0.6]]), np.array([[0.5, 0.0], [-0.5, 0.0]]) / math.sqrt(0.5))
    seg = simulate(x, params, t_max=0.05)
    assert seg.events == []
    dq = np.array([[1.0, 0.0], [-1.0, 0.0]])
    return propagate_along(TangentVector(dq, c0 * dq), seg, reproject=False)


def test_expansion_check_collision_free_trace():
    rep = prop_3_5_check(_flat_free_trace(2.0), 2.0)
    assert rep.ok and rep.n_samples == 10
    assert rep.min_slack >= -1e-15


def test_expansion_check_rejects_non_positive_c0():
    trace = _flat_free_trace(2.0)
    with pytest.raises(HypothesisUnmet):
        prop_3_5_check(trace, 0.0)
    with pytest.raises(HypothesisUnmet):
        prop_3_5_check(trace, 3.0)


def test_expansion_check_rejects_contracting_start():
    # dv opposing dq: negative curvature at the start
    with pytest.raises(HypothesisUnmet):
        prop_3_5_check(_flat_free_trace(-5.0), 1.0)


def test_expansion_check_counts_violations():
    from dataclasses import replace

    trace = _flat_free_trace(2.0)
    last = trace.samples[-1]
    trace.samples[-1] = replace(last, w=0.5 * last.w)
    rep = prop_3_5_check(trace, 2.0)
    assert rep.violations == 1 and not rep.ok
    assert rep.min_slack < -0.5
