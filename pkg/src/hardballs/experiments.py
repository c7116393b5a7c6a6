"""Seeded experiment suites behind the command line.

A configuration is an INI file with a ``[system]`` and an ``[experiment]``
section (see the README for the schema).  All randomness comes from
``numpy.random.default_rng`` (PCG64) seeded with the single configured seed;
independent runs of a suite use ``SeedSequence(seed).spawn(runs)``.

Reports are JSON with sorted keys and ``repr`` floats, so an identical
configuration and seed produce byte-identical files.
"""
from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import estimates
from .errors import (
    BudgetExhausted,
    ConfigError,
    HardBallError,
    HypothesisUnmet,
    SamplingFailed,
    SingularOrbit,
)
from .estimates import (
    MassMultiset,
    curvature,
    curvature_lower_bound,
    f_bound,
    g_threshold,
    lemma_3_10_bound,
    max_relative_speed,
    prop_3_5_check,
)
from .flow import TrajectorySegment, simulate, subsegment, write_events_csv
from .graphs import CollisionSequence, first_connected_prefix
from .phase_space import (
    PhasePoint,
    SystemParams,
    ToleranceSet,
    kinetic_energy,
    min_image_delta,
    normalize_state,
    total_momentum,
)
from .subspaces import (
    PropertyViolation,
    contraction_certificate,
    expansion_certificate,
    lemma_3_7_seed,
    verify_certificate,
)
from .tangent import (
    TangentVector,
    frame_from_event,
    minner,
    project_reduced,
    propagate_along,
    propagate_collision,
    q_form,
    write_trace_csv,
)

KINDS = (
    "simulate",
    "verify-q",
    "verify-prop35",
    "verify-lemma310",
    "verify-cor312",
    "certificate",
    "estimates",
)

EXIT_OK, EXIT_VIOLATION, EXIT_SINGULAR, EXIT_UNMET, EXIT_CONFIG = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemParams
    kind: str
    seed: int = 0
    collisions: int = 1000
    L: float | None = None
    a: float | None = None
    seeds: int | None = None
    runs: int | None = None
    output_dir: str = "output"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.kind == "certificate" and (self.L is None or not self.L > 0):
            raise ConfigError("certificate experiments need a positive L")
        if self.a is not None and not self.a > 0:
            raise ConfigError("a must be positive")
        if self.collisions < 1:
            raise ConfigError("collisions must be at least 1")

    def resolved(self) -> dict:
        s = self.system
        return {
            "system": {"N": s.N, "nu": s.nu, "r": s.r, "masses": list(s.masses)},
            "tolerances": s.tolerances.as_dict(),
            "experiment": {
                "kind": self.kind,
                "seed": self.seed,
                "collisions": self.collisions,
                "L": self.L,
                "a": self.a,
                "seeds": self.seeds,
                "runs": self.runs,
                "output_dir": self.output_dir,
            },
        }


def load_config(path, *, kind: str | None = None, seed: int | None = None, output: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        sys_sec = parser["system"]
        exp_sec = parser["experiment"] if parser.has_section("experiment") else {}
        N = int(sys_sec["N"])
        masses_raw = sys_sec.get("masses")
        masses = tuple(float(m) for m in masses_raw.split(",")) if masses_raw else (1.0,) * N
        tol_kw = {k: float(sys_sec[k]) for k in ToleranceSet().as_dict() if k in sys_sec}
        system = SystemParams(
            N=N,
            nu=int(sys_sec.get("nu", "2")),
            r=float(sys_sec["r"]),
            masses=masses,
            tolerances=ToleranceSet(**tol_kw),
        )

        def opt(name, conv):
            return conv(exp_sec[name]) if name in exp_sec else None

        cfg_kind = kind or exp_sec.get("kind")
        if cfg_kind is None:
            raise ConfigError("experiment kind missing")
        return ExperimentConfig(
            system=system,
            kind=cfg_kind,
            seed=seed if seed is not None else int(exp_sec.get("seed", "0")),
            collisions=int(exp_sec.get("collisions", "1000")),
            L=opt("L", float),
            a=opt("a", float),
            seeds=opt("seeds", int),
            runs=opt("runs", int),
            output_dir=output or exp_sec.get("output_dir", "output"),
        )
    except ConfigError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def generate_state(params: SystemParams, seed, max_tries: int = 10_000) -> PhasePoint:
    """Uniform admissible positions by rejection, Gaussian velocities, then normalization.

    ``seed`` is an int, a ``SeedSequence`` or a ``Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q = np.empty((params.N, params.nu))
    placed = 0
    tries = 0
    while placed < params.N:
        tries += 1
        if tries > max_tries:
            raise SamplingFailed(f"could not place {params.N} balls of radius {params.r} in {max_tries} tries")
        cand = rng.random(params.nu)
        if placed and np.min(np.linalg.norm(min_image_delta(q[:placed], cand), axis=1)) < 2 * params.r:
            continue
        q[placed] = cand
        placed += 1
    v = rng.standard_normal((params.N, params.nu))
    return normalize_state(q, v, params)


def random_reduced_vectors(rng, x: PhasePoint, params: SystemParams, count: int) -> TangentVector:
    """``count`` random reduced tangent vectors at ``x`` with ``Q >= 0``."""
    raw = TangentVector(
        rng.standard_normal((count, params.N, params.nu)),
        rng.standard_normal((count, params.N, params.nu)),
    )
    w = project_reduced(raw, x.v, params.mass_array)
    sign = np.where(q_form(w, params.mass_array) < 0, -1.0, 1.0)
    return TangentVector(w.dq, w.dv * sign[:, None, None])


@dataclass
class Report:
    kind: str
    config: dict
    checks: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    status: str = "ok"
    exit_code: int = EXIT_OK

    def check(self, name: str, passed: bool, **values) -> bool:
        entry = {"name": name, "passed": bool(passed)}
        entry.update({k: _jsonable(v) for k, v in values.items()})
        self.checks.append(entry)
        if not passed and self.exit_code == EXIT_OK:
            self.exit_code = EXIT_VIOLATION
            self.status = "violation"
        return bool(passed)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "status": self.status,
            "exit_code": self.exit_code,
            "config": self.config,
            "checks": self.checks,
            "data": {k: _jsonable(v) for k, v in self.data.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _jsonable(v):
    if isinstance(v, (bool, int, str)) or v is None:
        return v
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return str(v)


# --- suites -----------------------------------------------------------------


def _conservation(seg: TrajectorySegment) -> dict:
    m = seg.params.mass_array
    e0 = kinetic_energy(seg.x0, m)
    p0 = total_momentum(seg.x0, m)
    per_e = per_p = 0.0
    for ev in seg.events:
        e_pre = 0.5 * float(minner(ev.v_pre, ev.v_pre, m))
        e_post = 0.5 * float(minner(ev.v_post, ev.v_post, m))
        per_e = max(per_e, abs(e_post - e_pre))
        per_p = max(per_p, float(np.abs(m @ ev.v_post - m @ ev.v_pre).max()))
    return {
        "energy_error": abs(kinetic_energy(seg.x_end, m) - 0.5),
        "energy_drift": abs(kinetic_energy(seg.x_end, m) - e0),
        "momentum_error": float(np.linalg.norm(total_momentum(seg.x_end, m))),
        "momentum_drift": float(np.linalg.norm(total_momentum(seg.x_end, m) - p0)),
        "per_collision_energy": per_e,
        "per_collision_momentum": per_p,
    }


def suite_simulate(cfg: ExperimentConfig, out: Path, report: Report) -> None:
    params = cfg.system
    x0 = generate_state(params, cfg.seed)
    seg = simulate(x0, params, n_collisions=cfg.collisions)
    write_events_csv(seg.events, out / "events.csv")
    c = _conservation(seg)
    report.data.update({"t_end": seg.t_end, "collisions": len(seg.events), **c})
    report.check("energy", c["energy_error"] <= 1e-9, value=c["energy_error"], tol=1e-9)
    report.check("momentum", c["momentum_error"] <= 1e-9, value=c["momentum_error"], tol=1e-9)
    report.check(
        "per_collision_conservation",
        max(c["per_collision_energy"], c["per_collision_momentum"]) <= 1e-12,
        energy=c["per_collision_energy"],
        momentum=c["per_collision_momentum"],
        tol=1e-12,
    )
    times = seg.times
    gaps = np.diff(times)
    report.check(
        "event_gaps",
        bool(np.all(gaps >= params.tolerances.singular_gap)) if len(gaps) else True,
        min_gap=float(gaps.min()) if len(gaps) else math.inf,
    )
    rel_err = max(
        (abs(ev.rel_speed - float(np.linalg.norm(ev.v_post[ev.pair[0]] - ev.v_post[ev.pair[1]]))) for ev in seg.events),
        default=0.0,
    )
    report.check("relative_speed_preserved", rel_err <= 1e-12, value=rel_err, tol=1e-12)


def q_monotonicity(seg: TrajectorySegment, w0: TangentVector) -> dict:
    """Worst normalized Q decrease and worst free-flight increment error along ``seg``."""
    trace = propagate_along(w0, seg)
    masses = trace.masses
    worst_drop = math.inf
    worst_flight = 0.0
    prev = trace.samples[0]
    for s in trace.samples[1:]:
        # Q is quadratic in w, so a power-of-two rescale by 2**k scales Q by 4**k
        shift = s.scale_exp - prev.scale_exp
        prev_norm2 = np.maximum(prev.w.norm(masses) ** 2, 1e-300)
        drop = (np.ldexp(s.Q, 2 * shift) - prev.Q) / prev_norm2
        worst_drop = min(worst_drop, float(np.min(drop)))
        if s.side in ("flight", "pre") and s.t > prev.t:
            increment = (s.t - prev.t) * minner(prev.w.dv, prev.w.dv, masses)
            err = np.abs(s.Q - prev.Q - increment) / np.maximum(prev_norm2, np.abs(increment))
            worst_flight = max(worst_flight, float(np.max(err)))
        prev = s
    return {"min_q_slack": worst_drop, "max_flight_increment_error": worst_flight}


def suite_verify_q(cfg: ExperimentConfig, out: Path, report: Report) -> None:
    params = cfg.system
    rng = np.random.default_rng(cfg.seed)
    x0 = generate_state(params, rng)
    seg = simulate(x0, params, n_collisions=cfg.collisions)
    w0 = random_reduced_vectors(rng, x0, params, cfg.seeds or 100)
    res = q_monotonicity(seg, w0)
    write_events_csv(seg.events, out / "events.csv")
    write_trace_csv(propagate_along(w0[0], seg), out / "tangent_trace.csv")
    report.data.update({"collisions": len(seg.events), "seeds": len(w0.dq), **res})
    report.check("q_monotone", res["min_q_slack"] >= -1e-10, value=res["min_q_slack"], tol=1e-10)
    report.check(
        "flight_increment",
        res["max_flight_increment_error"] <= 1e-12,
        value=res["max_flight_increment_error"],
        tol=1e-12,
    )


def flat_seed_runs(seg: TrajectorySegment, count: int, length: int):
    """Flat seeds at the first ``count`` usable collisions, each traced ``length`` collisions on.

    Yields ``(event_index, curvature_after, curvature_bound, trace)``.
    """
    params = seg.params
    found = 0
    for k, ev in enumerate(seg.events):
        if found == count:
            break
        if k + length >= len(seg.events):
            break
        try:
            seed = lemma_3_7_seed(ev.x_pre, ev.pair, params)
        except HardBallError:
            continue
        post = propagate_collision(seed, frame_from_event(ev, params))
        piece = subsegment(seg, k, k + 1 + length, at="post")
        trace = propagate_along(post, piece)
        found += 1
        yield k, curvature(post, params.mass_array), curvature_lower_bound(ev, params), trace


def suite_linear_expansion(cfg: ExperimentConfig, out: Path, report: Report) -> None:
    params = cfg.system
    count = cfg.seeds or 50
    x0 = generate_state(params, cfg.seed)
    seg = simulate(x0, params, n_collisions=cfg.collisions + 4 * count)
    bound_slack = math.inf
    violations = 0
    min_slack = math.inf
    used = 0
    first_trace = None
    for k, c0, lower, trace in flat_seed_runs(seg, count, cfg.collisions):
        bound_slack = min(bound_slack, c0 - lower)
        rep = prop_3_5_check(trace, c0)
        violations += rep.violations
        min_slack = min(min_slack, rep.min_slack)
        used += 1
        if first_trace is None:
            first_trace = trace
    write_events_csv(seg.events, out / "events.csv")
    if first_trace is not None:
        write_trace_csv(first_trace, out / "tangent_trace.csv")
    report.data.update({"seeds_used": used, "trace_collisions": cfg.collisions})
    if used < count:
        report.check("enough_seeds", False, used=used, wanted=count)
        return
    report.check("curvature_bound", bound_slack >= -1e-9, min_slack=bound_slack, tol=1e-9)
    report.check("linear_expansion", violations == 0, violations=violations, min_slack=min_slack, tol=1e-8)


def relative_speed_bound_run(params: SystemParams, seed, collisions: int, a: float | None = None) -> dict:
    """One bounded-speed run; returns the initial bound ``a`` and the worst later speed."""
    x = generate_state(params, seed)
    a0 = max_relative_speed(x.v)
    if a is not None:
        x = PhasePoint(x.q, x.v * (a / a0))
        a0 = max_relative_speed(x.v)
    seg = simulate(x, params, n_collisions=collisions)
    worst = max([a0] + [max_relative_speed(ev.v_post) for ev in seg.events])
    return {"a": a0, "max_rel_speed": worst, "bound": lemma_3_10_bound(a0, params.masses)}


def suite_relative_speed_bound(cfg: ExperimentConfig, out: Path, report: Report) -> None:
    params = cfg.system
    runs = cfg.runs or 100
    worst_margin = math.inf
    for child in np.random.SeedSequence(cfg.seed).spawn(runs):
        res = relative_speed_bound_run(params, child, cfg.collisions, cfg.a)
        worst_margin = min(worst_margin, res["bound"] + 1e-12 - res["max_rel_speed"])
    report.data.update({"runs": runs, "collisions": cfg.collisions})
    report.check("relative_speed_bound", worst_margin >= 0.0, min_margin=worst_margin, tol=1e-12)


def first_connected_segment(params: SystemParams, seed, chunk: int = 50, max_collisions: int = 100_000):
    """Simulate until the collision graph first connects; return the trimmed segment."""
    x = generate_state(params, seed)
    n = chunk
    while n <= max_collisions:
        seg = simulate(x, params, n_collisions=n)
        pref = first_connected_prefix(CollisionSequence.from_segment(seg))
        if pref is not None:
            return subsegment_from_start(seg, pref.k)
        n *= 2
    raise HypothesisUnmet(f"collision graph still disconnected after {max_collisions} collisions")


def subsegment_from_start(seg: TrajectorySegment, k: int) -> TrajectorySegment:
    ev = seg.events[k - 1]
    return TrajectorySegment(seg.params, seg.x0, ev.t, seg.events[:k], ev.x_post)


def suite_fast_collision(cfg: ExperimentConfig, out: Path, report: Report) -> None:
    params = cfg.system
    runs = cfg.runs or 100
    G = g_threshold(params.masses)
    counter = 0
    f_margin = math.inf
    for child in np.random.SeedSequence(cfg.seed).spawn(runs):
        seg = first_connected_segment(params, child)
        speeds = [ev.rel_speed for ev in seg.events]
        if max(speeds) < G:
            counter += 1
        # every relative speed along the segment stays below f(a), a = max collision speed
        fa = f_bound(max(speeds), params.masses)
        worst = max([max_relative_speed(seg.x0.v)] + [max_relative_speed(ev.v_post) for ev in seg.events])
        f_margin = min(f_margin, fa + 1e-9 - worst)
    report.data.update({"runs": runs, "G": G})
    report.check("fast_collision_exists", counter == 0, counterexamples=counter, G=G)
    report.check("f_bound_holds", f_margin >= 0.0, min_margin=f_margin, tol=1e-9)


def suite_certificate(cfg: ExperimentConfig, out: Path, report: Report) -> None:
    params = cfg.system
    x0 = generate_state(params, cfg.seed)
    L = cfg.L
    exp = expansion_certificate(x0, params, L, cfg.collisions)
    con = contraction_certificate(x0, params, L, cfg.collisions)
    exp_check = verify_certificate(exp)
    con_check = verify_certificate(con)
    dual = expansion_certificate(PhasePoint(x0.q, -x0.v), params, L, cfg.collisions)
    records = [exp.to_record(), con.to_record()]
    (out / "certificates.json").write_text(json.dumps(records, indent=1, sort_keys=True) + "\n")
    write_events_csv(exp.segment.events, out / "events.csv")
    report.data.update(
        {
            "expansion": {"t": exp.t, "log10_ratio": exp.log_ratio / math.log(10), "event_index": exp.event_index},
            "contraction": {"t": con.t, "log10_ratio": con.log_ratio / math.log(10), "event_index": con.event_index},
        }
    )
    report.check("expansion_ratio", exp_check > math.log(L), log_ratio=exp_check, log_L=math.log(L))
    report.check("contraction_ratio", con_check < -math.log(L), log_ratio=con_check, log_L=math.log(L))
    report.check(
        "reverification",
        abs(exp_check - exp.log_ratio) <= 1e-9 and abs(con_check - con.log_ratio) <= 1e-9,
        expansion_diff=abs(exp_check - exp.log_ratio),
        contraction_diff=abs(con_check - con.log_ratio),
        tol=1e-9,
    )
    report.check("duality", abs(con_check + dual.log_ratio) <= 1e-10, diff=abs(con_check + dual.log_ratio), tol=1e-10)


def suite_estimates(cfg: ExperimentConfig, out: Path, report: Report) -> None:
    ms = MassMultiset.of(cfg.system.masses)
    f1 = f_bound(1.0, ms)
    G = g_threshold(ms)
    G_bis = g_threshold(ms, method="bisect")
    report.data.update(
        {
            "masses": list(ms.masses),
            "f_1": f1,
            "G": G,
            "G_bisect": G_bis,
            "speed_bound_factor": lemma_3_10_bound(1.0, ms),
        }
    )
    report.check("G_criterion", f_bound(G, ms) < ms.M ** -0.5, f_G=f_bound(G, ms), limit=ms.M ** -0.5)
    report.check("G_paths_agree", abs(G - G_bis) <= 1e-12 * G, closed=G, bisect=G_bis)


SUITES = {
    "simulate": suite_simulate,
    "verify-q": suite_verify_q,
    "verify-prop35": suite_linear_expansion,
    "verify-lemma310": suite_relative_speed_bound,
    "verify-cor312": suite_fast_collision,
    "certificate": suite_certificate,
    "estimates": suite_estimates,
}


def run(cfg: ExperimentConfig, output_dir=None) -> Report:
    """Execute one suite, write its files and ``report.json``; return the report."""
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = Report(kind=cfg.kind, config=cfg.resolved())
    try:
        SUITES[cfg.kind](cfg, out, report)
    except SingularOrbit as exc:
        report.status, report.exit_code = "singular", EXIT_SINGULAR
        report.data["error"] = str(exc)
    except (HypothesisUnmet, BudgetExhausted) as exc:
        report.status, report.exit_code = "hypothesis-unmet", EXIT_UNMET
        report.data["error"] = str(exc)
    except PropertyViolation as exc:
        report.status, report.exit_code = "violation", EXIT_VIOLATION
        report.data["error"] = str(exc)
    (out / "report.json").write_text(report.to_json() + "\n")
    return report
