"""Experiment drivers shared by the command line and the acceptance checks.

Each driver takes a validated :class:`~leoedge.scenario.Scenario` and returns
plain rows (lists of dicts) plus a JSON-ready summary. Nothing here reads the
wall clock, so equal seeds give equal outputs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import obs_scheduler as osch
from . import pipeline as pl
from .acquisition import AgilitySpec, build_observation_windows
from .atmosphere import TurbulenceModel
from .geometry import (
    ConstellationSpec,
    Target,
    TrackTargetGenerator,
    compute_visibility_windows,
    orbital_period,
)
from .proc_scheduler import max_supported_load
from .scenario import Scenario

logger = logging.getLogger(__name__)


# --- observation instances ---------------------------------------------------------------------


def track_instance(
    spec: ConstellationSpec,
    agility: AgilitySpec,
    n_targets: int,
    rng: np.random.Generator,
    *,
    horizon: float = 1600.0,
    max_cross_track_km: float = 400.0,
    max_off_nadir: float = 45.0,
    targets: list[Target] | None = None,
) -> tuple[osch.SchedulingInstance, list[Target]]:
    """Targets scattered along the observing satellite's track, one pass long."""
    if targets is None:
        targets = TrackTargetGenerator(horizon=horizon, max_cross_track_km=max_cross_track_km).sample(
            spec, n_targets, rng)
    vtw = compute_visibility_windows(spec, targets, horizon, max_off_nadir)
    otws = build_observation_windows(spec, targets, vtw, agility)
    return osch.SchedulingInstance(tuple(otws), agility, horizon), targets


def _instance_rng(scenario: Scenario, n_targets: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(scenario.seed_for("targets"), spawn_key=(n_targets, index))
    return np.random.default_rng(ss)


def scenario_instance(scenario: Scenario, n_targets: int | None = None, index: int = 0):
    d = scenario.data
    obs = d["observation"]
    explicit = d["targets"]["positions"]
    targets = [Target(i, float(a), float(b)) for i, (a, b) in enumerate(explicit)] if explicit else None
    n = len(targets) if targets else int(n_targets if n_targets is not None else d["targets"]["count"])
    return track_instance(
        scenario.constellation(), scenario.agility(), n, _instance_rng(scenario, n, index),
        horizon=float(obs["horizon_s"]), max_cross_track_km=float(d["targets"]["max_cross_track_km"]),
        max_off_nadir=float(obs["max_off_nadir_deg"]), targets=targets,
    )


def solve_with_scenario(scenario: Scenario, instance, method: str | None = None, seed: int | None = None):
    s = scenario.data["solver"]
    method = method or s["method"]
    seed = scenario.seed_for("ga") if seed is None else seed
    kw = {}
    if method == "exact":
        kw = {"max_targets": int(s["max_targets"]), "max_otws": int(s["max_otws"])}
    return osch.solve(instance, method, seed=seed, fallback=s["fallback"], ga_kw=dict(s["ga"]),
                      beam_width=int(s["beam_width"]), **kw)


OBSERVE_COLUMNS = ["n_targets", "requested", "solver", "profit", "targets_observed",
                   "mean_gsd_m", "maneuver_energy_j", "proven_optimal", "n_otws"]


def observe(scenario: Scenario, methods=None, sizes=None) -> list[dict]:
    """Profit and coverage per instance size and solver."""
    methods = methods or [scenario.data["solver"]["method"], "ga", "fifo"]
    methods = list(dict.fromkeys(methods))
    sizes = sizes or scenario.data["observation"]["instance_sizes"]
    rows = []
    for n in sizes:
        inst, _ = scenario_instance(scenario, int(n))
        for m in methods:
            sch = solve_with_scenario(scenario, inst, m)
            rows.append({
                "n_targets": int(n),
                "requested": m,
                "solver": sch.solver,
                "profit": sch.total_profit,
                "targets_observed": len(sch.observed_targets),
                "mean_gsd_m": sch.mean_gsd,
                "maneuver_energy_j": math.fsum(sch.maneuver_energy_used.values()),
                "proven_optimal": sch.proven_optimal,
                "n_otws": len(inst.otws),
            })
            logger.info("n=%d %s profit %.4f", n, sch.solver, sch.total_profit)
    return rows


# --- turbulence gating -----------------------------------------------------------------------------


TURBULENCE_COLUMNS = ["sat_id", "target_id", "timestamp", "profit", "accept_probability",
                      "empirical_precision", "expected_profit", "actual_profit"]


@dataclass
class GatingReport:
    rows: list[dict]
    n_acquisitions: int
    realizations: int
    accepted: int
    cdf_at_threshold: float
    interval: tuple[int, int]
    expected_profit: float
    actual_profit: float

    @property
    def precision(self) -> float:
        return self.accepted / (self.n_acquisitions * self.realizations)

    @property
    def within_interval(self) -> bool:
        return self.interval[0] <= self.accepted <= self.interval[1]

    def summary(self) -> dict:
        return {
            "n_acquisitions": self.n_acquisitions,
            "realizations": self.realizations,
            "precision": self.precision,
            "cdf_at_threshold": self.cdf_at_threshold,
            "accepted_interval_99": list(self.interval),
            "within_interval": self.within_interval,
            "expected_profit": self.expected_profit,
            "mean_actual_profit": self.actual_profit,
            "profit_divergence": 1.0 - self.actual_profit / self.expected_profit if self.expected_profit else math.nan,
        }


def gate_schedule(schedule: osch.ObservationSchedule, turbulence: TurbulenceModel, realizations: int) -> GatingReport:
    """Draw ``realizations`` turbulence values per acquisition and score the schedule post hoc."""
    sel = schedule.selected
    p = float(turbulence.acceptance_probability)
    draws = turbulence.sample_cn2(max(len(sel), 1) * realizations).reshape(-1, realizations)[: len(sel)]
    ok = draws <= turbulence.threshold
    rows = []
    for o, acc in zip(sel, ok):
        frac = float(acc.mean())
        rows.append({
            "sat_id": o.sat_id, "target_id": o.target_id, "timestamp": o.timestamp, "profit": o.profit,
            "accept_probability": p, "empirical_precision": frac,
            "expected_profit": o.profit, "actual_profit": o.profit * frac,
        })
    n_trials = len(sel) * realizations
    lo, hi = stats.binom.interval(0.99, n_trials, p) if n_trials else (0, 0)
    sigma = np.array([o.profit for o in sel])
    actual = float(np.mean((sigma[:, None] * ok).sum(axis=0))) if len(sel) else 0.0
    return GatingReport(rows, len(sel), realizations, int(ok.sum()), p, (int(lo), int(hi)),
                        float(sigma.sum()), actual)


def follower_pass_instances(scenario: Scenario, n_passes: int | None = None, n_targets: int | None = None):
    """One scheduling horizon per pass of successive ring satellites over the same region.

    Targets lie under the track of ring satellite 0; the satellite trailing it by
    ``k`` ring positions flies over the same area ``k * P / N`` seconds later, with
    the track shifted slightly by Earth rotation.
    """
    d = scenario.data
    obs = d["observation"]
    base = scenario.constellation()
    ring = base.edge_elements()
    n = len(ring)
    k_passes = int(n_passes if n_passes is not None else obs["n_passes"])
    n_targets = int(n_targets if n_targets is not None else obs["pass_targets"])
    lag = orbital_period(base.altitude_e, base.earth_radius) / n
    spec = ConstellationSpec(base.n_sats_edge, base.altitude_e, base.inclination_e, base.n_planes,
                             base.raan_e, base.phase_e, obs_sats=tuple(ring[(n - k) % n] for k in range(k_passes)))
    horizon = float(obs["horizon_s"])
    targets = TrackTargetGenerator(horizon=horizon, max_cross_track_km=float(obs["pass_cross_track_km"])).sample(
        spec, n_targets, _instance_rng(scenario, n_targets, 10_000))
    total = horizon + k_passes * lag
    agility = scenario.agility()
    vtw = compute_visibility_windows(spec, targets, total, float(obs["max_off_nadir_deg"]))
    otws = build_observation_windows(spec, targets, vtw, agility)
    return [osch.SchedulingInstance(tuple(o for o in otws if o.sat_id == k), agility, total)
            for k in range(k_passes)], n_targets


RESCHEDULE_COLUMNS = ["replica", "n_targets", "attempts_per_target", "rescheduled_fraction",
                      "success_fraction", "observations"]


def reschedule(scenario: Scenario, method: str | None = None, replicas: int = 8) -> tuple[list[dict], dict]:
    """Rescheduling statistics over independent turbulence streams on fixed passes.

    Returns one row per replica and the across-replica means.
    """
    instances, n_targets = follower_pass_instances(scenario)
    s = scenario.data["solver"]
    method = method or s["method"]
    kw = {"max_targets": int(s["max_targets"]), "max_otws": int(s["max_otws"])} if method == "exact" else {}
    kw.update(fallback=s["fallback"], ga_kw=dict(s["ga"]), beam_width=int(s["beam_width"]))
    children = np.random.SeedSequence(scenario.seed_for("turbulence")).spawn(replicas)
    rows = []
    for r, child in enumerate(children):
        turb = scenario.turbulence(seed=int(child.generate_state(1)[0]))
        rep = osch.reschedule_across_sth(instances, turb, method=method, seed=scenario.seed_for("ga"),
                                         n_targets=n_targets, solver_kw=kw)
        rows.append({"replica": r, **rep.summary()})
    keys = ("attempts_per_target", "rescheduled_fraction", "success_fraction", "observations")
    mean = {k: float(np.mean([row[k] for row in rows])) for k in keys}
    mean.update(n_targets=n_targets, replicas=replicas, n_passes=len(instances))
    return rows, mean


def turbulence_mc(scenario: Scenario, method: str | None = None, replicas: int = 8):
    """Post-hoc gating of one schedule plus multi-pass rescheduling statistics."""
    inst, _ = scenario_instance(scenario)
    sched = solve_with_scenario(scenario, inst, method)
    gating = gate_schedule(sched, scenario.turbulence(), int(scenario.data["turbulence"]["realizations"]))
    rows, mean = reschedule(scenario, method, replicas)
    return gating, rows, mean


# --- processing capacity ---------------------------------------------------------------------------


CAPACITY_COLUMNS = ["configuration", "edge_platform", "n_edge", "ground_platform", "images_per_slot",
                    "max_fps", "load_fps", "power_w", "feasible"]


def capacity(scenario: Scenario) -> list[dict]:
    """Peak supported load per edge platform, plus the process-everything-on-ground baseline."""
    d = scenario.data["capacity"]
    T = float(d["t_slot_s"])
    w = scenario.workload()
    ground = scenario.ground_platform()
    n_edge = scenario.constellation().n_sats_edge
    rows = []
    for name in d["platforms"]:
        p = scenario.platform(name)
        procs = [p] * n_edge + ([ground] if ground is not None else [])
        per_slot, fps = max_supported_load(procs, T, w)
        rows.append({"configuration": "edge+ground", "edge_platform": name, "n_edge": n_edge,
                     "ground_platform": ground.id if ground else "", "images_per_slot": per_slot,
                     "max_fps": fps, "load_fps": math.nan, "power_w": math.nan, "feasible": True})
    if ground is not None:
        per_slot, fps = max_supported_load([ground], T, w)
        load = float(d["raw_fps"])
        snap = pl.snapshot_instance(scenario.edge_platform(), ground, load, T, n_ring=n_edge,
                                    altitude_km=scenario.constellation().altitude_e, workload=w,
                                    frame=scenario.frame(), link=scenario.link(), edge_count=0)
        power = pl.snapshot_power(snap)
        rows.append({"configuration": "raw-downlink", "edge_platform": "", "n_edge": 0,
                     "ground_platform": ground.id, "images_per_slot": per_slot, "max_fps": fps,
                     "load_fps": load, "power_w": power["total_w"], "feasible": power["feasible"]})
    return rows


# --- pipeline episode and sweep -----------------------------------------------------------------------


def scenario_captures(scenario: Scenario) -> list[pl.Capture]:
    """Evenly spaced acquisitions by the co-hosted observation satellite (ring index 0)."""
    d = scenario.data["pipeline"]
    return [pl.Capture(time=float(d["first_capture_s"]) + float(d["capture_period_s"]) * i, source=0, target_id=i)
            for i in range(int(d["n_captures"]))]


def pipeline_config(scenario: Scenario, *, edge: str | None = None, t_slot: float | None = None,
                    replicas: int | None = None) -> pl.PipelineConfig:
    d = scenario.data["pipeline"]
    return pl.PipelineConfig(
        edge_platform=scenario.platform(edge) if edge else scenario.edge_platform(),
        ground_platform=scenario.ground_platform(),
        t_slot=float(t_slot if t_slot is not None else d["t_slot_s"]),
        workload=scenario.workload(),
        frame=scenario.frame(),
        link=scenario.link(),
        n_replicas=int(replicas if replicas is not None else d["replicas"]),
        seed=scenario.seed_for("pipeline"),
        gate_turbulence=bool(d["gate_turbulence"]),
    )


def pipeline_episode(scenario: Scenario, *, edge: str | None = None, replicas: int | None = None):
    caps = scenario_captures(scenario)
    cfg = pipeline_config(scenario, edge=edge, replicas=replicas)
    res = pl.run(scenario.constellation(), scenario.ground_stations(), caps, cfg, scenario.turbulence(),
                 horizon=float(scenario.data["pipeline"]["episode_s"]))
    return res, caps


def sweep(scenario: Scenario, *, replicas: int | None = None) -> list[dict]:
    d = scenario.data["sweep"]
    platforms = {name: scenario.platform(name) for name in d["platforms"]}
    return pl.sweep(scenario.constellation(), scenario.ground_stations(), scenario_captures(scenario), platforms,
                    [float(t) for t in d["t_slots_s"]], pipeline_config(scenario, replicas=replicas),
                    scenario.turbulence(), horizon=float(scenario.data["pipeline"]["episode_s"]))
