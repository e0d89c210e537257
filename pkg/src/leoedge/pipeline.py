"""Slotted scatter / process / gather simulation with Monte Carlo replicas.

A frame captured in slot ``k`` is scattered in ``k``, processed in ``k + 1``
and gathered in ``k + 2``. Allocation depends only on geometry, so it is solved
once per slot; turbulence and execution-time randomness vary per replica.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .atmosphere import TurbulenceModel
from .compute import (
    ExecTimeModel,
    PlatformSpec,
    WorkloadSpec,
    default_exec_model,
    mean_exec_time,
    power_at,
)
from .acquisition import FrameSpec
from .geometry import (
    SPEED_OF_LIGHT,
    ConstellationSpec,
    GroundStationSet,
    elevation_angle,
    ground_ecef,
    propagate,
)
from .network import LinkSpec, downlink_rate, downlink_snr, isl_range_m, ring_distance
from .proc_scheduler import (
    GROUND,
    InfeasibleAllocationError,
    ProcessingInstance,
    solve as solve_allocation,
)

logger = logging.getLogger(__name__)

ENERGY_CATEGORIES = (
    "maneuver",
    "scatter_isl",
    "scatter_dl",
    "processing_edge",
    "processing_ground",
    "gather_isl",
    "gather_dl",
)


# --- ground-station selection ---------------------------------------------------------------


@dataclass(frozen=True)
class GroundSelection:
    time: float
    station_id: str | None
    sat: int | None
    rate: float
    snr: float
    d_eg_m: float
    elevation_deg: float

    @property
    def in_contact(self) -> bool:
        return self.sat is not None and self.rate > 0


def select_gs(
    spec: ConstellationSpec,
    stations: GroundStationSet,
    t: float,
    link: LinkSpec,
    *,
    source: int | None = None,
) -> GroundSelection:
    """Station and edge satellite pair offering the highest feeder-link rate at ``t``.

    Rate ties go to the higher SNR, then (when ``source`` is given) to the
    satellite fewest ring hops from it, then to the station id.
    """
    sat_pos = propagate(spec, t, "edge")
    st = list(stations)
    gpos = ground_ecef([s.lat for s in st], [s.lon for s in st], spec.earth_radius)
    el = elevation_angle(sat_pos[None, :, :], gpos[:, None, :])
    dist_m = np.linalg.norm(sat_pos[None, :, :] - gpos[:, None, :], axis=-1) * 1e3
    masks = np.array([s.min_elevation for s in st])[:, None]
    visible = el >= masks
    if not visible.any():
        return GroundSelection(t, None, None, 0.0, 0.0, math.inf, float("nan"))
    snr = downlink_snr(link, dist_m)
    rate = np.where(visible, downlink_rate(link, snr), -1.0)
    n = spec.n_sats_edge
    best = None
    for i, j in zip(*np.nonzero(visible)):
        hops = ring_distance(n, source, int(j)) if source is not None else 0
        key = (-rate[i, j], -snr[i, j], hops, st[i].id, int(j))
        if best is None or key < best[0]:
            best = (key, i, int(j))
    _, i, j = best
    if rate[i, j] <= 0:
        return GroundSelection(t, st[i].id, j, 0.0, float(snr[i, j]), float(dist_m[i, j]), float(el[i, j]))
    return GroundSelection(t, st[i].id, j, float(rate[i, j]), float(snr[i, j]), float(dist_m[i, j]),
                           float(el[i, j]))


# --- configuration and records ---------------------------------------------------------------


@dataclass(frozen=True)
class Capture:
    """One executed acquisition: time (s), ring index of the capturing satellite, profit."""

    time: float
    source: int = 0
    target_id: int = -1
    profit: float = 1.0
    maneuver_j: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    edge_platform: PlatformSpec
    ground_platform: PlatformSpec | None
    t_slot: float = 10.0
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    frame: FrameSpec = field(default_factory=FrameSpec)
    link: LinkSpec = field(default_factory=LinkSpec)
    n_replicas: int = 200
    seed: int = 0
    gate_turbulence: bool = True
    raw_rate_slot: str = "scatter"  # which slot's feeder link carries raw bits: "scatter" or "gather"
    select_at: float = 0.5  # fraction into the slot where the feeder link is evaluated
    exec_models: dict | None = None  # platform id -> ExecTimeModel

    def __post_init__(self):
        if self.t_slot <= 0:
            raise ValueError("slot duration must be positive")
        if self.n_replicas < 1:
            raise ValueError("need at least one replica")
        if self.raw_rate_slot not in ("scatter", "gather"):
            raise ValueError("raw_rate_slot must be 'scatter' or 'gather'")
        if not 0.0 <= self.select_at <= 1.0:
            raise ValueError("select_at must lie in [0, 1]")


@dataclass
class SlotRecord:
    slot: int
    t_start: float
    station_id: str | None
    dl_sat: int | None
    rate: float
    captured: list[int] = field(default_factory=list)
    processing: list[int] = field(default_factory=list)
    gathering: list[int] = field(default_factory=list)
    energy: dict[str, float] = field(default_factory=lambda: dict.fromkeys(ENERGY_CATEGORIES, 0.0))


@dataclass
class SlotTimeline:
    slot_duration: float
    records: dict[int, SlotRecord] = field(default_factory=dict)

    def record(self, k: int) -> SlotRecord:
        return self.records[k]

    def __len__(self):
        return len(self.records)


@dataclass
class EnergyLedger:
    """Energy per category summed over replicas (J), plus per-batch replica totals."""

    n_replicas: int
    totals: dict[str, float] = field(default_factory=lambda: dict.fromkeys(ENERGY_CATEGORIES, 0.0))
    events: list[tuple[str, float]] = field(default_factory=list)

    def add(self, category: str, joules: float) -> None:
        if joules < 0:
            raise ValueError("energy must be non-negative")
        self.events.append((category, float(joules)))

    def close(self) -> None:
        """Compensated per-category sums, independent of event order."""
        for cat in ENERGY_CATEGORIES:
            self.totals[cat] = math.fsum(j for c, j in self.events if c == cat)

    @property
    def total(self) -> float:
        return math.fsum(self.totals.values())

    def mean_per_replica(self) -> dict[str, float]:
        return {k: v / self.n_replicas for k, v in self.totals.items()}


@dataclass
class BatchOutcome:
    """Frame(s) captured in one slot and their fate across replicas."""

    slot: int
    captures: list[int]
    station_id: str | None
    dl_sat: int | None
    rate: float
    hops_to_dl: int | None
    plan: dict | None
    status: str  # "ok", "dropped", "no-contact", "rejected"
    energy: np.ndarray  # per replica, J (processing + communication)
    delivered: np.ndarray  # per replica bool
    accepted: np.ndarray  # per replica count of accepted captures

    def quantiles(self, mask=None) -> tuple[float, float, float]:
        e = self.energy if mask is None else self.energy[mask]
        if len(e) == 0:
            return (math.nan,) * 3
        return float(np.mean(e)), float(np.quantile(e, 0.05)), float(np.quantile(e, 0.95))


@dataclass
class PipelineResult:
    timeline: SlotTimeline
    ledger: EnergyLedger
    batches: list[BatchOutcome]
    config: PipelineConfig
    horizon: float

    @property
    def mean_power(self) -> float:
        """Average active power over the episode (W), excluding attitude maneuvers."""
        pipe = sum(v for k, v in self.ledger.mean_per_replica().items() if k != "maneuver")
        return pipe / self.horizon

    @property
    def feasible(self) -> bool:
        return not any(b.status == "dropped" for b in self.batches)

    def metrics(self) -> dict:
        ok = [b for b in self.batches if b.status == "ok"]
        devs = []
        for b in ok:
            m, lo, hi = b.quantiles(b.accepted > 0)
            if m > 0:
                devs.append(max(m - lo, hi - m) / m)
        delivered = sum(int(b.delivered.sum()) for b in self.batches)
        attempted = sum(int((b.accepted > 0).sum()) for b in self.batches if b.status != "rejected")
        return {
            "n_batches": len(self.batches),
            "n_captures": sum(len(b.captures) for b in self.batches),
            "n_dropped": sum(b.status == "dropped" for b in self.batches),
            "n_no_contact": sum(b.status == "no-contact" for b in self.batches),
            "feasible": self.feasible,
            "mean_power_w": self.mean_power,
            "energy_per_replica_j": self.ledger.mean_per_replica(),
            "max_quantile_deviation": max(devs) if devs else math.nan,
            "delivery_ratio": delivered / attempted if attempted else math.nan,
            "horizon_s": self.horizon,
            "t_slot_s": self.config.t_slot,
            "n_replicas": self.config.n_replicas,
        }


# --- simulation ---------------------------------------------------------------------------------------


def _exec_models(config: PipelineConfig) -> dict[str, ExecTimeModel]:
    models = dict(config.exec_models or {})
    for p in (config.edge_platform, config.ground_platform):
        if p is not None and p.id not in models:
            models[p.id] = default_exec_model(p, config.workload, low=0.1)
    return models


def _largest_remainder(n: int, x: np.ndarray) -> np.ndarray:
    raw = n * x
    base = np.floor(raw).astype(int)
    short = n - int(base.sum())
    if short > 0:
        order = np.lexsort((np.arange(len(x)), -(raw - base)))
        base[order[:short]] += 1
    return base


def _per_image_cv(model: ExecTimeModel, p: PlatformSpec, f: float, w: WorkloadSpec) -> float:
    var = float(model.variance(model.clamp(f)))
    return math.sqrt(max(var, 0.0)) / mean_exec_time(p, f, w)


def run(
    spec: ConstellationSpec,
    stations: GroundStationSet,
    captures: Sequence[Capture],
    config: PipelineConfig,
    turbulence: TurbulenceModel | None = None,
    *,
    horizon: float | None = None,
) -> PipelineResult:
    """Simulate every capture through the slotted pipeline across ``config.n_replicas`` replicas."""
    T = config.t_slot
    R = config.n_replicas
    n_ring = spec.n_sats_edge
    d_isl = isl_range_m(n_ring, spec.altitude_e) if n_ring >= 2 else 0.0
    caps = sorted(captures, key=lambda c: (c.time, c.source, c.target_id))
    horizon = horizon if horizon is not None else (max((c.time for c in caps), default=0.0) + 3 * T)
    timeline = SlotTimeline(T)
    ledger = EnergyLedger(R)
    models = _exec_models(config)
    gate = config.gate_turbulence and turbulence is not None

    # random streams: one child per replica, split into turbulence and execution streams
    children = np.random.SeedSequence(config.seed).spawn(R)
    streams = [c.spawn(2) for c in children]
    turb_rngs = [np.random.default_rng(s[0]) for s in streams]
    exec_rngs = [np.random.default_rng(s[1]) for s in streams]

    # turbulence outcomes per capture and replica
    accepted = np.ones((len(caps), R), dtype=bool)
    if gate:
        for r in range(R):
            draws = turbulence.sample_cn2(len(caps), rng=turb_rngs[r]) if caps else np.zeros(0)
            accepted[:, r] = draws <= turbulence.threshold

    selections: dict[int, GroundSelection] = {}

    def slot_record(k: int, source: int) -> SlotRecord:
        if k not in timeline.records:
            sel = select_gs(spec, stations, (k + config.select_at) * T, config.link, source=source)
            selections[k] = sel
            timeline.records[k] = SlotRecord(k, k * T, sel.station_id, sel.sat, sel.rate)
        return timeline.records[k]

    by_slot: dict[int, list[int]] = {}
    for i, c in enumerate(caps):
        by_slot.setdefault(int(math.floor(c.time / T + 1e-9)), []).append(i)

    batches: list[BatchOutcome] = []
    for k in sorted(by_slot):
        idx = by_slot[k]
        source = caps[idx[0]].source
        rec_k = slot_record(k, source)
        slot_record(k + 1, source)
        rec_g = slot_record(k + 2, source)
        rec_k.captured.extend(idx)
        for i in idx:
            if caps[i].maneuver_j:
                ledger.add("maneuver", caps[i].maneuver_j * R)
                rec_k.energy["maneuver"] += caps[i].maneuver_j
        sel_k, sel_g = selections[k], selections[k + 2]
        raw_sel = sel_k if config.raw_rate_slot == "scatter" else sel_g
        n_acc = accepted[idx].sum(axis=0)
        energy = np.zeros(R)
        delivered = np.zeros(R, dtype=bool)
        hops = ring_distance(n_ring, source, sel_g.sat) if sel_g.sat is not None else None
        if not n_acc.any():
            batches.append(BatchOutcome(k, idx, sel_g.station_id, sel_g.sat, sel_g.rate, hops, None,
                                        "rejected", energy, delivered, n_acc))
            continue
        plans: dict[int, tuple] = {}
        status = "ok"
        plan_dict = None
        for m in sorted(set(int(v) for v in n_acc if v > 0)):
            n_img = config.frame.n_img * m
            inst = ProcessingInstance(
                edge=(config.edge_platform,) * n_ring,
                edge_nodes=tuple(range(n_ring)),
                ground=config.ground_platform,
                workload=config.workload,
                frame_bits=n_img * config.frame.img_bits,
                img_bits=config.frame.img_bits,
                t_slot=T,
                link=config.link,
                n_ring=n_ring,
                isl_range_m=d_isl,
                source=source,
                raw_dl_sat=raw_sel.sat if raw_sel.in_contact else None,
                raw_rate=raw_sel.rate,
                raw_d_eg_m=raw_sel.d_eg_m if raw_sel.in_contact else 0.0,
                gather_dl_sat=sel_g.sat if sel_g.in_contact else None,
                gather_rate=sel_g.rate,
                gather_d_eg_m=sel_g.d_eg_m if sel_g.in_contact else 0.0,
            )
            try:
                plan = solve_allocation(inst)
            except InfeasibleAllocationError as exc:
                status = "no-contact" if not sel_g.in_contact else "dropped"
                logger.info("slot %d: allocation infeasible (%s)", k, ", ".join(exc.violated))
                plans[m] = None
                continue
            plans[m] = (inst, plan, _execution_setup(inst, plan, config, models))
            if plan_dict is None:
                plan_dict = plan.to_dict()
        if all(v is None for v in plans.values()):
            batches.append(BatchOutcome(k, idx, sel_g.station_id, sel_g.sat, sel_g.rate, hops, None,
                                        status, energy, delivered, n_acc))
            continue
        status = "ok" if all(v is not None for v in plans.values()) else status
        sums = dict.fromkeys(ENERGY_CATEGORIES[1:], 0.0)
        for r in range(R):
            m = int(n_acc[r])
            if m == 0 or plans.get(m) is None:
                continue
            inst, plan, setup = plans[m]
            e, ok, parts = _replica(inst, plan, setup, exec_rngs[r], T, config)
            energy[r] = e
            delivered[r] = ok
            for cat, j in parts.items():
                ledger.add(cat, j)
                sums[cat] += j
        for cat, j in sums.items():
            slot = k if cat.startswith("scatter") else k + 2 if cat.startswith("gather") else k + 1
            timeline.records[slot].energy[cat] += j / R
        timeline.records[k + 1].processing.extend(idx)
        rec_g.gathering.extend(idx)
        batches.append(BatchOutcome(k, idx, sel_g.station_id, sel_g.sat, sel_g.rate, hops, plan_dict,
                                    status, energy, delivered, n_acc))
    ledger.close()
    return PipelineResult(timeline, ledger, batches, config, horizon)


@dataclass(frozen=True)
class _ExecSetup:
    counts: np.ndarray  # whole images per processor
    freqs: np.ndarray
    power: np.ndarray
    mean_t: np.ndarray  # per image
    cv: np.ndarray
    comm: dict
    gather_delay: np.ndarray  # propagation + transmission to the downlink satellite
    dl_time: float


def _execution_setup(inst: ProcessingInstance, plan, config: PipelineConfig, models) -> _ExecSetup:
    n = int(round(inst.n_images))
    counts = _largest_remainder(n, plan.x)
    procs = inst.processors
    w = inst.workload
    freqs = np.zeros(len(procs))
    power = np.zeros(len(procs))
    mean_t = np.zeros(len(procs))
    cv = np.zeros(len(procs))
    gd = np.zeros(len(procs))
    dl_time = 0.0
    for i, (name, p) in enumerate(procs):
        if counts[i] == 0:
            continue
        # clock for the whole-image share, never above f_max
        budget = inst.t_slot / counts[i] - p.mu_sync
        f = p.f_max if budget <= 0 else min(p.f_max, p.mu_c * w.work / (p.peak_flops * budget))
        freqs[i] = f
        power[i] = power_at(p, f)
        mean_t[i] = mean_exec_time(p, f, w)
        cv[i] = _per_image_cv(models[p.id], p, f, w)
        if name != GROUND:
            bits = counts[i] * inst.img_bits / w.rho
            hops = inst.gather_route(i).n_isl
            gd[i] = hops * (bits / inst.link.r_isl + inst.isl_range_m / SPEED_OF_LIGHT)
            dl_time += bits / inst.gather_rate
    comm = {c: plan.breakdown[c] for c in ("scatter_isl", "scatter_dl", "gather_isl", "gather_dl")}
    return _ExecSetup(counts, freqs, power, mean_t, cv, comm, gd, dl_time)


def _replica(inst, plan, setup: _ExecSetup, rng: np.random.Generator, T: float, config) -> tuple[float, bool, dict]:
    active = setup.counts > 0
    alpha = 1.0 / setup.cv[active] ** 2
    shape = setup.counts[active] * alpha
    scale = setup.mean_t[active] / alpha
    t_run = rng.gamma(shape, scale)
    e_proc = setup.power[active] * t_run
    names = np.array([nm for nm, _ in inst.processors])[active]
    is_ground = names == GROUND
    parts = dict(setup.comm)
    parts["processing_edge"] = math.fsum(e_proc[~is_ground])
    parts["processing_ground"] = math.fsum(e_proc[is_ground])
    late = np.maximum(t_run - T, 0.0) + setup.gather_delay[active]
    worst = float(np.max(np.where(is_ground, 0.0, late))) if (~is_ground).any() else 0.0
    ok = worst + setup.dl_time <= T
    return math.fsum(parts.values()), bool(ok), parts


# --- outputs -----------------------------------------------------------------------------------------


SLOT_COLUMNS = ["slot", "t_start_s", "station", "dl_sat", "rate_bps", "captured", "processing", "gathering",
                *[f"{c}_j" for c in ENERGY_CATEGORIES]]
BATCH_COLUMNS = ["slot", "captures", "capture_time_s", "status", "station", "dl_sat", "rate_bps", "hops_to_dl",
                 "accepted_fraction", "delivered_fraction", "energy_mean_j", "energy_q05_j", "energy_q95_j"]


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def slot_rows(result: PipelineResult) -> list[list[str]]:
    rows = []
    for k in sorted(result.timeline.records):
        r = result.timeline.records[k]
        rows.append([format_cell(x) for x in (
            r.slot, r.t_start, r.station_id, r.dl_sat, r.rate,
            " ".join(map(str, r.captured)), " ".join(map(str, r.processing)), " ".join(map(str, r.gathering)),
            *[float(r.energy[c]) for c in ENERGY_CATEGORIES])])
    return rows


def batch_rows(result: PipelineResult, captures: Sequence[Capture] | None = None) -> list[list[str]]:
    caps = sorted(captures, key=lambda c: (c.time, c.source, c.target_id)) if captures else None
    rows = []
    for b in result.batches:
        acc = b.accepted > 0
        m, lo, hi = b.quantiles(acc) if b.status == "ok" else (math.nan,) * 3
        t_cap = caps[b.captures[0]].time if caps else math.nan
        rows.append([format_cell(x) for x in (
            b.slot, " ".join(map(str, b.captures)), float(t_cap), b.status, b.station_id, b.dl_sat, float(b.rate),
            b.hops_to_dl, float(acc.mean()), float(b.delivered[acc].mean()) if acc.any() else math.nan,
            m, lo, hi)])
    return rows


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_json(result: PipelineResult) -> str:
    return json.dumps(result.metrics(), indent=1, sort_keys=True, default=float)


# --- fixed-topology snapshot and parameter sweep ------------------------------------------------------


def snapshot_instance(
    edge_platform: PlatformSpec,
    ground_platform: PlatformSpec | None,
    fps: float,
    t_slot: float,
    *,
    n_ring: int = 23,
    altitude_km: float = 617.0,
    hops_to_dl: int = 5,
    rate: float = 2.3e9,
    workload: WorkloadSpec | None = None,
    frame: FrameSpec | None = None,
    link: LinkSpec | None = None,
    edge_count: int | None = None,
) -> ProcessingInstance:
    """Fixed topology: the capturing satellite ``hops_to_dl`` hops from the downlink satellite."""
    frame = frame or FrameSpec()
    n_edge = n_ring if edge_count is None else edge_count
    return ProcessingInstance(
        edge=(edge_platform,) * n_edge,
        edge_nodes=tuple(range(n_edge)),
        ground=ground_platform,
        workload=workload or WorkloadSpec(),
        frame_bits=fps * t_slot * frame.img_bits,
        img_bits=frame.img_bits,
        t_slot=t_slot,
        link=link or LinkSpec(),
        n_ring=n_ring,
        isl_range_m=isl_range_m(n_ring, altitude_km),
        source=0,
        raw_dl_sat=hops_to_dl % n_ring,
        raw_rate=rate,
        gather_dl_sat=hops_to_dl % n_ring,
        gather_rate=rate,
    )


def snapshot_power(inst: ProcessingInstance) -> dict:
    """Mean power over one slot by phase (W); ``feasible`` is False when no split fits."""
    try:
        plan = solve_allocation(inst)
    except InfeasibleAllocationError as exc:
        return {"feasible": False, "violated": exc.violated, "total_w": math.nan}
    br = {k: float(v) / inst.t_slot for k, v in plan.breakdown.items()}
    return {
        "feasible": True,
        "edge_w": br["processing_edge"],
        "ground_w": br["processing_ground"],
        "comm_w": br["scatter_isl"] + br["scatter_dl"] + br["gather_isl"] + br["gather_dl"],
        "total_w": math.fsum(br.values()),
        "ground_share": float(plan.shares.get(GROUND, 0.0)),
    }


SWEEP_COLUMNS = ["platform", "t_slot_s", "feasible", "mean_power_w", "n_batches", "n_dropped"]


def sweep(
    spec: ConstellationSpec,
    stations: GroundStationSet,
    captures: Sequence[Capture],
    platforms: dict[str, PlatformSpec],
    t_slots: Sequence[float],
    base: PipelineConfig,
    turbulence: TurbulenceModel | None = None,
    *,
    horizon: float,
) -> list[dict]:
    """Mean episode power for every (platform, slot duration) pair."""
    if not t_slots or not platforms:
        raise ValueError("sweep grid is empty")
    rows = []
    for name in sorted(platforms):
        for T in t_slots:
            cfg = PipelineConfig(**{**base.__dict__, "edge_platform": platforms[name], "t_slot": float(T)})
            res = run(spec, stations, captures, cfg, turbulence, horizon=horizon)
            m = res.metrics()
            rows.append({
                "platform": name,
                "t_slot_s": float(T),
                "feasible": res.feasible,
                "mean_power_w": res.mean_power if res.feasible else math.nan,
                "n_batches": m["n_batches"],
                "n_dropped": m["n_dropped"],
            })
    return rows
