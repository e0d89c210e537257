"""Scenario files: one YAML (or JSON) document describing a complete experiment setup."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .acquisition import AgilitySpec, FrameSpec
from .atmosphere import TurbulenceModel, sigma_for_acceptance
from .compute import PLATFORMS, PlatformSpec, WorkloadSpec
from .geometry import ConstellationSpec, GroundStationSet, load_ground_stations
from .network import LinkSpec, load_modcod_table, shannon_modcod_table

logger = logging.getLogger(__name__)

SOLVERS = ("exact", "ga", "fifo", "beam")
# fixed stream indices so adding a consumer never shifts the others
SEED_STREAMS = {"targets": 0, "turbulence": 1, "ga": 2, "pipeline": 3, "exec": 4, "instances": 5}


class ScenarioError(ValueError):
    """Carries every validation problem found, not only the first."""

    def __init__(self, errors: list[str], source: str = "scenario"):
        self.errors = list(errors)
        super().__init__(f"{source}: " + "; ".join(self.errors))


DEFAULTS: dict = {
    "name": "unnamed",
    "seed": 0,
    "output_dir": "results",
    "constellation": {
        "n_sats_edge": 23, "altitude_km": 617.0, "inclination_deg": 98.6, "n_planes": 1,
        "raan_deg": 176.0, "phase_deg": 100.0,
    },
    "agility": {
        "theta_max": 45.0, "phi_max": 45.0, "psi_max": 90.0, "p_man": 2.0, "e_max": 1000.0,
        "prc": 10.0, "gsd_nadir": 0.31,
    },
    "frame": {"n_img": 2601, "img_bits": 788513.0},
    "workload": {"work": 79.1e9, "rho": 2346.0},
    "platforms": {"edge": "agx", "ground": "cloud_cpu", "custom": {}},
    "link": {
        "r_isl": 10e9, "p_isl": 60.0, "bandwidth": 500e6, "p_dl": 10.0, "g_dl_db": 66.33,
        "noise_dbw": -119.32, "f_c": 20e9, "modcod": "table", "modcod_path": None, "margin_db": 0.0,
    },
    "turbulence": {
        "kind": "lognormal", "median": 1.1e-14, "sigma_ln": None, "accept_probability": 0.65, "threshold": 2e-14,
        "cdf_path": None, "realizations": 1000,
    },
    "ground_stations": {"path": None, "min_elevation_deg": 5.0},
    "targets": {"count": 140, "positions": [], "max_cross_track_km": 400.0},
    "observation": {
        "horizon_s": 1600.0, "max_off_nadir_deg": 45.0, "instance_sizes": [80, 100, 120, 140],
        "n_passes": 10, "pass_targets": 100, "pass_cross_track_km": 300.0,
    },
    "solver": {
        "method": "exact", "fallback": "ga", "max_targets": 15, "max_otws": 200, "beam_width": 10,
        "ga": {"pop": 20, "generations": 100, "p_cross": 0.2, "p_mut": 0.2},
    },
    "pipeline": {
        "t_slot_s": 10.0, "episode_s": 2000.0, "n_captures": 32, "first_capture_s": 30.0,
        "capture_period_s": 62.5, "replicas": 200, "gate_turbulence": True,
    },
    "sweep": {"t_slots_s": [5, 10, 15, 20, 25, 30, 35, 40], "platforms": ["agx", "nano", "sat_cpu"]},
    "capacity": {"t_slot_s": 10.0, "platforms": ["sat_cpu", "nano", "agx"], "raw_fps": 60.0},
}


def _type_errors(base: dict, data: dict, path: str = "") -> list[str]:
    """Numeric defaults demand numeric values (YAML reads ``1e9`` as a string)."""
    out = []
    for k, ref in base.items():
        where = f"{path}.{k}" if path else k
        v = data.get(k)
        if isinstance(ref, dict) and k != "custom" and isinstance(v, dict):
            out += _type_errors(ref, v, where)
        elif isinstance(ref, bool):
            if not isinstance(v, bool):
                out.append(f"{where}: expected true/false, got {v!r}")
        elif isinstance(ref, (int, float)) and (isinstance(v, bool) or not isinstance(v, (int, float))):
            out.append(f"{where}: expected a number, got {v!r}")
    return out


def _merge(base: dict, over: dict, path: str, errors: list[str]) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            errors.append(f"{where}: unknown field")
        elif isinstance(base[k], dict) and k not in ("custom",):
            if not isinstance(v, dict):
                errors.append(f"{where}: expected a mapping")
            else:
                out[k] = _merge(base[k], v, where, errors)
        else:
            out[k] = v
    return out


@dataclass
class Scenario:
    """Validated scenario; ``data`` is the fully defaulted document."""

    data: dict
    source: Path | None = None

    # --- typed views -------------------------------------------------------------

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def section(self, key: str) -> dict:
        return self.data[key]

    def seed_for(self, stream: str) -> int:
        """Deterministic 63-bit sub-seed for a named consumer."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(SEED_STREAMS[stream],))
        return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

    def rng(self, stream: str) -> np.random.Generator:
        return np.random.default_rng(self.seed_for(stream))

    def constellation(self) -> ConstellationSpec:
        c = self.data["constellation"]
        return ConstellationSpec(int(c["n_sats_edge"]), float(c["altitude_km"]), float(c["inclination_deg"]),
                                 int(c["n_planes"]), float(c["raan_deg"]), float(c["phase_deg"]))

    def agility(self) -> AgilitySpec:
        return AgilitySpec(**{k: float(v) for k, v in self.data["agility"].items()})

    def frame(self) -> FrameSpec:
        f = self.data["frame"]
        return FrameSpec(int(f["n_img"]), float(f["img_bits"]))

    def workload(self) -> WorkloadSpec:
        w = self.data["workload"]
        return WorkloadSpec(work=float(w["work"]), rho=float(w["rho"]), img_bits=float(self.data["frame"]["img_bits"]))

    def platform(self, name: str) -> PlatformSpec:
        custom = self.data["platforms"]["custom"]
        if name in custom:
            return PlatformSpec(id=name, **custom[name])
        return PLATFORMS[name]

    def edge_platform(self) -> PlatformSpec:
        return self.platform(self.data["platforms"]["edge"])

    def ground_platform(self) -> PlatformSpec | None:
        g = self.data["platforms"]["ground"]
        return None if g is None else self.platform(g)

    def link(self) -> LinkSpec:
        l = self.data["link"]
        if l["modcod"] == "table":
            table = load_modcod_table(self._resolve(l["modcod_path"]), float(l["margin_db"]))
        else:
            table = shannon_modcod_table(margin_db=float(l["margin_db"]))
        keys = ("r_isl", "p_isl", "bandwidth", "p_dl", "g_dl_db", "noise_dbw", "f_c")
        return LinkSpec(**{k: float(l[k]) for k in keys}, modcod=table)

    def turbulence(self, seed: int | None = None) -> TurbulenceModel:
        t = self.data["turbulence"]
        s = self.seed_for("turbulence") if seed is None else seed
        if t["kind"] == "empirical":
            return TurbulenceModel.from_csv(self._resolve(t["cdf_path"]), float(t["threshold"]), rng_seed=s)
        sigma = t["sigma_ln"]
        if sigma is None:
            sigma = sigma_for_acceptance(float(t["median"]), float(t["threshold"]), float(t["accept_probability"]))
        return TurbulenceModel("lognormal", float(t["median"]), float(sigma), float(t["threshold"]), rng_seed=s)

    def ground_stations(self) -> GroundStationSet:
        g = self.data["ground_stations"]
        return load_ground_stations(self._resolve(g["path"]), float(g["min_elevation_deg"]))

    def _resolve(self, path):
        if path is None:
            return None
        p = Path(path)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    # --- validation ------------------------------------------------------------

    def validate(self) -> list[str]:
        errors: list[str] = []
        d = self.data
        checks = [
            (d["workload"]["rho"] >= 1, "workload.rho: compression ratio must be >= 1"),
            (d["workload"]["work"] > 0, "workload.work: must be positive"),
            (int(d["frame"]["n_img"]) >= 1, "frame.n_img: must be >= 1"),
            (d["frame"]["img_bits"] > 0, "frame.img_bits: must be positive"),
            (d["pipeline"]["t_slot_s"] > 0, "pipeline.t_slot_s: must be positive"),
            (int(d["pipeline"]["replicas"]) >= 1, "pipeline.replicas: must be >= 1"),
            (d["pipeline"]["episode_s"] > 0, "pipeline.episode_s: must be positive"),
            (int(d["targets"]["count"]) >= 0, "targets.count: must be >= 0"),
            (d["observation"]["horizon_s"] > 0, "observation.horizon_s: must be positive"),
            (d["turbulence"]["threshold"] > 0, "turbulence.threshold: must be positive"),
            (int(d["turbulence"]["realizations"]) >= 1, "turbulence.realizations: must be >= 1"),
            (len(d["sweep"]["t_slots_s"]) > 0, "sweep.t_slots_s: grid is empty"),
            (all(t > 0 for t in d["sweep"]["t_slots_s"]), "sweep.t_slots_s: slot durations must be positive"),
        ]
        errors += [msg for ok, msg in checks if not ok]
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            errors.append("seed: must be a non-negative integer")
        s = d["solver"]
        if s["method"] not in SOLVERS:
            errors.append(f"solver.method: {s['method']!r} is not one of {', '.join(SOLVERS)}")
        if s["fallback"] not in ("ga", "beam", "none"):
            errors.append(f"solver.fallback: {s['fallback']!r} is not one of ga, beam, none")
        if s["method"] == "exact" and s["fallback"] == "none":
            largest = max([int(d["targets"]["count"]), *d["observation"]["instance_sizes"]])
            if largest > int(s["max_targets"]):
                errors.append(f"solver.max_targets: exact search without fallback is capped at "
                              f"{s['max_targets']} targets but the scenario asks for {largest}")
        known = set(PLATFORMS) | set(d["platforms"]["custom"])
        names = [d["platforms"]["edge"], *d["sweep"]["platforms"], *d["capacity"]["platforms"]]
        if d["platforms"]["ground"] is not None:
            names.append(d["platforms"]["ground"])
        for name in names:
            if name not in known:
                errors.append(f"platforms: unknown platform {name!r}")
        for name, spec in d["platforms"]["custom"].items():
            try:
                PlatformSpec(id=name, **spec)
            except (TypeError, ValueError) as exc:
                errors.append(f"platforms.custom.{name}: {exc}")
        l = d["link"]
        if l["modcod"] not in ("table", "shannon"):
            errors.append("link.modcod: must be 'table' or 'shannon'")
        elif l["modcod"] == "table" and l["modcod_path"] is not None and not self._resolve(l["modcod_path"]).exists():
            errors.append(f"link.modcod_path: MODCOD table not found: {self._resolve(l['modcod_path'])}")
        t = d["turbulence"]
        if not 0.0 < t["accept_probability"] < 1.0:
            errors.append("turbulence.accept_probability: must lie strictly between 0 and 1")
        if t["median"] <= 0 or (t["sigma_ln"] is not None and t["sigma_ln"] < 0):
            errors.append("turbulence: median must be positive and sigma_ln non-negative")
        if t["kind"] not in ("lognormal", "empirical"):
            errors.append("turbulence.kind: must be 'lognormal' or 'empirical'")
        elif t["kind"] == "empirical" and (t["cdf_path"] is None or not self._resolve(t["cdf_path"]).exists()):
            errors.append(f"turbulence.cdf_path: CDF file not found: {self._resolve(t['cdf_path'])}")
        g = d["ground_stations"]["path"]
        if g is not None and not self._resolve(g).exists():
            errors.append(f"ground_stations.path: station file not found: {self._resolve(g)}")
        for i, pos in enumerate(d["targets"]["positions"]):
            if not (isinstance(pos, (list, tuple)) and len(pos) == 2 and -90 <= pos[0] <= 90):
                errors.append(f"targets.positions[{i}]: expected [lat, lon] with |lat| <= 90")
        # the typed builders carry their own checks; report those too
        for label, build in (("constellation", self.constellation), ("agility", self.agility)):
            try:
                build()
            except (TypeError, ValueError) as exc:
                errors.append(f"{label}: {exc}")
        return errors

    # --- serialisation -----------------------------------------------------------

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def scenario_from_dict(data: dict, source=None) -> Scenario:
    """Fill defaults and validate; raises :class:`ScenarioError` listing every problem."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ScenarioError(["top level must be a mapping"], str(source or "scenario"))
    merged = _merge(DEFAULTS, data, "", errors)
    errors += _type_errors(DEFAULTS, merged)
    sc = Scenario(merged, Path(source) if source is not None else None)
    if not errors:
        try:
            errors += sc.validate()
        except (TypeError, KeyError) as exc:
            errors.append(f"malformed value: {exc}")
    if errors:
        raise ScenarioError(errors, str(source or "scenario"))
    return sc


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        raise ScenarioError([f"file not found: {p}"], str(p))
    text = p.read_text()
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"], str(p)) from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark is not None else ""
        raise ScenarioError([f"{where}{getattr(exc, 'problem', None) or exc}"], str(p)) from exc
    return scenario_from_dict(data or {}, p)


def save_scenario(scenario: Scenario, path) -> None:
    p = Path(path)
    data = scenario.to_dict()
    if p.suffix == ".json":
        p.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    else:
        p.write_text(yaml.safe_dump(data, sort_keys=True))


def bundled_scenario_path(name: str = "worldview3_baseline") -> Path:
    return Path(str(resources.files("leoedge").joinpath(f"data/scenarios/{name}.yaml")))


def load_bundled(name: str = "worldview3_baseline") -> Scenario:
    return load_scenario(bundled_scenario_path(name))
