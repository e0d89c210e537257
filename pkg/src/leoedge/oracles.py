"""Brute-force and closed-form reference computations.

Everything here is written from the model definitions alone and imports
nothing from the rest of the package: the oracles read plain attributes of
the objects they are handed and redo every calculation on their own numeric
path. They are slow by design.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

R_EARTH_KM = 6371.0
GM = 3.986004418e14
OMEGA_EARTH = 7.2921159e-5
C_LIGHT = 299_792_458.0


class OracleRefusal(ValueError):
    """The case is larger than the oracle is willing to enumerate."""


# --- reports ---------------------------------------------------------------------------------------


@dataclass
class OracleReport:
    case_id: str
    oracle_value: float
    system_value: float
    tolerance: float

    @property
    def relative_error(self) -> float:
        a, b = self.oracle_value, self.system_value
        if a == b:
            return 0.0
        if not (math.isfinite(a) and math.isfinite(b)):
            return math.inf
        return abs(a - b) / max(abs(a), 1e-300)

    @property
    def verdict(self) -> str:
        return "pass" if self.relative_error <= self.tolerance else "fail"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["relative_error"] = self.relative_error
        d["verdict"] = self.verdict
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def reports_json(reports) -> str:
    items = [r.to_dict() for r in reports]
    passed = sum(r["verdict"] == "pass" for r in items)
    return json.dumps({"cases": items, "passed": passed, "total": len(items)}, indent=1, sort_keys=True)


# --- observation scheduling by enumeration ------------------------------------------------------------------


def slew_seconds(angle_deg: float) -> float:
    """Piecewise-linear slew time law, restated independently."""
    a = abs(angle_deg)
    table = ((10.0, None, 11.66), (30.0, 5.0, 1.5), (60.0, 10.0, 2.0), (90.0, 16.0, 2.5))
    for upper, base, div in table:
        if a <= upper:
            return div if base is None else base + a / div
    return 22.0 + a / 3.0


def enumerate_aeossp(instance, *, max_targets: int = 8, max_windows_per_target: int = 6) -> float:
    """Optimal total profit by exhaustive search.

    Per satellite, every target subset is paired with its best time-ordered
    chain (a Held-Karp style table over ``(subset, last window)`` holding
    profit/energy trade-offs). Satellites are then combined over disjoint
    target subsets.
    """
    otws = list(instance.otws)
    targets = sorted({o.target_id for o in otws})
    if len(targets) > max_targets:
        raise OracleRefusal(f"{len(targets)} targets > {max_targets}")
    for t in targets:
        if sum(o.target_id == t for o in otws) > max_windows_per_target:
            raise OracleRefusal(f"target {t} has more than {max_windows_per_target} windows")
    if not otws:
        return 0.0
    p_man, e_max = instance.agility.p_man, instance.agility.e_max
    bit = {t: 1 << k for k, t in enumerate(targets)}
    full = (1 << len(targets)) - 1
    per_sat = []
    for sat in sorted({o.sat_id for o in otws}):
        ws = sorted((o for o in otws if o.sat_id == sat), key=lambda o: o.timestamp)
        # table[(mask, j)] -> list of (profit, energy) trade-offs of chains ending at window j
        table: dict[tuple[int, int], list[tuple[float, float]]] = {}
        for j, w in enumerate(ws):
            entries = [(w.profit, 0.0)]
            for (mask, i), labels in list(table.items()):
                if i >= j or mask & bit[w.target_id]:
                    continue
                prev = ws[i]
                gap = slew_seconds(abs(prev.roll - w.roll) + abs(prev.pitch - w.pitch) + abs(prev.yaw - w.yaw))
                if w.timestamp + 1e-9 < prev.timestamp + gap:
                    continue
                for prof, en in labels:
                    e2 = en + p_man * gap
                    if e2 <= e_max + 1e-9:
                        table.setdefault((mask | bit[w.target_id], j), []).append((prof + w.profit, e2))
            table.setdefault((bit[w.target_id], j), []).extend(entries)
            for key in [k for k in table if k[1] == j]:
                table[key] = _tradeoffs(table[key])
        best = [0.0] + [-math.inf] * full
        for (mask, _), labels in table.items():
            best[mask] = max(best[mask], max(p for p, _ in labels))
        per_sat.append(best)
    # combine satellites over disjoint subsets
    combined = per_sat[0]
    for best in per_sat[1:]:
        nxt = [-math.inf] * (full + 1)
        for a in range(full + 1):
            if combined[a] == -math.inf:
                continue
            rest = full & ~a
            sub = rest
            while True:
                if best[sub] > -math.inf:
                    nxt[a | sub] = max(nxt[a | sub], combined[a] + best[sub])
                if sub == 0:
                    break
                sub = (sub - 1) & rest
        combined = nxt
    return float(max(combined))


def _tradeoffs(labels):
    labels = sorted(set(labels), key=lambda pe: (-pe[0], pe[1]))
    out, lowest = [], math.inf
    for p, e in labels:
        if e < lowest - 1e-12:
            out.append((p, e))
            lowest = e
    return out


# --- processing allocation by grid search -----------------------------------------------------------


def _hops(n: int, a: int, b: int) -> int:
    d = abs(a - b) % n
    return min(d, n - d)


def _walk(n: int, a: int, b: int) -> list[tuple[int, int]]:
    fwd = (b - a) % n
    step = 1 if fwd <= n - fwd else -1
    nodes = [a]
    while nodes[-1] != b:
        nodes.append((nodes[-1] + step) % n)
    return [(min(u, v), max(u, v)) for u, v in zip(nodes, nodes[1:])]


def _grid_points(k: int, step: float):
    m = int(round(1.0 / step))
    for combo in itertools.product(range(m + 1), repeat=k - 1):
        s = sum(combo)
        if s <= m:
            yield tuple(c / m for c in combo) + ((m - s) / m,)


def psch_energy(instance, x) -> tuple[float, bool]:
    """Energy of shares ``x`` with every busy processor clocked to fill the slot, and feasibility."""
    T = instance.t_slot
    link, wl = instance.link, instance.workload
    D = instance.frame_bits
    n_img = D / instance.img_bits
    n_ring = instance.n_ring
    j_per_bit = link.p_isl / link.r_isl
    procs = [(node, p, False) for node, p in zip(instance.edge_nodes, instance.edge)]
    if instance.ground is not None:
        procs.append((None, instance.ground, True))
    energy = 0.0
    ok = True
    downlink_s = 0.0
    worst_gather = 0.0
    link_bits: dict[tuple[int, int], float] = {}
    for share, (node, p, on_ground) in zip(x, procs):
        if share <= 0:
            continue
        raw = share * D
        energy += instance.entry_hops * j_per_bit * raw
        images = share * n_img
        a = p.mu_c * wl.work / (p.n_cores * p.flops_per_cycle)
        room = T - p.mu_sync * images
        if room <= 0:
            return math.inf, False
        f = a * images / room
        if f > p.f_max * (1 + 1e-12):
            ok = False
        per_image = a / f + p.mu_sync
        energy += images * per_image * p.p_max * (f / p.f_max) ** 3
        if on_ground:
            if instance.raw_dl_sat is None or instance.raw_rate <= 0:
                return math.inf, False
            path = _walk(n_ring, instance.source, instance.raw_dl_sat)
            energy += len(path) * j_per_bit * raw + link.p_dl * raw / instance.raw_rate
            downlink_s += raw / instance.raw_rate
            for e in path:
                link_bits[e] = link_bits.get(e, 0.0) + raw
        else:
            if instance.gather_dl_sat is None or instance.gather_rate <= 0:
                return math.inf, False
            out_bits = raw / wl.rho
            there = _walk(n_ring, instance.source, node)
            back = _walk(n_ring, node, instance.gather_dl_sat)
            energy += len(there) * j_per_bit * raw + len(back) * j_per_bit * out_bits
            energy += link.p_dl * out_bits / instance.gather_rate
            downlink_s += out_bits / instance.gather_rate
            worst_gather = max(worst_gather, len(back) * (out_bits / link.r_isl + instance.isl_range_m / C_LIGHT))
            for e in there:
                link_bits[e] = link_bits.get(e, 0.0) + raw
            for e in back:
                link_bits[e] = link_bits.get(e, 0.0) + out_bits
    if downlink_s > (T - worst_gather) * (1 + 1e-9):
        ok = False
    if any(b > T * link.r_isl * (1 + 1e-9) for b in link_bits.values()):
        ok = False
    return energy, ok


def grid_search_psch(instance, step: float = 0.01, *, max_processors: int = 3) -> tuple[float, tuple]:
    """Lowest feasible energy over the share simplex sampled at ``step``; ``inf`` if none."""
    k = len(instance.edge) + (instance.ground is not None)
    if k > max_processors:
        raise OracleRefusal(f"{k} processors > {max_processors}")
    best, arg = math.inf, ()
    for x in _grid_points(k, step):
        e, ok = psch_energy(instance, x)
        if ok and e < best:
            best, arg = e, x
    return best, arg


# --- runtime sums ----------------------------------------------------------------------------------------


def mc_gamma_sum(alpha: float, theta: float, n_img: int, replicas: int = 10_000, *, seed: int = 0,
                 chunk: int = 2_000) -> dict:
    """Empirical mean and 5th/95th percentiles of a sum of ``n_img`` Gamma draws."""
    if replicas < 10_000:
        raise OracleRefusal("at least 1e4 replicas are required")
    rng = np.random.default_rng(seed)
    sums = np.empty(replicas)
    for lo in range(0, replicas, chunk):
        hi = min(lo + chunk, replicas)
        sums[lo:hi] = rng.gamma(alpha, theta, size=(hi - lo, n_img)).sum(axis=1)
    return {"mean": float(sums.mean()), "q05": float(np.quantile(sums, 0.05)),
            "q95": float(np.quantile(sums, 0.95)), "replicas": replicas}


# --- visibility by fine sampling -----------------------------------------------------------------------------


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def fine_sweep_visibility(element, lat: float, lon: float, horizon: float, max_off_nadir: float,
                          *, step: float = 0.1, earth_radius: float = R_EARTH_KM) -> list[tuple[float, float]]:
    """Visibility intervals of one ground point from one circular orbit, sampled every ``step`` s."""
    r = earth_radius + element.altitude
    mean_motion = math.sqrt(GM / (r * 1e3) ** 3)
    frame = _rz(math.radians(element.raan)) @ _rx(math.radians(element.inclination))
    t = np.arange(0.0, horizon + 1e-9, step)
    u = math.radians(element.phase) + mean_motion * t
    inertial = (frame @ np.vstack([np.cos(u), np.sin(u), np.zeros_like(u)])).T * r
    rot = OMEGA_EARTH * t
    x = np.cos(rot) * inertial[:, 0] + np.sin(rot) * inertial[:, 1]
    y = -np.sin(rot) * inertial[:, 0] + np.cos(rot) * inertial[:, 1]
    sat = np.column_stack([x, y, inertial[:, 2]])
    phi, lam = math.radians(lat), math.radians(lon)
    g = earth_radius * np.array([math.cos(phi) * math.cos(lam), math.cos(phi) * math.sin(lam), math.sin(phi)])
    # off-nadir from the triangle (Earth centre, satellite, target) via the law of cosines
    d = np.linalg.norm(sat - g, axis=1)
    cos_nadir = (r**2 + d**2 - earth_radius**2) / (2 * r * d)
    nadir = np.degrees(np.arccos(np.clip(cos_nadir, -1, 1)))
    above = (sat - g) @ g > 0
    vis = (nadir <= max_off_nadir) & above
    out, start = [], None
    for ti, v in zip(t, vis):
        if v and start is None:
            start = ti
        elif not v and start is not None:
            out.append((float(start), float(ti - step)))
            start = None
    if start is not None:
        out.append((float(start), float(t[-1])))
    return out


# --- link budget in decibels -------------------------------------------------------------------------------


def bundled_modcods() -> list[tuple[float, float]]:
    text = resources.files("leoedge").joinpath("data/dvbs2x_modcods.csv").read_text()
    rows = csv.DictReader(line for line in text.splitlines() if line and not line.startswith("#"))
    return [(float(r["r"]), float(r["esn0_db"])) for r in rows]


def db_link_budget(distance_m: float, *, p_tx_w: float = 10.0, gain_db: float = 66.33, noise_dbw: float = -119.32,
                   f_c: float = 20e9, bandwidth: float = 500e6, modcods=None, margin_db: float = 0.0) -> dict:
    """Feeder-link SNR and rate computed entirely in dB."""
    fspl = 20 * math.log10(distance_m) + 20 * math.log10(f_c) + 20 * math.log10(4 * math.pi / C_LIGHT)
    snr_db = 10 * math.log10(p_tx_w) + gain_db - fspl - noise_dbw
    table = modcods if modcods is not None else bundled_modcods()
    usable = [r for r, need in table if snr_db >= need + margin_db]
    r = max(usable) if usable else 0.0
    return {"fspl_db": fspl, "snr_db": snr_db, "efficiency": r, "rate_bps": bandwidth * r}
