"""Link models: fixed-rate optical ISLs, rate-adaptive RF feeder link, ring routing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import SPEED_OF_LIGHT, isl_slant_range


class NoRouteError(RuntimeError):
    """No path exists, typically because no edge satellite sees a ground station."""


class NoContactError(ValueError):
    """A downlink quantity was requested while the feeder-link rate is zero."""


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


def load_modcod_table(path=None, margin_db: float = 0.0) -> tuple[tuple[float, float], ...]:
    """``(spectral efficiency, minimum linear SNR)`` pairs sorted by efficiency.

    ``path`` is a CSV with columns ``r`` and ``esn0_db``; the bundled table is
    used when omitted. ``margin_db`` raises every threshold.
    """
    if path is None:
        text = resources.files("leoedge").joinpath("data/dvbs2x_modcods.csv").read_text()
    else:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"MODCOD table not found: {p}")
        text = p.read_text()
    rows = csv.DictReader(line for line in text.splitlines() if line and not line.startswith("#"))
    table = sorted((float(r["r"]), float(db_to_linear(float(r["esn0_db"]) + margin_db))) for r in rows)
    return tuple(table)


def shannon_modcod_table(efficiencies=None, margin_db: float = 0.0) -> tuple[tuple[float, float], ...]:
    """Thresholds at the capacity bound ``2**r - 1`` plus an implementation margin."""
    if efficiencies is None:
        efficiencies = np.round(np.arange(0.5, 6.01, 0.25), 4)
    return tuple((float(r), float((2.0**r - 1.0) * db_to_linear(margin_db))) for r in sorted(efficiencies))


@dataclass(frozen=True)
class LinkSpec:
    r_isl: float = 10e9  # b/s
    p_isl: float = 60.0  # W
    bandwidth: float = 500e6  # Hz
    p_dl: float = 10.0  # W
    g_dl_db: float = 66.33
    noise_dbw: float = -119.32
    f_c: float = 20e9  # Hz
    modcod: tuple[tuple[float, float], ...] = field(default_factory=load_modcod_table)

    def __post_init__(self):
        for name in ("r_isl", "p_isl", "bandwidth", "p_dl", "f_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        table = tuple((float(r), float(g)) for r, g in self.modcod)
        if not table:
            raise ValueError("MODCOD table is empty")
        if any(b[0] <= a[0] for a, b in zip(table, table[1:])):
            raise ValueError("MODCOD table must be strictly ascending in spectral efficiency")
        for r, g in table:
            if g < 2.0**r - 1.0 - 1e-12:
                raise ValueError(f"threshold for r={r} is below the capacity bound")
        object.__setattr__(self, "modcod", table)

    @property
    def max_efficiency(self) -> float:
        return self.modcod[-1][0]


def free_space_loss_db(d_m: float, f_c: float) -> float:
    return float(20.0 * math.log10(4.0 * math.pi * d_m * f_c / SPEED_OF_LIGHT))


def downlink_snr(link: LinkSpec, d_eg):
    """Linear SNR of the feeder link at slant distance ``d_eg`` (m)."""
    d = np.asarray(d_eg, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    g = db_to_linear(link.g_dl_db)
    sigma = math.sqrt(db_to_linear(link.noise_dbw))
    out = g * link.p_dl * (SPEED_OF_LIGHT / (4.0 * math.pi * d * link.f_c * sigma)) ** 2
    return float(out) if out.ndim == 0 else out


def spectral_efficiency(link: LinkSpec, snr) -> np.ndarray:
    r = np.array([m[0] for m in link.modcod])
    thr = np.array([m[1] for m in link.modcod])
    snr = np.asarray(snr, dtype=float)
    # thresholds need not be monotone in r, so take the best closing entry
    closes = snr[..., None] >= thr
    return np.where(closes, r, 0.0).max(axis=-1)


def downlink_rate(link: LinkSpec, snr):
    """Feeder-link rate (b/s): bandwidth times the best MODCOD that closes."""
    if np.any(np.asarray(snr) < 0):
        raise ValueError("SNR must be non-negative")
    out = link.bandwidth * spectral_efficiency(link, snr)
    return float(out) if np.ndim(out) == 0 else out


def rate_at_distance(link: LinkSpec, d_eg) -> float:
    return downlink_rate(link, downlink_snr(link, d_eg))


# --- ring routing ---------------------------------------------------------------------


@dataclass(frozen=True)
class Route:
    """Directed ISL hops along the ring plus an optional terminal downlink hop."""

    hops: tuple[tuple[int, int], ...]
    isl_range_m: float
    phase: str = "uncompressed"
    slot: int = 0
    downlink: tuple[int, str] | None = None  # (satellite, station)
    d_eg_m: float | None = None

    def __post_init__(self):
        for a, b in zip(self.hops, self.hops[1:]):
            if a[1] != b[0]:
                raise ValueError("route hops are not contiguous")
        if self.downlink is not None and self.hops and self.hops[-1][1] != self.downlink[0]:
            raise ValueError("downlink hop must start where the ISL path ends")

    @property
    def n_isl(self) -> int:
        return len(self.hops)

    @property
    def links(self) -> list:
        out = list(self.hops)
        if self.downlink is not None:
            out.append(self.downlink)
        return out


def ring_distance(n: int, a: int, b: int) -> int:
    d = (b - a) % n
    return min(d, n - d)


def ring_path(n: int, src: int, dst: int) -> list[int]:
    """Node sequence of a minimum-hop arc; ties go in the increasing-index direction."""
    if not (0 <= src < n and 0 <= dst < n):
        raise ValueError("node outside the ring")
    fwd = (dst - src) % n
    step = 1 if fwd <= n - fwd else -1
    hops = fwd if step == 1 else n - fwd
    return [(src + step * k) % n for k in range(hops + 1)]


def shortest_route(
    n: int,
    src: int,
    dst: int | None,
    *,
    isl_range_m: float,
    phase: str = "uncompressed",
    slot: int = 0,
    station: str | None = None,
    d_eg_m: float | None = None,
) -> Route:
    """Min-hop ring path from ``src`` to ``dst``; ``station`` appends a downlink hop.

    ``dst`` is the satellite in contact with the station. ``dst=None`` with a
    station requested means no satellite is in contact.
    """
    if dst is None:
        raise NoRouteError("no edge satellite is in contact with a ground station")
    nodes = ring_path(n, src, dst)
    hops = tuple(zip(nodes, nodes[1:]))
    down = (dst, station) if station is not None else None
    return Route(hops, isl_range_m, phase, slot, down, d_eg_m)


def isl_range_m(n: int, altitude_km: float) -> float:
    return isl_slant_range(n, altitude_km) * 1e3


def propagation_bound(n: int, altitude_km: float) -> float:
    """Worst-case intra-ring propagation delay ``floor(n/2)`` hops (s)."""
    return (n // 2) * isl_range_m(n, altitude_km) / SPEED_OF_LIGHT


# --- latency and energy ---------------------------------------------------------------------


def comm_latency_uncompressed(route: Route, bits: float, link: LinkSpec) -> float:
    """Store-and-forward time of raw data over the route's ISL hops."""
    if bits <= 0:
        raise ValueError("bits must be positive")
    return route.n_isl * (bits / link.r_isl + route.isl_range_m / SPEED_OF_LIGHT)


def comm_latency_compressed(route: Route, bits: float, rho: float, link: LinkSpec, r_k: float) -> float:
    """ISL hops and the feeder link for data reduced by ``rho``."""
    if rho < 1:
        raise ValueError("compression ratio must be >= 1")
    if r_k <= 0:
        raise NoContactError("feeder-link rate is zero")
    d = bits / rho
    t = route.n_isl * (d / link.r_isl + route.isl_range_m / SPEED_OF_LIGHT)
    d_eg = route.d_eg_m if route.d_eg_m is not None else 0.0
    return t + d / r_k + d_eg / SPEED_OF_LIGHT


def isl_tx_energy(bits: float, link: LinkSpec) -> float:
    if bits < 0:
        raise ValueError("bits must be non-negative")
    return link.p_isl * bits / link.r_isl


def dl_tx_energy(bits: float, r_k: float, link: LinkSpec) -> float:
    if bits < 0:
        raise ValueError("bits must be non-negative")
    if r_k <= 0:
        raise NoContactError("feeder-link rate is zero")
    return link.p_dl * bits / r_k


def route_energy(route: Route, bits: float, link: LinkSpec, r_k: float | None = None) -> float:
    """ISL energy on every hop plus the downlink hop when present."""
    e = route.n_isl * isl_tx_energy(bits, link)
    if route.downlink is not None:
        if r_k is None:
            raise ValueError("a route ending in a downlink needs the feeder-link rate")
        e += dl_tx_energy(bits, r_k, link)
    return e
