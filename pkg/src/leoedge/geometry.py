"""Circular-orbit constellation geometry.

Two-body circular Keplerian orbits with a uniformly rotating spherical Earth.
Positions are returned in an Earth-fixed frame (km). The Earth-fixed and
inertial frames coincide at t = 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0
MU_EARTH = 3.986004418e14  # m^3/s^2
EARTH_ROTATION_RATE = 7.2921159e-5  # rad/s
SPEED_OF_LIGHT = 299_792_458.0  # m/s


class InvalidTopologyError(ValueError):
    """Raised for constellation layouts the ring model cannot represent."""


@dataclass(frozen=True)
class OrbitalElements:
    """Circular orbit: altitude (km), inclination, RAAN and argument of latitude at t=0 (deg)."""

    altitude: float
    inclination: float
    raan: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.altitude <= 0:
            raise ValueError(f"altitude must be positive, got {self.altitude}")
        if not 0.0 <= self.inclination <= 180.0:
            raise ValueError(f"inclination must lie in [0, 180] deg, got {self.inclination}")


@dataclass(frozen=True)
class ConstellationSpec:
    """Edge ring plus observation satellites.

    The edge layer is ``n_sats_edge`` satellites spread evenly over
    ``n_planes`` planes. When ``obs_sats`` is empty and ``cohosted`` is set,
    edge satellite 0 doubles as the observation satellite.
    """

    n_sats_edge: int = 23
    altitude_e: float = 617.0
    inclination_e: float = 98.6
    n_planes: int = 1
    raan_e: float = 0.0
    phase_e: float = 0.0
    obs_sats: tuple[OrbitalElements, ...] = ()
    cohosted: bool = True
    earth_radius: float = EARTH_RADIUS_KM

    def __post_init__(self):
        if self.n_sats_edge < 1:
            raise ValueError("n_sats_edge must be >= 1")
        if self.altitude_e <= 0:
            raise ValueError("altitude_e must be positive")
        if not 0.0 <= self.inclination_e <= 180.0:
            raise ValueError("inclination_e must lie in [0, 180] deg")
        if self.n_planes < 1 or self.n_sats_edge % self.n_planes:
            raise InvalidTopologyError("n_sats_edge must be a multiple of n_planes")
        object.__setattr__(self, "obs_sats", tuple(self.obs_sats))

    def edge_elements(self) -> tuple[OrbitalElements, ...]:
        per_plane = self.n_sats_edge // self.n_planes
        out = []
        for p in range(self.n_planes):
            raan = self.raan_e + 360.0 * p / self.n_planes
            for j in range(per_plane):
                out.append(
                    OrbitalElements(
                        self.altitude_e,
                        self.inclination_e,
                        raan % 360.0,
                        (self.phase_e + 360.0 * j / per_plane) % 360.0,
                    )
                )
        return tuple(out)

    def observation_elements(self) -> tuple[OrbitalElements, ...]:
        if self.obs_sats:
            return self.obs_sats
        if self.cohosted:
            return self.edge_elements()[:1]
        return ()

    def elements(self, layer: str = "edge") -> tuple[OrbitalElements, ...]:
        if layer == "edge":
            return self.edge_elements()
        if layer == "obs":
            return self.observation_elements()
        raise ValueError(f"unknown layer {layer!r}")


def walker_star(
    n_sats: int, altitude: float, inclination: float, raan0: float = 0.0, phase0: float = 0.0
) -> tuple[OrbitalElements, ...]:
    """One satellite per plane, planes spread over 180 deg of RAAN."""
    return tuple(
        OrbitalElements(
            altitude,
            inclination,
            (raan0 + 180.0 * k / n_sats) % 360.0,
            (phase0 + 360.0 * k / (2 * n_sats)) % 360.0,
        )
        for k in range(n_sats)
    )


def orbital_period(altitude_km: float, earth_radius: float = EARTH_RADIUS_KM) -> float:
    a = (earth_radius + altitude_km) * 1e3
    return 2.0 * math.pi * math.sqrt(a**3 / MU_EARTH)


def _element_arrays(elements: Sequence[OrbitalElements], earth_radius: float):
    r = np.array([earth_radius + e.altitude for e in elements])
    inc = np.radians([e.inclination for e in elements])
    raan = np.radians([e.raan for e in elements])
    u0 = np.radians([e.phase for e in elements])
    n = np.sqrt(MU_EARTH / (r * 1e3) ** 3)
    return r, inc, raan, u0, n


def state_ecef(
    elements: Sequence[OrbitalElements], t, earth_radius: float = EARTH_RADIUS_KM
) -> tuple[np.ndarray, np.ndarray]:
    """Earth-fixed position (km) and velocity (km/s).

    ``t`` may be a scalar or 1-D array; output shape is ``(len(t), n_sats, 3)``
    for arrays and ``(n_sats, 3)`` for scalars.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r, inc, raan, u0, n = _element_arrays(elements, earth_radius)
    u = u0[None, :] + n[None, :] * t[:, None]
    cu, su = np.cos(u), np.sin(u)
    co, so = np.cos(raan)[None, :], np.sin(raan)[None, :]
    ci, si = np.cos(inc)[None, :], np.sin(inc)[None, :]
    pos = np.stack(
        [
            cu * co - su * ci * so,
            cu * so + su * ci * co,
            su * si,
        ],
        axis=-1,
    ) * r[None, :, None]
    vel = np.stack(
        [
            -su * co - cu * ci * so,
            -su * so + cu * ci * co,
            cu * si,
        ],
        axis=-1,
    ) * (r * n)[None, :, None]
    theta = EARTH_ROTATION_RATE * t
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    px = c * pos[..., 0] + s * pos[..., 1]
    py = -s * pos[..., 0] + c * pos[..., 1]
    vx = c * vel[..., 0] + s * vel[..., 1]
    vy = -s * vel[..., 0] + c * vel[..., 1]
    # remove the frame rotation: v_ecef = R v_eci - w x r_ecef
    vx = vx + EARTH_ROTATION_RATE * py
    vy = vy - EARTH_ROTATION_RATE * px
    pos_e = np.stack([px, py, pos[..., 2]], axis=-1)
    vel_e = np.stack([vx, vy, vel[..., 2]], axis=-1)
    if scalar:
        return pos_e[0], vel_e[0]
    return pos_e, vel_e


def propagate(spec: ConstellationSpec, t: float, layer: str = "edge") -> np.ndarray:
    """Earth-fixed satellite positions (km), shape ``(n_sats, 3)``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    pos, _ = state_ecef(spec.elements(layer), t, spec.earth_radius)
    return pos


def isl_slant_range(n: int, altitude_e: float, earth_radius: float = EARTH_RADIUS_KM) -> float:
    """Chord between neighbouring satellites of an evenly phased ring (km)."""
    if n < 2:
        raise InvalidTopologyError(f"a ring needs at least 2 satellites, got {n}")
    return 2.0 * (earth_radius + altitude_e) * math.sin(math.pi / n)


def propagation_delay(n: int, altitude_e: float, earth_radius: float = EARTH_RADIUS_KM) -> float:
    """One-hop ISL propagation time (s)."""
    return isl_slant_range(n, altitude_e, earth_radius) * 1e3 / SPEED_OF_LIGHT


# --- ground points -----------------------------------------------------------


@dataclass(frozen=True)
class Target:
    id: int
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")


@dataclass(frozen=True)
class GroundStation:
    id: str
    lat: float
    lon: float
    min_elevation: float = 5.0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")


@dataclass(frozen=True)
class GroundStationSet:
    stations: tuple[GroundStation, ...]

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        if not self.stations:
            raise ValueError("a ground-station set needs at least one station")

    def __len__(self):
        return len(self.stations)

    def __iter__(self):
        return iter(self.stations)


def ground_ecef(lat, lon, earth_radius: float = EARTH_RADIUS_KM) -> np.ndarray:
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    return earth_radius * np.stack(
        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1
    )


def subsatellite_point(pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Geocentric latitude/longitude (deg) below Earth-fixed positions."""
    pos = np.asarray(pos, dtype=float)
    lat = np.degrees(np.arcsin(pos[..., 2] / np.linalg.norm(pos, axis=-1)))
    lon = np.degrees(np.arctan2(pos[..., 1], pos[..., 0]))
    return lat, lon


def load_ground_stations(path=None, min_elevation: float = 5.0) -> GroundStationSet:
    """Read ``id,lat,lon[,min_elevation]`` rows; defaults to the bundled KSAT list."""
    if path is None:
        text = resources.files("leoedge").joinpath("data/ksat_stations.csv").read_text()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    rows = csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))
    stations = []
    for row in rows:
        mask = row.get("min_elevation") or min_elevation
        stations.append(
            GroundStation(row["id"], float(row["lat"]), float(row["lon"]), float(mask))
        )
    return GroundStationSet(tuple(stations))


# --- visibility --------------------------------------------------------------


@dataclass(frozen=True)
class VisibilityWindow:
    sat_id: int
    target_id: int
    orbit_index: int
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"window start {self.start} must precede end {self.end}")


def off_nadir_angle(sat_pos: np.ndarray, tgt_pos: np.ndarray) -> np.ndarray:
    """Angle (deg) between the nadir direction and the line of sight."""
    los = tgt_pos - sat_pos
    cosang = -np.sum(sat_pos * los, axis=-1) / (
        np.linalg.norm(sat_pos, axis=-1) * np.linalg.norm(los, axis=-1)
    )
    return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))


def elevation_angle(sat_pos: np.ndarray, ground_pos: np.ndarray) -> np.ndarray:
    """Elevation (deg) of the satellite seen from a ground point on the sphere."""
    los = sat_pos - ground_pos
    up = ground_pos / np.linalg.norm(ground_pos, axis=-1, keepdims=True)
    sin_el = np.sum(los * up, axis=-1) / np.linalg.norm(los, axis=-1)
    return np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))


def _visible(sat_pos, tgt_pos, max_off_nadir):
    return (off_nadir_angle(sat_pos, tgt_pos) <= max_off_nadir) & (
        elevation_angle(sat_pos, tgt_pos) > 0.0
    )


def _refine_edge(element, tgt, lo, hi, lo_visible, max_off_nadir, earth_radius, tol):
    # bisection on a visibility transition bracketed by [lo, hi]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        pos, _ = state_ecef([element], mid, earth_radius)
        if bool(_visible(pos[0], tgt, max_off_nadir)) == lo_visible:
            lo = mid
        else:
            hi = mid
    return lo if lo_visible else hi


def compute_visibility_windows(
    spec: ConstellationSpec,
    targets: Iterable[Target],
    horizon: float,
    max_off_nadir: float = 45.0,
    *,
    step: float = 1.0,
    t0: float = 0.0,
    layer: str = "obs",
    refine_tol: float = 0.1,
) -> list[VisibilityWindow]:
    """Intervals during which each satellite can point at each target.

    Visibility is sampled every ``step`` seconds and window edges are refined
    by bisection to ``refine_tol``. Windows are clipped to
    ``[t0, t0 + horizon]`` and returned sorted by start time.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    targets = list(targets)
    if not targets:
        return []
    elements = spec.elements(layer)
    t_end = t0 + horizon
    times = np.arange(t0, t_end + 1e-9, step)
    if times[-1] < t_end:
        times = np.append(times, t_end)
    tgt_pos = ground_ecef([t.lat for t in targets], [t.lon for t in targets], spec.earth_radius)
    windows = []
    for sat_id, element in enumerate(elements):
        pos, _ = state_ecef([element], times, spec.earth_radius)
        sat_pos = pos[:, 0, :]
        vis = _visible(sat_pos[:, None, :], tgt_pos[None, :, :], max_off_nadir)
        for j, tgt in enumerate(targets):
            col = vis[:, j]
            if not col.any():
                continue
            edges = np.flatnonzero(np.diff(col.astype(np.int8)))
            starts = [0] if col[0] else []
            ends = []
            for e in edges:
                if col[e + 1]:
                    starts.append(e + 1)
                else:
                    ends.append(e)
            if len(ends) < len(starts):
                ends.append(len(times) - 1)
            orbit = 0
            for s_idx, e_idx in zip(starts, ends):
                if s_idx == 0:
                    start = float(times[0])
                else:
                    start = _refine_edge(
                        element, tgt_pos[j], times[s_idx - 1], times[s_idx], False,
                        max_off_nadir, spec.earth_radius, refine_tol,
                    )
                if e_idx == len(times) - 1:
                    end = float(times[-1])
                else:
                    end = _refine_edge(
                        element, tgt_pos[j], times[e_idx], times[e_idx + 1], True,
                        max_off_nadir, spec.earth_radius, refine_tol,
                    )
                if end > start:
                    windows.append(VisibilityWindow(sat_id, tgt.id, orbit, start, end))
                    orbit += 1
    windows.sort(key=lambda w: (w.start, w.sat_id, w.target_id))
    return windows


# --- ground contact ----------------------------------------------------------


@dataclass(frozen=True)
class Contact:
    station_id: str
    sat_id: int | None
    distance_km: float
    elevation_deg: float

    @property
    def in_contact(self) -> bool:
        return self.sat_id is not None


def gs_contact(
    spec: ConstellationSpec, stations: GroundStationSet, t: float
) -> list[Contact]:
    """Highest-elevation edge satellite per station at time ``t``.

    Stations whose best satellite sits below their mask report
    ``sat_id=None`` with the geometry of that best satellite.
    """
    sat_pos = propagate(spec, t, "edge")
    st = list(stations)
    gpos = ground_ecef([s.lat for s in st], [s.lon for s in st], spec.earth_radius)
    el = elevation_angle(sat_pos[None, :, :], gpos[:, None, :])
    dist = np.linalg.norm(sat_pos[None, :, :] - gpos[:, None, :], axis=-1)
    out = []
    for i, station in enumerate(st):
        best = int(np.argmax(el[i]))
        visible = el[i, best] >= station.min_elevation
        out.append(
            Contact(
                station.id,
                best if visible else None,
                float(dist[i, best]),
                float(el[i, best]),
            )
        )
    return out


def slant_range_at_elevation(
    altitude: float, elevation_deg: float, earth_radius: float = EARTH_RADIUS_KM
) -> float:
    s = math.sin(math.radians(elevation_deg))
    return math.sqrt(earth_radius**2 * s**2 + 2 * earth_radius * altitude + altitude**2) - earth_radius * s


@dataclass(frozen=True)
class TrackTargetGenerator:
    """Random targets scattered around a satellite ground track.

    Along-track positions are uniform over ``[t0, t0 + horizon]``; cross-track
    offsets are uniform within ``max_cross_track_km``.
    """

    horizon: float
    max_cross_track_km: float = 500.0
    t0: float = 0.0
    sat_index: int = 0
    layer: str = "obs"
    rng_seed: int | None = field(default=None, compare=False)

    def sample(self, spec: ConstellationSpec, n: int, rng: np.random.Generator) -> list[Target]:
        element = spec.elements(self.layer)[self.sat_index]
        times = rng.uniform(self.t0, self.t0 + self.horizon, size=n)
        offsets = rng.uniform(-self.max_cross_track_km, self.max_cross_track_km, size=n)
        pos, vel = state_ecef([element], times, spec.earth_radius)
        pos, vel = pos[:, 0, :], vel[:, 0, :]
        rhat = pos / np.linalg.norm(pos, axis=1, keepdims=True)
        cross = np.cross(rhat, vel)
        cross /= np.linalg.norm(cross, axis=1, keepdims=True)
        ang = offsets / spec.earth_radius
        ground = spec.earth_radius * (np.cos(ang)[:, None] * rhat + np.sin(ang)[:, None] * cross)
        lat, lon = subsatellite_point(ground)
        return [Target(i, float(la), float(lo)) for i, (la, lo) in enumerate(zip(lat, lon))]


def box_targets(
    n: int, lat_range: tuple[float, float], lon_range: tuple[float, float], rng: np.random.Generator
) -> list[Target]:
    """Targets uniform in area over a latitude/longitude box."""
    s0, s1 = np.sin(np.radians(lat_range))
    lat = np.degrees(np.arcsin(rng.uniform(s0, s1, size=n)))
    lon = rng.uniform(lon_range[0], lon_range[1], size=n)
    return [Target(i, float(a), float(b)) for i, (a, b) in enumerate(zip(lat, lon))]


def clustered_track_targets(
    spec: ConstellationSpec,
    n_targets: int,
    n_clusters: int,
    horizon: float,
    rng: np.random.Generator,
    *,
    cluster_radius_km: float = 60.0,
    max_cross_track_km: float = 300.0,
    t0: float = 0.0,
    sat_index: int = 0,
    layer: str = "obs",
) -> list[Target]:
    """Targets grouped in hotspots spaced evenly in time along a ground track.

    Hotspot centres sit under the track at evenly spaced instants with a
    random cross-track offset; targets are uniform in a disc around them.
    """
    element = spec.elements(layer)[sat_index]
    slots = t0 + horizon * (np.arange(n_clusters) + 0.5) / n_clusters
    pos, vel = state_ecef([element], slots, spec.earth_radius)
    pos, vel = pos[:, 0, :], vel[:, 0, :]
    rhat = pos / np.linalg.norm(pos, axis=1, keepdims=True)
    cross = np.cross(rhat, vel)
    cross /= np.linalg.norm(cross, axis=1, keepdims=True)
    along = np.cross(cross, rhat)
    offset = rng.uniform(-max_cross_track_km, max_cross_track_km, size=n_clusters)
    members = np.array_split(np.arange(n_targets), n_clusters)
    out = []
    for c, idx in enumerate(members):
        r = cluster_radius_km * np.sqrt(rng.uniform(size=len(idx)))
        phi = rng.uniform(0, 2 * np.pi, size=len(idx))
        dx = (offset[c] + r * np.cos(phi)) / spec.earth_radius
        dy = (r * np.sin(phi)) / spec.earth_radius
        v = rhat[c] + dx[:, None] * cross[c] + dy[:, None] * along[c]
        lat, lon = subsatellite_point(v)
        out.extend(Target(int(i), float(a), float(b)) for i, a, b in zip(idx, lat, lon))
    return out
