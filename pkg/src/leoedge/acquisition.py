"""Observation opportunities, attitude requirements and imaging quality.

Visibility windows are cut into candidate observation instants every
``prc`` seconds. Each candidate carries the roll/pitch/yaw that points the
boresight at the target, the resulting ground sampling distance and its
profit (nadir GSD divided by achieved GSD).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import (
    ConstellationSpec,
    Target,
    VisibilityWindow,
    ground_ecef,
    state_ecef,
)


class InvalidGeometryError(ValueError):
    """Raised when an imaging geometry lies outside the model's domain."""


@dataclass(frozen=True)
class AgilitySpec:
    """Attitude limits (deg), maneuver power (W), energy budget (J), step (s), nadir GSD (m)."""

    theta_max: float = 45.0
    phi_max: float = 45.0
    psi_max: float = 90.0
    p_man: float = 2.0
    e_max: float = 1000.0
    prc: float = 10.0
    gsd_nadir: float = 0.31

    def __post_init__(self):
        for name in ("theta_max", "phi_max", "psi_max", "p_man", "e_max", "prc", "gsd_nadir"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class FrameSpec:
    """Frame composition. ``frame_bits`` defaults to ``n_img * img_bits``."""

    n_img: int = 2601
    img_bits: float = 788_513.0
    frame_bits: float | None = None
    ship_bits: float = 6_913.0
    width: int = 600
    height: int = 600

    def __post_init__(self):
        if self.n_img < 1 or self.img_bits <= 0 or self.width < 1 or self.height < 1:
            raise ValueError("frame dimensions must be positive")
        if self.frame_bits is None:
            object.__setattr__(self, "frame_bits", self.n_img * self.img_bits)
        elif abs(self.frame_bits - self.n_img * self.img_bits) > 0.01 * self.n_img * self.img_bits:
            raise ValueError("frame_bits must equal n_img * img_bits up to rounding")


@dataclass(frozen=True)
class ObservationWindow:
    sat_id: int
    target_id: int
    orbit: int
    window_index: int
    timestamp: float
    roll: float
    pitch: float
    yaw: float
    profit: float
    gsd: float
    cn2: float | None = field(default=None, compare=False)

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.sat_id, self.target_id, self.orbit, self.window_index)

    def with_cn2(self, cn2: float) -> "ObservationWindow":
        return replace(self, cn2=cn2)


# --- attitude transitions ------------------------------------------------------


def transition_time_for_angle(alpha: float) -> float:
    """Slew-plus-settle time (s) for a total attitude change of ``alpha`` degrees."""
    alpha = abs(alpha)
    if alpha <= 10.0:
        return 11.66
    if alpha <= 30.0:
        return 5.0 + alpha / 1.5
    if alpha <= 60.0:
        return 10.0 + alpha / 2.0
    if alpha <= 90.0:
        return 16.0 + alpha / 2.5
    return 22.0 + alpha / 3.0


def transition_time_array(alpha: np.ndarray) -> np.ndarray:
    """Vectorised :func:`transition_time_for_angle`."""
    a = np.abs(np.asarray(alpha, dtype=float))
    return np.select(
        [a <= 10.0, a <= 30.0, a <= 60.0, a <= 90.0],
        [np.full_like(a, 11.66), 5.0 + a / 1.5, 10.0 + a / 2.0, 16.0 + a / 2.5],
        default=22.0 + a / 3.0,
    )


def attitude_change(a: ObservationWindow, b: ObservationWindow) -> float:
    return abs(a.roll - b.roll) + abs(a.pitch - b.pitch) + abs(a.yaw - b.yaw)


def transition_time(a: ObservationWindow, b: ObservationWindow) -> float:
    return transition_time_for_angle(attitude_change(a, b))


def maneuver_energy(duration: float, agility: AgilitySpec) -> float:
    if duration < 0:
        raise ValueError("maneuver duration must be non-negative")
    return agility.p_man * duration


# --- imaging quality ------------------------------------------------------------


def gsd_at_geometry(slant_range: float, h_o: float, incidence: float, agility: AgilitySpec) -> float:
    """Off-nadir GSD: nadir GSD scaled by range ratio and the incidence stretch."""
    if not 0.0 <= incidence < 90.0:
        raise InvalidGeometryError(f"incidence must lie in [0, 90) deg, got {incidence}")
    return agility.gsd_nadir * (slant_range / h_o) / math.cos(math.radians(incidence))


def observation_profit(gsd: float, agility: AgilitySpec) -> float:
    if gsd < agility.gsd_nadir * (1.0 - 1e-12):
        raise InvalidGeometryError(f"GSD {gsd} finer than nadir GSD {agility.gsd_nadir}")
    return min(1.0, agility.gsd_nadir / gsd)


GsdLaw = Callable[[np.ndarray, float, np.ndarray, AgilitySpec], np.ndarray]


def _gsd_vectorised(slant, h_o, incidence, agility):
    return agility.gsd_nadir * (slant / h_o) / np.cos(np.radians(incidence))


def pointing_geometry(sat_pos: np.ndarray, sat_vel: np.ndarray, tgt_pos: np.ndarray):
    """Roll, pitch (deg), slant range (km) and incidence (deg) for pointing at ``tgt_pos``.

    The body frame is the local orbital frame: z towards nadir, x along the
    ground-relative velocity projected off the radial, y completing the set.
    """
    los = tgt_pos - sat_pos
    slant = np.linalg.norm(los, axis=-1)
    z = -sat_pos / np.linalg.norm(sat_pos, axis=-1, keepdims=True)
    x = sat_vel - np.sum(sat_vel * z, axis=-1, keepdims=True) * z
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    y = np.cross(z, x)
    lx = np.sum(los * x, axis=-1)
    ly = np.sum(los * y, axis=-1)
    lz = np.sum(los * z, axis=-1)
    roll = np.degrees(np.arctan2(ly, lz))
    pitch = np.degrees(np.arctan2(lx, np.hypot(ly, lz)))
    up = tgt_pos / np.linalg.norm(tgt_pos, axis=-1, keepdims=True)
    cos_inc = np.sum(-los * up, axis=-1) / slant
    incidence = np.degrees(np.arccos(np.clip(cos_inc, -1.0, 1.0)))
    return roll, pitch, slant, incidence


def discretize_vtw(
    vtw: VisibilityWindow,
    agility: AgilitySpec,
    spec: ConstellationSpec,
    target: Target,
    *,
    layer: str = "obs",
    gsd_law: GsdLaw | None = None,
) -> list[ObservationWindow]:
    """Candidate observation instants ``sw, sw + prc, ...`` up to ``ew``."""
    n_steps = int(math.floor((vtw.end - vtw.start) / agility.prc + 1e-9))
    times = vtw.start + agility.prc * np.arange(n_steps + 1)
    element = spec.elements(layer)[vtw.sat_id]
    pos, vel = state_ecef([element], times, spec.earth_radius)
    pos, vel = pos[:, 0, :], vel[:, 0, :]
    tgt = ground_ecef(target.lat, target.lon, spec.earth_radius)
    roll, pitch, slant, incidence = pointing_geometry(pos, vel, tgt[None, :])
    law = gsd_law or _gsd_vectorised
    out = []
    for w, t in enumerate(times):
        if abs(roll[w]) > agility.theta_max or abs(pitch[w]) > agility.phi_max:
            continue
        if incidence[w] >= 90.0:
            continue
        gsd = float(law(slant[w], element.altitude, incidence[w], agility))
        gsd = max(gsd, agility.gsd_nadir)
        out.append(
            ObservationWindow(
                vtw.sat_id,
                vtw.target_id,
                vtw.orbit_index,
                w,
                float(t),
                float(roll[w]),
                float(pitch[w]),
                0.0,
                agility.gsd_nadir / gsd,
                gsd,
            )
        )
    return out


def build_observation_windows(
    spec: ConstellationSpec,
    targets: Sequence[Target],
    windows: Iterable[VisibilityWindow],
    agility: AgilitySpec,
    *,
    layer: str = "obs",
) -> list[ObservationWindow]:
    """Discretise every visibility window; result sorted by (sat, time, target)."""
    by_id = {t.id: t for t in targets}
    out: list[ObservationWindow] = []
    for vtw in windows:
        out.extend(discretize_vtw(vtw, agility, spec, by_id[vtw.target_id], layer=layer))
    out.sort(key=lambda o: (o.sat_id, o.timestamp, o.target_id, o.orbit, o.window_index))
    return out
