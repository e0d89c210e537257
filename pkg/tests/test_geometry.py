import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leoedge import oracles
from leoedge.geometry import (
    EARTH_RADIUS_KM,
    ConstellationSpec,
    GroundStation,
    GroundStationSet,
    InvalidTopologyError,
    OrbitalElements,
    Target,
    compute_visibility_windows,
    elevation_angle,
    ground_ecef,
    gs_contact,
    isl_slant_range,
    load_ground_stations,
    off_nadir_angle,
    orbital_period,
    propagate,
    propagation_delay,
    slant_range_at_elevation,
    state_ecef,
    subsatellite_point,
)


def test_position_radius_at_epoch():
    pos = propagate(ConstellationSpec(), 0.0)
    assert np.allclose(np.linalg.norm(pos, axis=1), EARTH_RADIUS_KM + 617.0)


def test_orbital_period_matches_kepler():
    # independent evaluation with a rounded gravitational parameter
    expected = 2 * math.pi * math.sqrt(6.988e6**3 / 3.986e14)
    assert orbital_period(617.0) == pytest.approx(expected, rel=1e-5)
    assert orbital_period(617.0) == pytest.approx(5813.54, abs=0.01)


def test_inertial_position_repeats_after_one_period():
    el = OrbitalElements(617.0, 98.6, 30.0, 40.0)
    P = orbital_period(617.0)
    p0, _ = state_ecef([el], 0.0)
    p1, _ = state_ecef([el], P)
    # undo Earth rotation to compare in the inertial frame
    th = 7.2921159e-5 * P
    rot = np.array([[math.cos(th), -math.sin(th), 0], [math.sin(th), math.cos(th), 0], [0, 0, 1]])
    assert np.allclose(rot @ p1[0], p0[0], atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(t=st.floats(0, 1e6), raan=st.floats(0, 360), phase=st.floats(0, 360), inc=st.floats(0, 180))
def test_positions_stay_on_orbital_sphere(t, raan, phase, inc):
    el = OrbitalElements(617.0, inc, raan, phase)
    p, _ = state_ecef([el], t)
    assert np.linalg.norm(p[0]) == pytest.approx(EARTH_RADIUS_KM + 617.0, rel=1e-6)


def test_propagate_rejects_negative_time():
    with pytest.raises(ValueError):
        propagate(ConstellationSpec(), -1.0)


def test_spec_invariants():
    with pytest.raises(ValueError):
        ConstellationSpec(n_sats_edge=0)
    with pytest.raises(ValueError):
        ConstellationSpec(inclination_e=181)
    with pytest.raises(InvalidTopologyError):
        ConstellationSpec(n_sats_edge=23, n_planes=2)


def test_isl_chord_values():
    assert isl_slant_range(23, 617.0) == pytest.approx(1903.065, abs=1e-3)
    assert isl_slant_range(2, 617.0) == pytest.approx(2 * (EARTH_RADIUS_KM + 617.0))
    n = 10_000
    assert isl_slant_range(n, 617.0) == pytest.approx(2 * math.pi * (EARTH_RADIUS_KM + 617.0) / n, rel=1e-6)
    with pytest.raises(InvalidTopologyError):
        isl_slant_range(1, 617.0)


@given(st.integers(2, 500))
def test_isl_chord_decreases_with_ring_size(n):
    assert isl_slant_range(n + 1, 617.0) < isl_slant_range(n, 617.0)


def test_one_hop_delay():
    assert propagation_delay(23, 617.0) == pytest.approx(6.348e-3, abs=1e-6)


def test_slant_range_at_elevation():
    assert slant_range_at_elevation(617.0, 90.0) == pytest.approx(617.0)
    assert slant_range_at_elevation(617.0, 10.0) == pytest.approx(1970.44, abs=0.01)
    # law of cosines in the Earth-centre / station / satellite triangle
    eps = math.radians(10.0)
    r = EARTH_RADIUS_KM + 617.0
    d = slant_range_at_elevation(617.0, 10.0)
    assert r**2 == pytest.approx(EARTH_RADIUS_KM**2 + d**2 + 2 * EARTH_RADIUS_KM * d * math.sin(eps))


def test_nadir_target_is_visible_at_epoch():
    spec = ConstellationSpec(raan_e=176.0, phase_e=100.0)
    lat, lon = subsatellite_point(propagate(spec, 0.0, "obs")[0])
    w = compute_visibility_windows(spec, [Target(0, float(lat), float(lon))], 600.0, 45.0)
    assert w and w[0].start == 0.0 and w[0].end > 0.0


def test_antipodal_target_never_visible():
    spec = ConstellationSpec(inclination_e=0.0)
    # equatorial orbit, short horizon: a polar target is out of reach
    assert compute_visibility_windows(spec, [Target(0, -89.0, 0.0)], 3000.0, 45.0) == []


def test_empty_target_list():
    assert compute_visibility_windows(ConstellationSpec(), [], 100.0) == []


def test_windows_match_fine_sweep():
    spec = ConstellationSpec(raan_e=176.0, phase_e=100.0)
    lat0, lon0 = subsatellite_point(propagate(spec, 300.0, "obs")[0])
    targets = [Target(0, float(lat0), float(lon0)), Target(1, float(lat0) - 3.0, float(lon0) + 4.0),
               Target(2, float(lat0) - 9.0, float(lon0) - 2.0)]
    horizon = 1200.0
    windows = compute_visibility_windows(spec, targets, horizon, 45.0)
    el = spec.elements("obs")[0]
    for t in targets:
        ref = oracles.fine_sweep_visibility(el, t.lat, t.lon, horizon, 45.0, step=0.1)
        mine = [(w.start, w.end) for w in windows if w.target_id == t.id]
        assert len(mine) == len(ref)
        for (a, b), (c, d) in zip(mine, ref):
            assert abs(a - c) <= 0.2 and abs(b - d) <= 0.2


def test_window_endpoints_satisfy_pointing_limit():
    spec = ConstellationSpec(raan_e=176.0, phase_e=100.0)
    rng = np.random.default_rng(3)
    lat0, lon0 = subsatellite_point(propagate(spec, 500.0, "obs")[0])
    targets = [Target(i, float(lat0 + rng.uniform(-5, 5)), float(lon0 + rng.uniform(-5, 5))) for i in range(6)]
    for w in compute_visibility_windows(spec, targets, 1500.0, 30.0):
        t = targets[w.target_id]
        g = ground_ecef(t.lat, t.lon)
        for time in (w.start, w.end):
            p = propagate(spec, time, "obs")[0]
            assert off_nadir_angle(p, g) <= 30.0 + 0.05
        assert w.start < w.end


def test_windows_ordered_and_disjoint_per_pair():
    spec = ConstellationSpec(raan_e=176.0, phase_e=100.0)
    ws = compute_visibility_windows(spec, [Target(0, 60.0, 10.0)], 20_000.0, 45.0)
    starts = [w.start for w in ws]
    assert starts == sorted(starts)
    for a, b in zip(ws, ws[1:]):
        assert a.end < b.start
    assert [w.orbit_index for w in ws] == list(range(len(ws)))


def test_contact_at_zenith():
    spec = ConstellationSpec(n_sats_edge=1)
    lat, lon = subsatellite_point(propagate(spec, 0.0)[0])
    stations = GroundStationSet((GroundStation("z", float(lat), float(lon), 5.0),))
    c = gs_contact(spec, stations, 0.0)[0]
    assert c.in_contact and c.sat_id == 0
    assert c.distance_km == pytest.approx(617.0, abs=1e-6)
    assert c.elevation_deg == pytest.approx(90.0, abs=1e-6)


def test_contact_masked_below_elevation():
    spec = ConstellationSpec(n_sats_edge=1)
    lat, lon = subsatellite_point(propagate(spec, 0.0)[0])
    stations = GroundStationSet((GroundStation("far", float(-lat), float(lon) + 180.0, 5.0),))
    c = gs_contact(spec, stations, 0.0)[0]
    assert not c.in_contact and c.elevation_deg < 5.0


def test_distance_smallest_at_highest_elevation_over_a_pass():
    spec = ConstellationSpec(n_sats_edge=1, raan_e=176.0, phase_e=100.0)
    lat, lon = subsatellite_point(propagate(spec, 200.0)[0])
    stations = GroundStationSet((GroundStation("s", float(lat) + 2.0, float(lon) + 3.0, 0.0),))
    ts = np.arange(0.0, 400.0, 2.0)
    cs = [gs_contact(spec, stations, t)[0] for t in ts]
    el = np.array([c.elevation_deg for c in cs])
    d = np.array([c.distance_km for c in cs])
    assert np.argmax(el) == np.argmin(d)
    k = int(np.argmin(d))
    assert np.all(np.diff(d[: k + 1]) <= 1e-9) and np.all(np.diff(d[k:]) >= -1e-9)


def test_elevation_geometry():
    g = ground_ecef(0.0, 0.0)
    assert elevation_angle(g * (1 + 617 / EARTH_RADIUS_KM), g) == pytest.approx(90.0)


def test_bundled_station_list():
    s = load_ground_stations()
    assert len(s) == 26
    assert all(-90 <= x.lat <= 90 for x in s)
    with pytest.raises(ValueError):
        GroundStationSet(())
    with pytest.raises(ValueError):
        Target(0, 91.0, 0.0)
