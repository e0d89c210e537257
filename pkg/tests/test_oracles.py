import json
import math

import numpy as np
import pytest

from leoedge import oracles
from leoedge.acquisition import AgilitySpec, ObservationWindow
from leoedge.compute import PLATFORMS, WorkloadSpec, mean_exec_time
from leoedge.geometry import OrbitalElements
from leoedge.network import LinkSpec, isl_range_m
from leoedge.obs_scheduler import SchedulingInstance
from leoedge.proc_scheduler import ProcessingInstance


def _ow(tgt, t, roll=0.0, profit=1.0, sat=0):
    return ObservationWindow(sat, tgt, 0, 0, t, roll, 0.0, 0.0, profit, 0.31)


def test_report_verdicts():
    ok = oracles.OracleReport("a", 100.0, 100.5, 0.01)
    bad = oracles.OracleReport("b", 100.0, 103.0, 0.01)
    inf = oracles.OracleReport("c", math.inf, 1.0, 0.01)
    assert ok.verdict == "pass" and bad.verdict == "fail" and inf.verdict == "fail"
    both_inf = oracles.OracleReport("d", math.inf, math.inf, 0.0)
    assert both_inf.relative_error == 0.0
    summary = json.loads(oracles.reports_json([ok, bad, inf]))
    assert summary["passed"] == 1 and summary["total"] == 3
    assert summary["cases"][2]["relative_error"] is None


def test_enumeration_hand_cases():
    ag = AgilitySpec(e_max=100.0)
    # two targets at the same instant: only one fits
    inst = SchedulingInstance((_ow(0, 10.0, profit=0.4), _ow(1, 10.0, profit=0.7)), ag, 50.0)
    assert oracles.enumerate_aeossp(inst) == pytest.approx(0.7)
    # two satellites can take both
    inst = SchedulingInstance((_ow(0, 10.0, profit=0.4), _ow(1, 10.0, profit=0.7, sat=1)), ag, 50.0)
    assert oracles.enumerate_aeossp(inst) == pytest.approx(1.1)
    # same target on two satellites counts once
    inst = SchedulingInstance((_ow(0, 10.0, profit=0.4), _ow(0, 20.0, profit=0.7, sat=1)), ag, 50.0)
    assert oracles.enumerate_aeossp(inst) == pytest.approx(0.7)


def test_enumeration_refuses_large_cases():
    ag = AgilitySpec()
    inst = SchedulingInstance(tuple(_ow(i, float(i)) for i in range(9)), ag, 50.0)
    with pytest.raises(oracles.OracleRefusal):
        oracles.enumerate_aeossp(inst)


def test_grid_one_processor():
    w = WorkloadSpec()
    p = PLATFORMS["cloud_cpu"]
    n = 100
    inst = ProcessingInstance((), (), p, w, n * 788_513.0, 788_513.0, 10.0, LinkSpec(), 5, isl_range_m(5, 617),
                              source=0, raw_dl_sat=2, raw_rate=1e9)
    best, arg = oracles.grid_search_psch(inst)
    f = mean_exec_time(p, p.f_max, w) * n * p.f_max / 10.0  # slot-filling clock (no sync term)
    expected = 10.0 * p.p_max * (f / p.f_max) ** 3 + 2 * 60.0 * n * 788_513.0 / 10e9 + 10.0 * n * 788_513.0 / 1e9
    assert arg == (1.0,)
    assert best == pytest.approx(expected, rel=1e-9)


def test_grid_points_cover_simplex():
    pts = list(oracles._grid_points(3, 0.25))
    assert len(pts) == 15
    assert all(abs(sum(p) - 1.0) < 1e-12 and min(p) >= 0 for p in pts)


def test_walk_is_shortest_and_undirected():
    assert oracles._walk(6, 0, 3) == [(0, 1), (1, 2), (2, 3)]
    assert oracles._walk(6, 1, 5) == [(0, 1), (0, 5)]
    assert oracles._walk(6, 2, 2) == []


def test_gamma_oracle():
    with pytest.raises(oracles.OracleRefusal):
        oracles.mc_gamma_sum(2.0, 1.0, 3, replicas=100)
    r = oracles.mc_gamma_sum(2.0, 0.5, 4, replicas=20_000, seed=1)
    assert r["mean"] == pytest.approx(4.0, rel=0.01)


def test_fine_sweep_sees_nadir_point():
    el = OrbitalElements(617.0, 0.0, 0.0, 0.0)
    spans = oracles.fine_sweep_visibility(el, 0.0, 0.0, 60.0, 45.0, step=0.5)
    assert spans and spans[0][0] == 0.0


def test_db_link_budget_known_loss():
    # free-space loss at 1000 km and 20 GHz is about 178.46 dB
    r = oracles.db_link_budget(1.0e6)
    assert r["fspl_db"] == pytest.approx(178.46, abs=0.01)
    assert r["snr_db"] == pytest.approx(10 + 66.33 - r["fspl_db"] + 119.32)
    assert len(oracles.bundled_modcods()) == 26
    assert oracles.db_link_budget(1.0e9)["rate_bps"] == 0.0
