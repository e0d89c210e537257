import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import IMG_BITS, random_psch
from leoedge import oracles
from leoedge.compute import PLATFORMS, WorkloadSpec, max_fps, mean_exec_time
from leoedge.network import LinkSpec, isl_range_m
from leoedge.proc_scheduler import (
    GROUND,
    InfeasibleAllocationError,
    ProcessingAllocator,
    ProcessingInstance,
    check_plan,
    frequencies_for,
    max_supported_load,
    solve,
    substituted_objective,
    total_energy,
)


def _solve_or_inf(inst):
    try:
        plan = solve(inst)
    except InfeasibleAllocationError:
        return None, math.inf
    return plan, plan.predicted_energy


def _simple(n_img, *, edge=("agx",), nodes=(3,), ground=True, t=10.0, rate=1e9, n_ring=23):
    return ProcessingInstance(
        tuple(PLATFORMS[e] for e in edge), nodes, PLATFORMS["cloud_cpu"] if ground else None, WorkloadSpec(),
        n_img * IMG_BITS, IMG_BITS, t, LinkSpec(), n_ring, isl_range_m(n_ring, 617.0), source=0,
        raw_dl_sat=5, raw_rate=rate, gather_dl_sat=5, gather_rate=rate,
    )


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 2**32 - 1))
def test_solver_never_worse_than_grid(seed):
    inst = random_psch(np.random.default_rng(seed))
    grid, _ = oracles.grid_search_psch(inst, step=0.02)
    plan, e = _solve_or_inf(inst)
    if math.isinf(grid):
        return
    assert plan is not None
    assert e <= grid * (1 + 1e-6)
    assert check_plan(inst, plan.x, plan.f) == []
    oe, ok = oracles.psch_energy(inst, plan.x)
    assert ok and oe == pytest.approx(e, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_plan_is_consistent(seed):
    inst = random_psch(np.random.default_rng(seed))
    plan, e = _solve_or_inf(inst)
    if plan is None:
        return
    assert plan.x.sum() == pytest.approx(1.0)
    assert np.all(plan.x >= -1e-12)
    assert e == pytest.approx(total_energy(inst, plan.x, plan.f), rel=1e-9)
    assert e == pytest.approx(sum(plan.breakdown.values()))
    assert plan.kkt_residual < 1e-3


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.data())
def test_substituted_objective_is_midpoint_convex(seed, lam, data):
    inst = random_psch(np.random.default_rng(seed))
    k = len(inst.processors)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    cap = np.array([min(1.0, inst.t_slot / (inst.n_images * mean_exec_time(p, p.f_max, inst.workload)))
                    for _, p in inst.processors])
    a = rng.uniform(0, 1, k) * cap
    b = rng.uniform(0, 1, k) * cap
    fa, fb = substituted_objective(inst, a), substituted_objective(inst, b)
    m = lam * a + (1 - lam) * b
    if not (math.isfinite(fa) and math.isfinite(fb)):
        return
    assert substituted_objective(inst, m) <= lam * fa + (1 - lam) * fb + 1e-9 * max(1.0, abs(fa), abs(fb))


def test_split_prefers_cheaper_processor():
    # with a slow feeder link, shipping raw data to the ground is expensive
    plan = solve(_simple(50, rate=0.3e9))
    assert plan.shares["e3"] > plan.shares[GROUND]
    # the checker and the plan agree on feasibility
    assert check_plan(_simple(50, rate=0.3e9), plan.x, plan.f) == []


def test_overload_is_infeasible_with_reasons():
    inst = _simple(int(1.2 * 10 * (max_fps(PLATFORMS["agx"], WorkloadSpec())
                                  + max_fps(PLATFORMS["cloud_cpu"], WorkloadSpec()))))
    with pytest.raises(InfeasibleAllocationError) as exc:
        solve(inst)
    assert exc.value.violated


def test_no_contact_edge_only_fails():
    inst = _simple(50, ground=False, rate=0.0)
    with pytest.raises(InfeasibleAllocationError):
        solve(inst)


def test_checker_flags_bad_plans():
    inst = _simple(100)
    x = np.array([0.5, 0.6])
    msgs = check_plan(inst, x, frequencies_for(inst, x))
    assert any(m.startswith("c:cons") for m in msgs)
    x = np.array([1.0, 0.0])
    f = np.array([1e8, 0.0])
    assert any(m.startswith("c:proc") for m in check_plan(inst, x, f))
    assert check_plan(inst, [1.0], [1.0]) == ["shape: one share and one clock per processor"]


def test_instance_validation():
    with pytest.raises(ValueError):
        _simple(10, edge=("agx", "nano"), nodes=(1, 1))
    with pytest.raises(ValueError):
        _simple(10, edge=(), nodes=(), ground=False)
    with pytest.raises(ValueError):
        _simple(10, nodes=(40,))


def test_capacity_helper():
    w = WorkloadSpec()
    per_slot, fps = max_supported_load([PLATFORMS["agx"], PLATFORMS["cloud_cpu"]], 10.0, w)
    assert fps == pytest.approx(max_fps(PLATFORMS["agx"], w) + max_fps(PLATFORMS["cloud_cpu"], w))
    assert per_slot == pytest.approx(10 * fps)


def test_estimator_api():
    inst = _simple(80)
    est = ProcessingAllocator().fit(inst)
    assert est.predict().sum() == pytest.approx(1.0)
    assert est.score(inst) == pytest.approx(-est.plan_.predicted_energy)
    assert set(est.plan_.to_dict()) >= {"x", "f_hz", "energy_j", "binding"}
