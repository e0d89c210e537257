import numpy as np
import pytest

from leoedge.acquisition import AgilitySpec, ObservationWindow
from leoedge.compute import PLATFORMS, WorkloadSpec
from leoedge.network import LinkSpec, isl_range_m
from leoedge.obs_scheduler import SchedulingInstance
from leoedge.proc_scheduler import ProcessingInstance, max_supported_load

IMG_BITS = 788_513.0


def random_aeossp(rng: np.random.Generator, *, max_targets: int = 8, max_sats: int = 2,
                  max_windows: int = 6) -> SchedulingInstance:
    """Small synthetic instance: a few candidate instants per target, random attitudes."""
    nt = int(rng.integers(1, max_targets + 1))
    nsat = int(rng.integers(1, max_sats + 1))
    ag = AgilitySpec(e_max=float(rng.uniform(30, 200)))
    otws = []
    for t in range(nt):
        k = int(rng.integers(1, max_windows + 1))
        sat = int(rng.integers(0, nsat))
        t0 = rng.uniform(0, 150)
        for w in range(k):
            otws.append(ObservationWindow(sat, t, 0, w, float(t0 + 10 * w), float(rng.uniform(-45, 45)),
                                          float(rng.uniform(-45, 45)), 0.0, float(rng.uniform(0.2, 1)), 0.5))
    return SchedulingInstance(tuple(otws), ag, 250.0)


def random_psch(rng: np.random.Generator, *, load: tuple[float, float] = (0.05, 0.9)) -> ProcessingInstance:
    """Random frame-splitting instance with up to two edge processors and an optional ground one."""
    n_ring = int(rng.integers(5, 24))
    k_edge = int(rng.integers(0, 3))
    ground = bool(rng.random() < 0.7) or k_edge == 0
    names = ["sat_cpu", "nano", "agx"]
    nodes = tuple(int(v) for v in rng.choice(n_ring, size=k_edge, replace=False))
    edge = tuple(PLATFORMS[names[int(rng.integers(3))]] for _ in nodes)
    t_slot = float(rng.choice([5.0, 10.0, 20.0, 40.0]))
    procs = list(edge) + ([PLATFORMS["cloud_cpu"]] if ground else [])
    n_img = max(1, int(rng.uniform(*load) * max_supported_load(procs, t_slot)[0]))
    rate = float(rng.uniform(0.3e9, 3e9))
    dl = int(rng.integers(n_ring))
    return ProcessingInstance(
        edge, nodes, PLATFORMS["cloud_cpu"] if ground else None, WorkloadSpec(), n_img * IMG_BITS, IMG_BITS,
        t_slot, LinkSpec(), n_ring, isl_range_m(n_ring, 617.0), source=int(rng.integers(n_ring)),
        raw_dl_sat=dl, raw_rate=rate, gather_dl_sat=dl, gather_rate=rate,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
