"""Energy-minimising split of one frame's processing across edge satellites and the ground.

With every processor clocked at the lowest frequency that finishes its share
inside the slot, the processing energy of a share ``x`` is a convex function of
``x`` alone. The remaining communication terms are linear, so the allocation is
a separable convex program over a capped simplex, solved here by water-filling
on the common marginal cost with a general solver as fallback when the link
capacity rows bind.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator

from .compute import PlatformSpec, WorkloadSpec, mean_exec_time
from .geometry import SPEED_OF_LIGHT
from .network import LinkSpec, Route, propagation_bound, ring_path

logger = logging.getLogger(__name__)

GROUND = "ground"


class InfeasibleAllocationError(RuntimeError):
    """No split satisfies the capacity rows; ``violated`` names them."""

    def __init__(self, message: str, violated: list[str]):
        super().__init__(message)
        self.violated = violated


@dataclass(frozen=True)
class ProcessingInstance:
    """Topology snapshot for one captured frame.

    Edge processors sit at ring positions ``edge_nodes``. The frame enters the
    ring at ``source``. Raw bits for the ground are downlinked by
    ``raw_dl_sat`` at ``raw_rate``; compressed results by ``gather_dl_sat`` at
    ``gather_rate``. Rates are b/s and may be zero when no station is in view.
    """

    edge: tuple[PlatformSpec, ...]
    edge_nodes: tuple[int, ...]
    ground: PlatformSpec | None
    workload: WorkloadSpec
    frame_bits: float
    img_bits: float
    t_slot: float
    link: LinkSpec
    n_ring: int
    isl_range_m: float
    source: int = 0
    raw_dl_sat: int | None = None
    raw_rate: float = 0.0
    raw_d_eg_m: float = 0.0
    gather_dl_sat: int | None = None
    gather_rate: float = 0.0
    gather_d_eg_m: float = 0.0
    entry_hops: int = 0  # extra ISL hops from a non co-hosted observation satellite
    t_delay_bound: float | None = None

    def __post_init__(self):
        if self.t_slot <= 0:
            raise ValueError("slot duration must be positive")
        if self.frame_bits <= 0 or self.img_bits <= 0:
            raise ValueError("frame and image sizes must be positive")
        if len(self.edge) != len(self.edge_nodes):
            raise ValueError("one ring position per edge processor")
        if len(set(self.edge_nodes)) != len(self.edge_nodes):
            raise ValueError("edge processors must sit at distinct ring positions")
        for v in (*self.edge_nodes, self.source):
            if not 0 <= v < self.n_ring:
                raise ValueError(f"ring position {v} outside 0..{self.n_ring - 1}")
        for v in (self.raw_dl_sat, self.gather_dl_sat):
            if v is not None and not 0 <= v < self.n_ring:
                raise ValueError(f"downlink satellite {v} outside the ring")
        if not self.edge and self.ground is None:
            raise ValueError("at least one processor is required")
        if self.raw_rate < 0 or self.gather_rate < 0:
            raise ValueError("rates must be non-negative")

    # -- derived quantities ------------------------------------------------------

    @property
    def processors(self) -> list[tuple[str, PlatformSpec]]:
        out = [(f"e{n}", p) for n, p in zip(self.edge_nodes, self.edge)]
        if self.ground is not None:
            out.append((GROUND, self.ground))
        return out

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.processors]

    @property
    def n_images(self) -> float:
        return self.frame_bits / self.img_bits

    @property
    def has_ground(self) -> bool:
        return self.ground is not None

    def scatter_route(self, i: int) -> Route:
        """Raw-data path to processor ``i``; the ground path ends with the downlink hop."""
        if i < len(self.edge):
            nodes = ring_path(self.n_ring, self.source, self.edge_nodes[i])
            return Route(tuple(zip(nodes, nodes[1:])), self.isl_range_m, "uncompressed")
        if self.raw_dl_sat is None:
            return Route((), self.isl_range_m, "uncompressed")
        nodes = ring_path(self.n_ring, self.source, self.raw_dl_sat)
        return Route(tuple(zip(nodes, nodes[1:])), self.isl_range_m, "uncompressed",
                     downlink=(self.raw_dl_sat, GROUND), d_eg_m=self.raw_d_eg_m)

    def gather_route(self, i: int) -> Route:
        """Compressed-data path from edge processor ``i`` to the station."""
        if self.gather_dl_sat is None:
            return Route((), self.isl_range_m, "compressed")
        nodes = ring_path(self.n_ring, self.edge_nodes[i], self.gather_dl_sat)
        return Route(tuple(zip(nodes, nodes[1:])), self.isl_range_m, "compressed", slot=2,
                     downlink=(self.gather_dl_sat, GROUND), d_eg_m=self.gather_d_eg_m)

    def delay_bound(self) -> float:
        if self.t_delay_bound is not None:
            return self.t_delay_bound
        return (self.n_ring // 2) * self.isl_range_m / SPEED_OF_LIGHT


# --- closed-form pieces --------------------------------------------------------------------


@dataclass(frozen=True)
class _Coefficients:
    lin: np.ndarray  # J per unit share: communication energy
    work: np.ndarray  # a = mu_c W / (cores * flops)
    sync: np.ndarray
    pmax: np.ndarray
    fmax: np.ndarray
    cap: np.ndarray  # largest share finishing within the slot at f_max
    dl_time: np.ndarray  # seconds of downlink time per unit share
    isl_rows: np.ndarray  # (links, P) bits per unit share
    isl_links: list
    usable: np.ndarray  # processor can be reached and its output delivered


def _coefficients(inst: ProcessingInstance) -> _Coefficients:
    link, w = inst.link, inst.workload
    ds, n = inst.frame_bits, inst.n_images
    procs = inst.processors
    P = len(procs)
    e_bit = link.p_isl / link.r_isl
    lin = np.zeros(P)
    dl_time = np.zeros(P)
    usable = np.ones(P, dtype=bool)
    loads: dict[tuple[int, int], np.ndarray] = {}

    def add(hops, i, bits):
        for a, b in hops:
            key = (min(a, b), max(a, b))
            loads.setdefault(key, np.zeros(P))[i] += bits

    entry = inst.entry_hops * e_bit * ds
    for i, (name, _) in enumerate(procs):
        if name == GROUND:
            if inst.raw_dl_sat is None or inst.raw_rate <= 0:
                usable[i] = False
                continue
            r = inst.scatter_route(i)
            lin[i] = entry + r.n_isl * e_bit * ds + link.p_dl * ds / inst.raw_rate
            dl_time[i] = ds / inst.raw_rate
            add(r.hops, i, ds)
        else:
            if inst.gather_dl_sat is None or inst.gather_rate <= 0:
                usable[i] = False
                continue
            su, ga = inst.scatter_route(i), inst.gather_route(i)
            comp = ds / w.rho
            lin[i] = entry + su.n_isl * e_bit * ds + ga.n_isl * e_bit * comp + link.p_dl * comp / inst.gather_rate
            dl_time[i] = comp / inst.gather_rate
            add(su.hops, i, ds)
            add(ga.hops, i, comp)
    plats = [p for _, p in procs]
    work = np.array([p.mu_c * w.work / p.peak_flops for p in plats])
    sync = np.array([p.mu_sync for p in plats])
    fmax = np.array([p.f_max for p in plats])
    pmax = np.array([p.p_max for p in plats])
    mu_fmax = work / fmax + sync
    cap = np.minimum(1.0, inst.t_slot / (n * mu_fmax))
    cap = np.where(usable, cap, 0.0)
    links = sorted(loads)
    rows = np.array([loads[k] for k in links]) if links else np.zeros((0, P))
    return _Coefficients(lin, work, sync, pmax, fmax, cap, dl_time, rows, links, usable)


def _fstar(c: _Coefficients, n: float, t: float, x):
    s = n * np.asarray(x, dtype=float)
    return c.work * s / (t - c.sync * s)


def _proc_energy(c: _Coefficients, n: float, t: float, x):
    x = np.asarray(x, dtype=float)
    f = _fstar(c, n, t, x)
    return t * c.pmax * (f / c.fmax) ** 3


def _proc_marginal(c: _Coefficients, n: float, t: float, x):
    s = n * np.asarray(x, dtype=float)
    den = t - c.sync * s
    f = c.work * s / den
    df = n * c.work * t / den**2
    return 3.0 * t * c.pmax * f**2 * df / c.fmax**3


def substituted_objective(inst: ProcessingInstance, x) -> float:
    """Energy with each processor at its slot-filling clock; convex in ``x``."""
    c = _coefficients(inst)
    x = np.asarray(x, dtype=float)
    return float(c.lin @ x + _proc_energy(c, inst.n_images, inst.t_slot, x).sum())


def frequencies_for(inst: ProcessingInstance, x) -> np.ndarray:
    """Slot-filling clocks (Hz) for shares ``x``; zero for idle processors, capped at f_max."""
    c = _coefficients(inst)
    x = np.asarray(x, dtype=float)
    f = np.where(x > 0, _fstar(c, inst.n_images, inst.t_slot, x), 0.0)
    return np.minimum(f, c.fmax)


# --- evaluation of arbitrary (x, f) ---------------------------------------------------------------


def energy_breakdown(inst: ProcessingInstance, x, f) -> dict[str, float]:
    """Energy split by phase for shares ``x`` and clocks ``f`` (J)."""
    link, w = inst.link, inst.workload
    ds, n = inst.frame_bits, inst.n_images
    e_bit = link.p_isl / link.r_isl
    out = dict.fromkeys(("scatter_isl", "scatter_dl", "processing_edge", "processing_ground",
                         "gather_isl", "gather_dl"), 0.0)
    for i, (name, p) in enumerate(inst.processors):
        xi = float(x[i])
        if xi <= 0:
            continue
        bits = xi * ds
        out["scatter_isl"] += inst.entry_hops * e_bit * bits
        proc = n * xi * (p.p_max * (f[i] / p.f_max) ** 3) * mean_exec_time(p, f[i], w)
        if name == GROUND:
            out["scatter_isl"] += inst.scatter_route(i).n_isl * e_bit * bits
            out["scatter_dl"] += link.p_dl * bits / inst.raw_rate if inst.raw_rate > 0 else math.inf
            out["processing_ground"] += proc
        else:
            out["scatter_isl"] += inst.scatter_route(i).n_isl * e_bit * bits
            comp = bits / w.rho
            out["gather_isl"] += inst.gather_route(i).n_isl * e_bit * comp
            out["gather_dl"] += link.p_dl * comp / inst.gather_rate if inst.gather_rate > 0 else math.inf
            out["processing_edge"] += proc
    return out


def total_energy(inst: ProcessingInstance, x, f) -> float:
    return float(sum(energy_breakdown(inst, x, f).values()))


def t_delay(inst: ProcessingInstance, x, f) -> float:
    """Worst lateness of any edge share reaching the downlink satellite (s)."""
    w, n = inst.workload, inst.n_images
    worst = 0.0
    for i, p in enumerate(inst.edge):
        xi = float(x[i])
        if xi <= 0:
            continue
        bits = xi * inst.frame_bits / w.rho
        hops = inst.gather_route(i).n_isl
        comm = hops * (bits / inst.link.r_isl + inst.isl_range_m / SPEED_OF_LIGHT)
        proc = n * xi * mean_exec_time(p, f[i], w)
        worst = max(worst, comm + max(proc - inst.t_slot, 0.0))
    return worst


def check_plan(inst: ProcessingInstance, x, f, *, tol: float = 1e-7) -> list[str]:
    """Violated capacity rows for shares ``x`` and clocks ``f``; empty when the plan is valid."""
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    out = []
    procs = inst.processors
    if len(x) != len(procs) or len(f) != len(procs):
        return ["shape: one share and one clock per processor"]
    if abs(x.sum() - 1.0) > tol:
        out.append(f"c:cons: shares sum to {x.sum():.9f}")
    for i, (name, p) in enumerate(procs):
        if x[i] < -tol or x[i] > 1 + tol:
            out.append(f"c:scatt: {name} share {x[i]:.6g} outside [0, 1]")
        if f[i] > p.f_max * (1 + tol):
            out.append(f"c:procf: {name} clock {f[i]:.6g} Hz above f_max")
        if x[i] > tol:
            if f[i] <= 0:
                out.append(f"c:proc: {name} has work but no clock")
                continue
            busy = inst.n_images * x[i] * mean_exec_time(p, min(f[i], p.f_max), inst.workload)
            if busy > inst.t_slot * (1 + tol):
                out.append(f"c:proc: {name} busy {busy:.6g} s > slot {inst.t_slot:g} s")
    # downlink budget
    td = t_delay(inst, x, f)
    need = 0.0
    for i, (name, _) in enumerate(procs):
        if x[i] <= tol:
            continue
        if name == GROUND:
            rate = inst.raw_rate
            bits = x[i] * inst.frame_bits
        else:
            rate = inst.gather_rate
            bits = x[i] * inst.frame_bits / inst.workload.rho
        if rate <= 0:
            out.append(f"c:dl: {name} needs a downlink but the rate is zero")
            continue
        need += bits / rate
    if need > (inst.t_slot - td) * (1 + tol) + tol:
        out.append(f"c:dl: downlink needs {need:.6g} s of the {inst.t_slot - td:.6g} s available")
    # ISL capacity, links counted undirected
    loads: dict[tuple[int, int], float] = {}
    for i, (name, _) in enumerate(procs):
        if x[i] <= 0:
            continue
        flows = [(inst.scatter_route(i), x[i] * inst.frame_bits)]
        if name != GROUND:
            flows.append((inst.gather_route(i), x[i] * inst.frame_bits / inst.workload.rho))
        for route, bits in flows:
            for a, b in route.hops:
                key = (min(a, b), max(a, b))
                loads[key] = loads.get(key, 0.0) + bits
    cap = inst.t_slot * inst.link.r_isl
    for key, bits in sorted(loads.items()):
        if bits > cap * (1 + tol):
            out.append(f"c:isl: link {key} carries {bits:.6g} b > {cap:.6g} b")
    return out


# --- solver ---------------------------------------------------------------------------------------


@dataclass
class AllocationPlan:
    names: list[str]
    x: np.ndarray
    f: np.ndarray
    predicted_energy: float
    t_delay: float
    breakdown: dict[str, float]
    binding_constraints: list[str] = field(default_factory=list)
    kkt_residual: float = 0.0
    method: str = "water-filling"

    @property
    def shares(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.x)}

    @property
    def frequencies(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.f)}

    def to_dict(self) -> dict:
        return {
            "x": self.shares,
            "f_hz": self.frequencies,
            "energy_j": self.predicted_energy,
            "t_delay_s": self.t_delay,
            "breakdown_j": self.breakdown,
            "binding": self.binding_constraints,
            "kkt_residual": self.kkt_residual,
            "method": self.method,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _share_at_price(c: _Coefficients, n: float, t: float, lam: float) -> np.ndarray:
    """Per-processor minimiser of ``E_p(x) + (lin_p - lam) x`` on ``[0, cap_p]``.

    The marginal processing energy is ``K x^2 / (t - m x)^4``, so setting it to
    ``y`` reduces to a quadratic in ``x``.
    """
    y = np.maximum(lam - c.lin, 0.0)
    K = 3.0 * t * t * c.pmax * (c.work * n) ** 3 / c.fmax**3
    m = c.sync * n
    q = np.sqrt(y / K)
    b = 2.0 * q * t * m + 1.0
    x = 2.0 * q * t * t / (b + np.sqrt(1.0 + 4.0 * q * t * m))
    return np.clip(x, 0.0, c.cap)


def _water_fill(c: _Coefficients, n: float, t: float) -> tuple[np.ndarray, float]:
    lo = float(np.min(c.lin[c.usable]))
    hi = float(np.max((c.lin + _proc_marginal(c, n, t, c.cap))[c.usable])) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _share_at_price(c, n, t, mid).sum() < 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    x_lo, x_hi = _share_at_price(c, n, t, lo), _share_at_price(c, n, t, hi)
    # processors sitting exactly at the price take the residual
    gap = 1.0 - x_lo.sum()
    slack = x_hi - x_lo
    x = x_lo + (slack * gap / slack.sum() if slack.sum() > 0 else 0.0)
    return np.clip(x, 0.0, c.cap), hi


def _linear_rows(inst: ProcessingInstance, c: _Coefficients, td: float):
    """``A x <= b`` for the downlink and ISL rows."""
    A = [c.dl_time]
    b = [inst.t_slot - td]
    labels = ["c:dl"]
    cap = inst.t_slot * inst.link.r_isl
    for key, row in zip(c.isl_links, c.isl_rows):
        A.append(row)
        b.append(cap)
        labels.append(f"c:isl{key}")
    return np.array(A), np.array(b), labels


def _diagnose(inst, c, td) -> list[str]:
    """Name each row group whose removal restores feasibility."""
    P = len(c.lin)
    A, b, _ = _linear_rows(inst, c, td)

    def feasible(skip_rows, relax_proc):
        keep = [i for i in range(len(b)) if i not in skip_rows]
        bounds = [(0, 1.0 if (relax_proc and ok) else u) for u, ok in zip(c.cap, c.usable)]
        res = optimize.linprog(np.zeros(P), A_ub=A[keep] if keep else None, b_ub=b[keep] if keep else None,
                               A_eq=np.ones((1, P)), b_eq=[1.0], bounds=bounds, method="highs")
        return res.status == 0

    violated = []
    if not c.usable.any():
        violated.append("c:dl (downlink rate is zero)")
    elif feasible(set(), True):
        violated.append("c:proc")
    if c.usable.any():
        if feasible({0}, False):
            violated.append("c:dl")
        if feasible(set(range(1, len(b))), False):
            violated.append("c:isl")
    return violated or ["c:proc", "c:dl", "c:isl"]


def _kkt_residual(c, n, t, x, A, b) -> float:
    """Scaled stationarity residual with non-negative multipliers on active rows."""
    g = c.lin + _proc_marginal(c, n, t, x)
    P = len(x)
    tol = 1e-9
    cols = [np.ones(P), -np.ones(P)]  # equality multiplier, split
    for j in range(P):
        e = np.zeros(P)
        if x[j] <= tol:
            e[j] = 1.0  # lower bound multiplier
            cols.append(e)
        elif x[j] >= c.cap[j] - tol:
            e[j] = -1.0
            cols.append(e)
    for row, rhs in zip(A, b):
        if row @ x >= rhs - 1e-9 * max(1.0, abs(rhs)):
            cols.append(-row)
    M = np.array(cols).T
    mult, res = optimize.nnls(M, g)
    return float(res / max(1.0, np.linalg.norm(g)))


def solve(inst: ProcessingInstance, *, max_rounds: int = 4) -> AllocationPlan:
    """Minimum-energy split of the frame over the instance's processors.

    Raises :class:`InfeasibleAllocationError` listing the violated rows when
    no split fits.
    """
    c = _coefficients(inst)
    n, t = inst.n_images, inst.t_slot
    names = inst.names
    if not c.usable.any() or c.cap.sum() < 1.0 - 1e-12:
        viol = _diagnose(inst, c, inst.delay_bound())
        raise InfeasibleAllocationError(f"no feasible split: {', '.join(viol)}", viol)
    td = inst.delay_bound() if len(inst.edge) else 0.0
    x = None
    method = "water-filling"
    for _ in range(max_rounds):
        A, b, labels = _linear_rows(inst, c, td)
        x, _ = _water_fill(c, n, t)
        if np.any(A @ x > b * (1 + 1e-12) + 1e-12):
            x = _general_solve(inst, c, A, b, x)
            method = "slsqp"
            if x is None:
                viol = _diagnose(inst, c, td)
                raise InfeasibleAllocationError(f"no feasible split: {', '.join(viol)}", viol)
        f = frequencies_for(inst, x)
        td_new = t_delay(inst, x, f)
        if td_new <= td + 1e-15:
            break
        td = td_new
    f = frequencies_for(inst, x)
    A, b, labels = _linear_rows(inst, c, td)
    binding = [lab for lab, row, rhs in zip(labels, A, b) if row @ x >= rhs * (1 - 1e-9)]
    binding += [f"c:proc:{nm}" for nm, xi, u in zip(names, x, c.cap) if xi > 0 and xi >= u - 1e-12]
    br = energy_breakdown(inst, x, f)
    return AllocationPlan(
        names=names,
        x=x,
        f=f,
        predicted_energy=float(sum(br.values())),
        t_delay=t_delay(inst, x, f),
        breakdown=br,
        binding_constraints=binding,
        kkt_residual=_kkt_residual(c, n, t, x, A, b),
        method=method,
    )


def _general_solve(inst, c, A, b, x0):
    n, t = inst.n_images, inst.t_slot
    P = len(x0)
    scale = max(1.0, float(np.max(np.abs(c.lin))))

    def obj(x):
        return (c.lin @ x + _proc_energy(c, n, t, x).sum()) / scale

    def grad(x):
        return (c.lin + _proc_marginal(c, n, t, x)) / scale

    cons = [
        {"type": "eq", "fun": lambda x: x.sum() - 1.0, "jac": lambda x: np.ones(P)},
        {"type": "ineq", "fun": lambda x: b - A @ x, "jac": lambda x: -A},
    ]
    lp = optimize.linprog(c.lin, A_ub=A, b_ub=b, A_eq=np.ones((1, P)), b_eq=[1.0],
                          bounds=[(0, u) for u in c.cap], method="highs")
    if lp.status != 0:
        return None
    start = lp.x
    res = optimize.minimize(obj, start, jac=grad, bounds=[(0, u) for u in c.cap], constraints=cons,
                            method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    x = np.clip(res.x, 0.0, c.cap)
    x = x / x.sum()
    if np.any(A @ x > b * (1 + 1e-9)) or obj(x) > obj(start):
        x = start
    return x


# --- capacity ---------------------------------------------------------------------------------------


def max_supported_load(platforms, t_slot: float, workload: WorkloadSpec | None = None) -> tuple[float, float]:
    """Images per slot and FPS when every processor runs at full clock."""
    w = workload or WorkloadSpec()
    per_slot = sum(t_slot / mean_exec_time(p, p.f_max, w) for p in platforms)
    return per_slot, per_slot / t_slot


class ProcessingAllocator(BaseEstimator):
    """Estimator wrapper: ``fit(instance)`` solves, ``predict`` returns the share vector."""

    def __init__(self, max_rounds: int = 4):
        self.max_rounds = max_rounds

    def fit(self, instance: ProcessingInstance, y=None):
        self.plan_ = solve(instance, max_rounds=self.max_rounds)
        return self

    def predict(self, instance: ProcessingInstance | None = None) -> np.ndarray:
        if instance is not None:
            self.fit(instance)
        return self.plan_.x

    def score(self, instance: ProcessingInstance, y=None) -> float:
        """Negative energy, so larger is better."""
        return -solve(instance, max_rounds=self.max_rounds).predicted_energy
