"""Agile observation scheduling.

Selects and sequences candidate observation windows so as to maximise the
summed profit subject to attitude transition times, a per-satellite maneuver
energy budget and at-most-once imaging of each target. Three backends are
provided: an exact label-setting search, a first-in-first-out greedy rule and
a permutation genetic algorithm.
"""

from __future__ import annotations

import bisect
import csv
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .acquisition import (
    AgilitySpec,
    ObservationWindow,
    transition_time,
    transition_time_array,
    transition_time_for_angle,
)

logger = logging.getLogger(__name__)

MIN_TRANSITION = transition_time_for_angle(0.0)
PROFIT_TOL = 1e-9


class ExactSolverSizeError(RuntimeError):
    """The instance exceeds the exact solver's configured limits."""


# --- data types -------------------------------------------------------------------


@dataclass(frozen=True)
class SchedulingInstance:
    otws: tuple[ObservationWindow, ...]
    agility: AgilitySpec
    horizon: float
    t0: float = 0.0

    def __post_init__(self):
        ordered = tuple(
            sorted(self.otws, key=lambda o: (o.sat_id, o.timestamp, o.target_id, o.orbit, o.window_index))
        )
        object.__setattr__(self, "otws", ordered)
        for o in ordered:
            if not self.t0 - 1e-9 <= o.timestamp <= self.t0 + self.horizon + 1e-9:
                raise ValueError(f"observation window {o.key} lies outside the scheduling horizon")

    @property
    def satellites(self) -> tuple[int, ...]:
        return tuple(sorted({o.sat_id for o in self.otws}))

    @property
    def targets(self) -> tuple[int, ...]:
        return tuple(sorted({o.target_id for o in self.otws}))

    def by_satellite(self) -> dict[int, list[ObservationWindow]]:
        out: dict[int, list[ObservationWindow]] = {}
        for o in self.otws:
            out.setdefault(o.sat_id, []).append(o)
        return out

    def restricted_to(self, target_ids: Iterable[int]) -> "SchedulingInstance":
        keep = set(target_ids)
        return SchedulingInstance(
            tuple(o for o in self.otws if o.target_id in keep), self.agility, self.horizon, self.t0
        )


@dataclass(frozen=True)
class ObservationSchedule:
    """Per-satellite ordered selections plus derived totals."""

    sequences: dict[int, tuple[ObservationWindow, ...]]
    total_profit: float
    maneuver_energy_used: dict[int, float]
    solver: str = ""
    proven_optimal: bool = False
    stats: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_sequences(cls, sequences, agility: AgilitySpec, solver: str = "", **kw):
        seqs = {s: tuple(sorted(v, key=lambda o: o.timestamp)) for s, v in sequences.items() if v}
        energy = {
            s: sum(agility.p_man * transition_time(a, b) for a, b in zip(v, v[1:]))
            for s, v in seqs.items()
        }
        profit = sum(o.profit for v in seqs.values() for o in v)
        return cls(seqs, float(profit), energy, solver, **kw)

    @property
    def selected(self) -> list[ObservationWindow]:
        return [o for s in sorted(self.sequences) for o in self.sequences[s]]

    @property
    def successor_pairs(self) -> list[tuple[ObservationWindow, ObservationWindow]]:
        return [(a, b) for s in sorted(self.sequences) for a, b in zip(self.sequences[s], self.sequences[s][1:])]

    @property
    def transition_times(self) -> list[float]:
        return [transition_time(a, b) for a, b in self.successor_pairs]

    @property
    def observed_targets(self) -> set[int]:
        return {o.target_id for o in self.selected}

    @property
    def completion_time(self) -> float:
        sel = self.selected
        return max((o.timestamp for o in sel), default=0.0)

    @property
    def mean_gsd(self) -> float:
        sel = self.selected
        return float(np.mean([o.gsd for o in sel])) if sel else float("nan")

    def __len__(self):
        return sum(len(v) for v in self.sequences.values())


def empty_schedule(solver: str = "") -> ObservationSchedule:
    return ObservationSchedule({}, 0.0, {}, solver, proven_optimal=True)


def check_feasibility(instance: SchedulingInstance, schedule: ObservationSchedule) -> list[str]:
    """Return every violated constraint; an empty list means feasible."""
    problems = []
    known = {o.key: o for o in instance.otws}
    seen: dict[int, tuple] = {}
    ag = instance.agility
    for sat, seq in schedule.sequences.items():
        energy = 0.0
        for o in seq:
            if o.sat_id != sat:
                problems.append(f"window {o.key} filed under satellite {sat}")
            ref = known.get(o.key)
            if ref is None or abs(ref.timestamp - o.timestamp) > 1e-9:
                problems.append(f"window {o.key} is not a candidate of the instance")
            if o.target_id in seen:
                problems.append(f"target {o.target_id} imaged twice ({seen[o.target_id]} and {o.key})")
            seen[o.target_id] = o.key
        for a, b in zip(seq, seq[1:]):
            dt = transition_time(a, b)
            if not b.timestamp > a.timestamp:
                problems.append(f"satellite {sat}: {b.key} does not follow {a.key} in time")
            if b.timestamp + 1e-9 < a.timestamp + dt:
                problems.append(
                    f"satellite {sat}: transition {a.key}->{b.key} needs {dt:.3f} s, "
                    f"only {b.timestamp - a.timestamp:.3f} s available"
                )
            energy += ag.p_man * dt
        if energy > ag.e_max + 1e-9:
            problems.append(f"satellite {sat}: maneuver energy {energy:.3f} J exceeds {ag.e_max} J")
    return problems


# --- FIFO ------------------------------------------------------------------------------


def solve_fifo(instance: SchedulingInstance) -> ObservationSchedule:
    """Walk candidates in time order; keep each one that fits after the current tail."""
    ag = instance.agility
    order = sorted(instance.otws, key=lambda o: (o.timestamp, o.sat_id, o.target_id, o.orbit, o.window_index))
    tails: dict[int, ObservationWindow] = {}
    energy: dict[int, float] = {}
    chains: dict[int, list] = {}
    used: set[int] = set()
    for o in order:
        if o.target_id in used:
            continue
        last = tails.get(o.sat_id)
        if last is not None:
            dt = transition_time(last, o)
            if o.timestamp < last.timestamp + dt - 1e-9:
                continue
            cost = ag.p_man * dt
            if energy[o.sat_id] + cost > ag.e_max + 1e-9:
                continue
            energy[o.sat_id] += cost
        else:
            energy[o.sat_id] = 0.0
        tails[o.sat_id] = o
        chains.setdefault(o.sat_id, []).append(o)
        used.add(o.target_id)
    return ObservationSchedule.from_sequences(chains, ag, "fifo")


# --- exact label-setting search ----------------------------------------------------


@dataclass
class _LabelStore:
    """Append-only label arrays; a label is one feasible partial schedule."""

    n_words: int
    capacity: int = 1024

    def __post_init__(self):
        self.profit = np.zeros(self.capacity)
        self.energy = np.zeros(self.capacity)
        self.node = np.zeros(self.capacity, dtype=np.int64)
        self.parent = np.zeros(self.capacity, dtype=np.int64)
        self.visited = np.zeros((self.capacity, self.n_words), dtype=np.uint64)
        self.alive = np.zeros(self.capacity, dtype=bool)
        self.size = 0

    def _grow(self, need):
        cap = self.capacity
        while cap < need:
            cap *= 2
        if cap == self.capacity:
            return
        for name in ("profit", "energy", "node", "parent", "alive"):
            arr = getattr(self, name)
            new = np.zeros(cap, dtype=arr.dtype)
            new[: self.size] = arr[: self.size]
            setattr(self, name, new)
        v = np.zeros((cap, self.n_words), dtype=np.uint64)
        v[: self.size] = self.visited[: self.size]
        self.visited = v
        self.capacity = cap

    def extend(self, profit, energy, node, parent, visited) -> np.ndarray:
        k = len(profit)
        self._grow(self.size + k)
        sl = slice(self.size, self.size + k)
        self.profit[sl] = profit
        self.energy[sl] = energy
        self.node[sl] = node
        self.parent[sl] = parent
        self.visited[sl] = visited
        self.alive[sl] = True
        self.size += k
        return np.arange(sl.start, sl.stop)


def _pareto_filter(profit, energy, visited):
    """Indices of labels not dominated by another (more profit, less energy, visited subset)."""
    k = len(profit)
    if k <= 1:
        return np.arange(k)
    # exact duplicates of the visited set: plain two-criteria front per group
    _, group = np.unique(visited, axis=0, return_inverse=True)
    group = group.reshape(-1)
    order = np.lexsort((energy, -profit, group))
    g_sorted = group[order]
    shifted = energy[order] - g_sorted * 1e7
    running = np.minimum.accumulate(shifted)
    prev = np.concatenate([[np.inf], running[:-1]])
    new_group = np.concatenate([[True], g_sorted[1:] != g_sorted[:-1]])
    front = order[new_group | (shifted < prev - 1e-9)]
    if len(front) <= 1 or len(np.unique(group[front])) == 1:
        return np.sort(front)
    # cross-group dominance through strict visited subsets
    p, e, v = profit[front], energy[front], visited[front]
    dominated = np.zeros(len(front), dtype=bool)
    chunk = max(1, 4_000_000 // (len(front) * v.shape[1] + 1))
    for s0 in range(0, len(front), chunk):
        sl = slice(s0, s0 + chunk)
        better = (p[None, :] >= p[sl, None] - PROFIT_TOL) & (e[None, :] <= e[sl, None] + 1e-9)
        subset = ((v[None, :, :] & ~v[sl, None, :]) == 0).all(axis=2)
        same = (v[None, :, :] == v[sl, None, :]).all(axis=2)
        dominated[sl] = (better & subset & ~same).any(axis=1)
    return np.sort(front[~dominated])


def solve_exact(
    instance: SchedulingInstance,
    *,
    max_targets: int = 15,
    max_otws: int = 200,
    max_labels: int = 4_000_000,
    incumbent: ObservationSchedule | None = None,
) -> ObservationSchedule:
    """Provably optimal schedule via label setting with dominance and bounding.

    Candidates of each satellite are processed in time order and satellites
    are chained one after another, so every label is a feasible partial
    schedule. Labels are discarded when dominated (no more profit, no less
    energy, superset of still-relevant visited targets at the same window)
    or when an optimistic completion bound cannot reach the incumbent.
    ``incumbent`` only tightens pruning; it never replaces the search result.
    Raises :class:`ExactSolverSizeError` when limits are exceeded.
    """
    return _label_search(
        instance, max_targets=max_targets, max_otws=max_otws, max_labels=max_labels, incumbent=incumbent
    )


def solve_beam(instance: SchedulingInstance, width: int = 30) -> ObservationSchedule:
    """Label search that keeps only the ``width`` most promising labels per window.

    Same search order and dominance rules as :func:`solve_exact`, ranked by
    profit plus the optimistic completion bound. Scales to instances the exact
    search cannot finish, without an optimality certificate.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    return _label_search(instance, beam=width, max_targets=10**9, max_otws=10**9, max_labels=10**12)


def _label_search(
    instance: SchedulingInstance,
    *,
    beam: int = 0,
    max_targets: int,
    max_otws: int,
    max_labels: int,
    incumbent: ObservationSchedule | None = None,
) -> ObservationSchedule:
    name = "beam" if beam else "exact"
    otws = list(instance.otws)
    n = len(otws)
    if n == 0:
        return empty_schedule(name)
    if n > max_otws:
        raise ExactSolverSizeError(f"{n} candidate windows exceed the exact-solver cap of {max_otws}")
    ag = instance.agility
    tgt_ids = sorted({o.target_id for o in otws})
    if len(tgt_ids) > max_targets:
        raise ExactSolverSizeError(f"{len(tgt_ids)} targets exceed the exact-solver cap of {max_targets}")
    tindex = {t: i for i, t in enumerate(tgt_ids)}
    n_t = len(tgt_ids)
    n_words = (n_t + 63) // 64
    tgt = np.array([tindex[o.target_id] for o in otws])
    sat = np.array([o.sat_id for o in otws])
    tau = np.array([o.timestamp for o in otws])
    sigma = np.array([o.profit for o in otws])
    att = np.array([[o.roll, o.pitch, o.yaw] for o in otws])
    bit_word = tgt // 64
    bit_val = np.left_shift(np.uint64(1), (tgt % 64).astype(np.uint64))

    # visited targets only matter while they still have candidates ahead
    relevant = np.zeros((n, n_words), dtype=np.uint64)
    acc = np.zeros(n_words, dtype=np.uint64)
    for j in range(n - 1, -1, -1):
        relevant[j] = acc
        acc[bit_word[j]] |= bit_val[j]

    # per-target best profit among candidates strictly after j, sorted descending
    best_after = np.zeros((n + 1, n_t))
    for j in range(n - 1, -1, -1):
        best_after[j] = best_after[j + 1]
        best_after[j, tgt[j]] = max(best_after[j, tgt[j]], sigma[j])
    prefix_best = np.zeros((n + 1, n_t + 1))
    prefix_best[:, 1:] = np.cumsum(-np.sort(-best_after, axis=1), axis=1)

    sats = sorted(set(sat.tolist()))
    first = {s: int(np.flatnonzero(sat == s)[0]) for s in sats}
    last = {s: int(np.flatnonzero(sat == s)[-1]) for s in sats}
    e_unit = ag.p_man * MIN_TRANSITION

    def bound(j: int, e_used: np.ndarray) -> np.ndarray:
        if last[sat[j]] < n - 1:
            # later satellites may still collect anything that remains
            return np.full(len(e_used), prefix_best[j + 1, n_t])
        m_energy = np.floor((ag.e_max - e_used) / e_unit + 1e-9).astype(np.int64)
        m_time = int(np.floor((tau[n - 1] - tau[j]) / MIN_TRANSITION + 1e-9))
        return prefix_best[j + 1, np.clip(np.minimum(m_energy, m_time), 0, n_t)]

    store = _LabelStore(n_words)
    store.extend([0.0], [0.0], [-1], [-1], np.zeros((1, n_words), dtype=np.uint64))
    best_profit, best_label = 0.0, 0
    hint = incumbent.total_profit if incumbent is not None else 0.0
    n_created = 1

    for s in sats:
        lo, hi = first[s], last[s]
        if s != sats[0]:
            # every surviving label becomes a root for this satellite with a fresh budget
            alive = np.flatnonzero(store.alive[: store.size])
            vis = store.visited[alive] & relevant[lo - 1]
            if beam:
                top = np.argsort(-store.profit[alive], kind="stable")[: 4 * beam]
                alive, vis = alive[top], vis[top]
            keep = _pareto_filter(store.profit[alive], np.zeros(len(alive)), vis)
            chosen = alive[keep]
            store.alive[: store.size] = False
            store.extend(store.profit[chosen], np.zeros(len(chosen)), np.full(len(chosen), -1), chosen, vis[keep])
        idx = np.arange(lo, hi + 1)
        delta = transition_time_array(np.abs(att[idx][:, None, :] - att[idx][None, :, :]).sum(axis=2))
        feasible = tau[idx][None, :] >= tau[idx][:, None] + delta - 1e-9
        cost = ag.p_man * delta
        for jj, j in enumerate(idx):
            threshold = max(best_profit, hint) - PROFIT_TOL
            alive = np.flatnonzero(store.alive[: store.size])
            local = store.node[alive] - lo
            is_root = local < 0
            ok = is_root.copy()
            step_cost = np.zeros(len(alive))
            prev = ~is_root & (local < jj)
            ok[prev] = feasible[local[prev], jj]
            step_cost[prev] = cost[local[prev], jj]
            cand = alive[ok]
            if len(cand) == 0:
                continue
            e_new = store.energy[cand] + step_cost[ok]
            keep = ((store.visited[cand, bit_word[j]] & bit_val[j]) == 0) & (e_new <= ag.e_max + 1e-9)
            cand, e_new = cand[keep], e_new[keep]
            if len(cand) == 0:
                continue
            p_new = store.profit[cand] + sigma[j]
            promising = p_new + bound(j, e_new) >= threshold
            cand, e_new, p_new = cand[promising], e_new[promising], p_new[promising]
            if len(cand) == 0:
                continue
            if beam:
                # rank before the quadratic dominance filter; only the head can survive
                top = np.argsort(-(p_new + bound(j, e_new)), kind="stable")[: 4 * beam]
                cand, e_new, p_new = cand[top], e_new[top], p_new[top]
            vis = store.visited[cand]
            vis[:, bit_word[j]] |= bit_val[j]
            vis &= relevant[j]
            keep = _pareto_filter(p_new, e_new, vis)
            if beam:
                score = p_new[keep] + bound(j, e_new[keep])
                keep = keep[np.argsort(-score, kind="stable")[:beam]]
            new_ids = store.extend(p_new[keep], e_new[keep], np.full(len(keep), j), cand[keep], vis[keep])
            n_created += len(keep)
            top = int(np.argmax(p_new[keep]))
            if p_new[keep][top] > best_profit + PROFIT_TOL:
                best_profit, best_label = float(p_new[keep][top]), int(new_ids[top])
            if n_created > max_labels:
                raise ExactSolverSizeError(f"label limit {max_labels} exceeded")
            if jj % 16 == 15:
                _prune(store, bound, max(best_profit, hint) - PROFIT_TOL)
            if jj % 200 == 0:
                logger.debug("window %d/%d: %d labels created, %d alive, best %.4f",
                             j, n, n_created, int(store.alive[: store.size].sum()), best_profit)

    chosen = _best_by_tiebreak(store, best_profit, otws)
    chain = []
    lab = chosen
    while lab >= 0:
        node = int(store.node[lab])
        if node >= 0:
            chain.append(otws[node])
        lab = int(store.parent[lab])
    seqs: dict[int, list] = {}
    for o in reversed(chain):
        seqs.setdefault(o.sat_id, []).append(o)
    result = ObservationSchedule.from_sequences(
        seqs, ag, name, proven_optimal=not beam, stats={"labels": n_created, "beam": beam}
    )
    logger.debug("%s search created %d labels, profit %.6f", name, n_created, result.total_profit)
    return result


def lagrangian_upper_bound(
    instance: SchedulingInstance,
    *,
    lower_bound: float | None = None,
    iterations: int = 300,
    step_scale: float = 0.5,
) -> float:
    """Upper bound on the optimal profit from a Lagrangian dual.

    Target uniqueness and the maneuver budgets are priced out, leaving one
    longest-path problem per satellite on the time-feasibility DAG. Multipliers
    follow projected subgradient steps of Polyak size toward ``lower_bound``
    (FIFO profit when omitted). Any iterate is a valid bound; the best is returned.
    """
    otws = list(instance.otws)
    if not otws:
        return 0.0
    ag = instance.agility
    tgt_ids = sorted({o.target_id for o in otws})
    tindex = {t: i for i, t in enumerate(tgt_ids)}
    tgt = np.array([tindex[o.target_id] for o in otws])
    sat = np.array([o.sat_id for o in otws])
    sigma = np.array([o.profit for o in otws])
    tau = np.array([o.timestamp for o in otws])
    att = np.array([[o.roll, o.pitch, o.yaw] for o in otws])
    sats = sorted(set(sat.tolist()))
    blocks = []
    for s in sats:
        idx = np.flatnonzero(sat == s)
        delta = transition_time_array(np.abs(att[idx][:, None, :] - att[idx][None, :, :]).sum(axis=2))
        feasible = tau[idx][None, :] >= tau[idx][:, None] + delta - 1e-9
        blocks.append((idx, ag.p_man * delta, feasible))
    if lower_bound is None:
        lower_bound = solve_fifo(instance).total_profit

    def longest(idx, cost, feasible, weight, lam):
        # best path value ending at each node; arcs are forward in time only
        value = np.empty(len(idx))
        parent = np.full(len(idx), -1)
        for j in range(len(idx)):
            value[j] = weight[j]
            if j:
                ext = np.where(feasible[:j, j], value[:j] - lam * cost[:j, j], -np.inf)
                i = int(np.argmax(ext))
                if ext[i] > 0:
                    value[j] += ext[i]
                    parent[j] = i
        j = int(np.argmax(value))
        if value[j] <= 0:
            return 0.0, []
        path = []
        while j >= 0:
            path.append(j)
            j = int(parent[j])
        return float(value.max()), path[::-1]

    # the energy subgradient is expressed in profit-like units so one step size serves both
    scale = max(ag.e_max, 1e-9) / max(lower_bound, 1.0)
    lam = np.full(len(sats), 1.0 / scale)
    mu = np.zeros(len(tgt_ids))
    best = np.inf
    theta = step_scale
    for it in range(iterations):
        weight = sigma - mu[tgt]
        dual = float(mu.sum())
        count = np.zeros(len(tgt_ids))
        g_lam = np.zeros(len(sats))
        for k, (idx, cost, feasible) in enumerate(blocks):
            val, path = longest(idx, cost, feasible, weight[idx], lam[k])
            dual += val + lam[k] * ag.e_max
            used = float(sum(cost[a, b] for a, b in zip(path, path[1:])))
            g_lam[k] = (ag.e_max - used) / scale
            np.add.at(count, tgt[idx[path]], 1)
        best = min(best, dual)
        g_mu = 1.0 - count
        g_mu[(mu <= 0) & (g_mu > 0)] = 0.0
        g_lam[(lam <= 0) & (g_lam > 0)] = 0.0
        norm = float(g_lam @ g_lam + g_mu @ g_mu)
        if norm == 0.0:
            break
        step = theta * max(dual - lower_bound, 1e-6) / norm
        lam = np.maximum(0.0, lam - step * g_lam / scale)
        mu = np.maximum(0.0, mu - step * g_mu)
        if it % 50 == 49:
            theta *= 0.6
    logger.debug("lagrangian bound %.6f after %d iterations", best, it + 1)
    return float(best)


def _prune(store: _LabelStore, bound, threshold: float) -> None:
    alive = np.flatnonzero(store.alive[: store.size])
    nodes = store.node[alive]
    real = nodes >= 0
    alive, nodes = alive[real], nodes[real]
    if len(alive) == 0:
        return
    order = np.argsort(nodes, kind="stable")
    alive, nodes = alive[order], nodes[order]
    splits = np.flatnonzero(np.diff(nodes)) + 1
    for grp in np.split(np.arange(len(alive)), splits):
        labs = alive[grp]
        ub = store.profit[labs] + bound(int(nodes[grp[0]]), store.energy[labs])
        store.alive[labs[ub < threshold]] = False


def _best_by_tiebreak(store: _LabelStore, best_profit: float, otws) -> int:
    """Among labels at the best profit, prefer earlier completion then smaller window keys."""
    size = store.size
    cands = np.flatnonzero(np.abs(store.profit[:size] - best_profit) <= 1e-7)
    if len(cands) == 0:
        return int(np.argmax(store.profit[:size]))

    def keyseq(lab):
        keys = []
        while lab >= 0:
            node = int(store.node[lab])
            if node >= 0:
                keys.append(otws[node])
            lab = int(store.parent[lab])
        keys.reverse()
        done = max((o.timestamp for o in keys), default=0.0)
        return (done, [o.key for o in keys])

    return int(min(cands, key=lambda c: keyseq(int(c))))


# --- genetic algorithm ------------------------------------------------------------------


class _Decoder:
    """Greedy insertion of targets into time-ordered per-satellite chains."""

    def __init__(self, instance: SchedulingInstance, fallback: int = 3):
        self.ag = instance.agility
        self.targets = list(instance.targets)
        self.options: list[list[ObservationWindow]] = []
        by_t: dict[int, list] = {}
        for o in instance.otws:
            by_t.setdefault(o.target_id, []).append(o)
        for t in self.targets:
            opts = sorted(by_t[t], key=lambda o: (o.sat_id, o.timestamp))
            self.options.append(opts)
        self.ranked = [
            sorted(range(len(opts)), key=lambda k: (-opts[k].profit, opts[k].timestamp))[:fallback]
            for opts in self.options
        ]
        self.best_gene = [r[0] for r in self.ranked]

    def decode(self, perm, genes):
        ag = self.ag
        e_max = ag.e_max + 1e-9
        p_man = ag.p_man
        times: dict[int, list[float]] = {}
        chains: dict[int, list[ObservationWindow]] = {}
        energy: dict[int, float] = {}
        profit = 0.0
        for ti in perm:
            opts = self.options[ti]
            g = genes[ti]
            tried = (g,) + tuple(k for k in self.ranked[ti] if k != g)
            for k in tried:
                o = opts[k]
                s = o.sat_id
                ts = times.setdefault(s, [])
                ch = chains.setdefault(s, [])
                pos = bisect.bisect_left(ts, o.timestamp)
                e_old = 0.0
                add = 0.0
                if pos > 0:
                    prev = ch[pos - 1]
                    d = transition_time(prev, o)
                    if o.timestamp < prev.timestamp + d - 1e-9:
                        continue
                    add += p_man * d
                if pos < len(ch):
                    nxt = ch[pos]
                    if nxt.timestamp == o.timestamp:
                        continue
                    d = transition_time(o, nxt)
                    if nxt.timestamp < o.timestamp + d - 1e-9:
                        continue
                    add += p_man * d
                    if pos > 0:
                        e_old = p_man * transition_time(ch[pos - 1], nxt)
                e_now = energy.get(s, 0.0)
                if e_now + add - e_old > e_max:
                    continue
                energy[s] = e_now + add - e_old
                ts.insert(pos, o.timestamp)
                ch.insert(pos, o)
                profit += o.profit
                break
        return profit, chains


def solve_ga(
    instance: SchedulingInstance,
    pop: int = 20,
    generations: int = 100,
    p_cross: float = 0.2,
    p_mut: float = 0.2,
    seed: int | None = 0,
    *,
    tournament: int = 2,
    elite: int = 1,
) -> ObservationSchedule:
    """Permutation-plus-window-gene genetic algorithm with feasibility-preserving decoding."""
    if not instance.otws:
        return empty_schedule("ga")
    rng = random.Random(seed)
    dec = _Decoder(instance)
    n_t = len(dec.targets)
    n_opts = [len(o) for o in dec.options]
    cache: dict[tuple, float] = {}

    def fitness(ind):
        key = (ind[0], ind[1])
        f = cache.get(key)
        if f is None:
            f = dec.decode(ind[0], ind[1])[0]
            cache[key] = f
        return f

    def random_individual(greedy_genes):
        perm = list(range(n_t))
        rng.shuffle(perm)
        if greedy_genes:
            genes = tuple(dec.best_gene)
        else:
            genes = tuple(rng.randrange(k) for k in n_opts)
        return (tuple(perm), genes)

    population = [random_individual(i < pop // 2) for i in range(pop)]
    scores = [fitness(ind) for ind in population]

    def select():
        best = None
        for _ in range(tournament):
            i = rng.randrange(pop)
            if best is None or scores[i] > scores[best]:
                best = i
        return population[best]

    for _ in range(generations):
        ranked = sorted(range(pop), key=lambda i: -scores[i])
        nxt = [population[i] for i in ranked[:elite]]
        while len(nxt) < pop:
            a, b = select(), select()
            if rng.random() < p_cross and n_t > 1:
                cut = rng.randrange(1, n_t)
                head = a[0][:cut]
                seen = set(head)
                perm = head + tuple(t for t in b[0] if t not in seen)
                gcut = rng.randrange(1, n_t)
                genes = a[1][:gcut] + b[1][gcut:]
                child = (perm, genes)
            else:
                child = a
            if rng.random() < p_mut:
                perm = list(child[0])
                genes = list(child[1])
                i, j = rng.randrange(n_t), rng.randrange(n_t)
                perm[i], perm[j] = perm[j], perm[i]
                k = rng.randrange(n_t)
                genes[k] = rng.randrange(n_opts[k])
                child = (tuple(perm), tuple(genes))
            nxt.append(child)
        population = nxt
        scores = [fitness(ind) for ind in population]
    best = max(range(pop), key=lambda i: scores[i])
    _, chains = dec.decode(*population[best])
    return ObservationSchedule.from_sequences(chains, instance.agility, "ga", stats={"evaluations": len(cache)})


# --- solver facade -------------------------------------------------------------------------


FALLBACKS = ("ga", "beam", "none")


def solve(
    instance: SchedulingInstance,
    method: str = "exact",
    *,
    seed: int | None = 0,
    fallback: str = "ga",
    ga_kw: dict | None = None,
    beam_width: int = 10,
    **kw,
) -> ObservationSchedule:
    """Dispatch to a backend.

    When the exact search refuses an instance for size, ``fallback`` picks the
    replacement: the genetic algorithm, the beam search, or ``"none"`` to re-raise.
    Extra keywords go to the exact search (caps) or to the GA.
    """
    ga_kw = dict(ga_kw or {})
    if method == "fifo":
        return solve_fifo(instance)
    if method == "ga":
        return solve_ga(instance, seed=seed, **{**ga_kw, **kw})
    if method == "beam":
        return solve_beam(instance, kw.get("width", beam_width))
    if method != "exact":
        raise ValueError(f"unknown solver {method!r}")
    if fallback not in FALLBACKS:
        raise ValueError(f"unknown fallback {fallback!r}")
    try:
        return solve_exact(instance, **kw)
    except ExactSolverSizeError as exc:
        if fallback == "none":
            raise
        logger.info("exact solver declined (%s); falling back to %s", exc, fallback)
        if fallback == "beam":
            return solve_beam(instance, beam_width)
        return solve_ga(instance, seed=seed, **ga_kw)


class ObservationScheduler(BaseEstimator):
    """Estimator-style wrapper: ``fit`` solves an instance, ``predict`` returns the schedule.

    ``transform`` maps an instance to the selected observation windows.
    """

    def __init__(self, method: str = "exact", pop: int = 20, generations: int = 100,
                 p_cross: float = 0.2, p_mut: float = 0.2, seed: int | None = 0,
                 max_targets: int = 15, max_otws: int = 200, max_labels: int = 4_000_000,
                 fallback: str = "ga", beam_width: int = 10):
        self.method = method
        self.pop = pop
        self.generations = generations
        self.p_cross = p_cross
        self.p_mut = p_mut
        self.seed = seed
        self.max_targets = max_targets
        self.max_otws = max_otws
        self.max_labels = max_labels
        self.fallback = fallback
        self.beam_width = beam_width

    def _solve(self, instance):
        ga_kw = dict(pop=self.pop, generations=self.generations, p_cross=self.p_cross, p_mut=self.p_mut)
        if self.method == "ga":
            return solve_ga(instance, seed=self.seed, **ga_kw)
        caps = dict(max_targets=self.max_targets, max_otws=self.max_otws, max_labels=self.max_labels)
        return solve(instance, self.method, seed=self.seed, fallback=self.fallback, ga_kw=ga_kw,
                     beam_width=self.beam_width, **(caps if self.method == "exact" else {}))

    def fit(self, instance: SchedulingInstance, y=None):
        if not isinstance(instance, SchedulingInstance):
            raise TypeError("fit expects a SchedulingInstance")
        self.schedule_ = self._solve(instance)
        self.profit_ = self.schedule_.total_profit
        return self

    def predict(self, instance: SchedulingInstance | None = None) -> ObservationSchedule:
        if instance is not None:
            return self._solve(instance)
        check_is_fitted(self, "schedule_")
        return self.schedule_

    def transform(self, instance: SchedulingInstance) -> list[ObservationWindow]:
        return self.predict(instance).selected

    def score(self, instance: SchedulingInstance, y=None) -> float:
        return self.predict(instance).total_profit


# --- multi-horizon rescheduling --------------------------------------------------------------


@dataclass
class RescheduleReport:
    schedules: list[ObservationSchedule]
    attempts: dict[int, int]
    acquired: set[int]
    first_attempt_failed: set[int]
    n_targets: int
    executed: list[ObservationWindow] = field(default_factory=list)

    @property
    def attempts_per_target(self) -> float:
        tried = [a for a in self.attempts.values() if a > 0]
        return float(np.mean(tried)) if tried else 0.0

    @property
    def rescheduled_fraction(self) -> float:
        return len(self.first_attempt_failed) / self.n_targets if self.n_targets else 0.0

    @property
    def success_fraction(self) -> float:
        return len(self.acquired) / self.n_targets if self.n_targets else 0.0

    def summary(self) -> dict:
        return {
            "n_targets": self.n_targets,
            "attempts_per_target": self.attempts_per_target,
            "rescheduled_fraction": self.rescheduled_fraction,
            "success_fraction": self.success_fraction,
            "observations": len(self.executed),
        }


def reschedule_across_sth(
    instances: Sequence[SchedulingInstance],
    turbulence,
    *,
    method: str = "exact",
    seed: int | None = 0,
    n_targets: int | None = None,
    solver_kw: dict | None = None,
) -> RescheduleReport:
    """Solve horizon after horizon, dropping targets once an acquisition passes the gate.

    Targets whose acquisition is rejected by ``turbulence.gate_observation``
    stay in the pool for later horizons. Each executed acquisition draws one
    turbulence value from ``turbulence``.
    """
    solver_kw = dict(solver_kw or {})
    all_targets = {o.target_id for inst in instances for o in inst.otws}
    n_targets = n_targets if n_targets is not None else len(all_targets)
    pending = set(all_targets)
    attempts = {t: 0 for t in all_targets}
    acquired: set[int] = set()
    first_failed: set[int] = set()
    schedules, executed = [], []
    for k, inst in enumerate(instances):
        sub = inst.restricted_to(pending)
        sched = solve(sub, method, seed=None if seed is None else seed + k, **solver_kw)
        schedules.append(sched)
        for o in sched.selected:
            cn2 = float(turbulence.sample_cn2(1)[0])
            executed.append(o.with_cn2(cn2))
            attempts[o.target_id] += 1
            if turbulence.gate_observation(cn2):
                acquired.add(o.target_id)
                pending.discard(o.target_id)
            elif attempts[o.target_id] == 1:
                first_failed.add(o.target_id)
    return RescheduleReport(schedules, attempts, acquired, first_failed, n_targets, executed)


# --- import / export ---------------------------------------------------------------------------


def instance_to_dict(instance: SchedulingInstance) -> dict:
    return {
        "horizon": instance.horizon,
        "t0": instance.t0,
        "agility": asdict(instance.agility),
        "otws": [asdict(o) for o in instance.otws],
    }


def instance_from_dict(data: dict) -> SchedulingInstance:
    return SchedulingInstance(
        tuple(ObservationWindow(**o) for o in data["otws"]),
        AgilitySpec(**data["agility"]),
        float(data["horizon"]),
        float(data.get("t0", 0.0)),
    )


def save_instance(instance: SchedulingInstance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(instance), fh, indent=1)


def load_instance(path) -> SchedulingInstance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


SCHEDULE_COLUMNS = ["sat_id", "position", "target_id", "orbit", "window_index", "timestamp",
                    "roll", "pitch", "yaw", "profit", "gsd", "transition_s", "maneuver_energy_j"]


def schedule_rows(schedule: ObservationSchedule, agility: AgilitySpec) -> list[dict]:
    rows = []
    for s in sorted(schedule.sequences):
        seq = schedule.sequences[s]
        for k, o in enumerate(seq):
            dt = transition_time(seq[k - 1], o) if k else 0.0
            rows.append({
                "sat_id": s, "position": k, "target_id": o.target_id, "orbit": o.orbit,
                "window_index": o.window_index, "timestamp": round(o.timestamp, 6),
                "roll": round(o.roll, 6), "pitch": round(o.pitch, 6), "yaw": round(o.yaw, 6),
                "profit": round(o.profit, 9), "gsd": round(o.gsd, 9),
                "transition_s": round(dt, 6), "maneuver_energy_j": round(agility.p_man * dt, 6),
            })
    return rows


def save_schedule(schedule: ObservationSchedule, agility: AgilitySpec, json_path=None, csv_path=None) -> None:
    rows = schedule_rows(schedule, agility)
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump({
                "solver": schedule.solver,
                "total_profit": round(schedule.total_profit, 9),
                "maneuver_energy_used": {str(k): round(v, 6) for k, v in sorted(schedule.maneuver_energy_used.items())},
                "observations": rows,
            }, fh, indent=1)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SCHEDULE_COLUMNS)
            w.writeheader()
            w.writerows(rows)
