"""Command line: ``leoedge VERB [--scenario PATH] [--seed N] [--out DIR] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import experiments as ex
from . import pipeline as pl
from .obs_scheduler import ExactSolverSizeError
from .proc_scheduler import InfeasibleAllocationError
from .scenario import ScenarioError, bundled_scenario_path, load_scenario, scenario_from_dict

logger = logging.getLogger("leoedge")

VERBS = ("validate", "observe", "turbulence-mc", "capacity", "pipeline", "sweep")


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), indent=1, sort_keys=True) + "\n")


def write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    pl.write_csv(path, columns, [[pl.format_cell(_clean(r[c])) for c in columns] for r in rows])


def _scenario(args):
    path = Path(args.scenario) if args.scenario else bundled_scenario_path()
    sc = load_scenario(path)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "solver", None):
        overrides.setdefault("solver", {})["method"] = args.solver
    if getattr(args, "replicas", None) is not None:
        overrides.setdefault("pipeline", {})["replicas"] = args.replicas
    if overrides:
        data = sc.to_dict()
        for k, v in overrides.items():
            if isinstance(v, dict):
                data[k].update(v)
            else:
                data[k] = v
        sc = scenario_from_dict(data, sc.source)
    return sc


def _outdir(args, sc) -> Path:
    out = Path(args.out) if args.out else Path(sc.data["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args) -> int:
    sc = _scenario(args)
    print(f"{sc.name}: valid")
    return 0


def cmd_observe(args) -> int:
    sc = _scenario(args)
    out = _outdir(args, sc)
    rows = ex.observe(sc)
    write_rows(out / "observe.csv", ex.OBSERVE_COLUMNS, rows)
    write_json(out / "observe.json", {"scenario": sc.name, "seed": sc.seed, "rows": rows})
    for r in rows:
        print(f"{r['n_targets']:4d} {r['solver']:6s} profit {r['profit']:.4f} observed {r['targets_observed']}")
    return 0


def cmd_turbulence(args) -> int:
    sc = _scenario(args)
    out = _outdir(args, sc)
    gating, rows, resched = ex.turbulence_mc(sc)
    write_rows(out / "turbulence.csv", ex.TURBULENCE_COLUMNS, gating.rows)
    write_rows(out / "rescheduling.csv", ex.RESCHEDULE_COLUMNS, rows)
    summary = {"scenario": sc.name, "seed": sc.seed, "gating": gating.summary(), "rescheduling": resched}
    write_json(out / "turbulence.json", summary)
    g = gating.summary()
    print(f"precision {g['precision']:.4f} vs CDF {g['cdf_at_threshold']:.4f} "
          f"(inside 99% interval: {g['within_interval']}); profit divergence {g['profit_divergence']:.3f}")
    r = resched
    print(f"attempts/target {r['attempts_per_target']:.3f}, rescheduled {r['rescheduled_fraction']:.3f}")
    return 0


def cmd_capacity(args) -> int:
    sc = _scenario(args)
    out = _outdir(args, sc)
    rows = ex.capacity(sc)
    write_rows(out / "capacity.csv", ex.CAPACITY_COLUMNS, rows)
    write_json(out / "capacity.json", {"scenario": sc.name, "rows": rows})
    for r in rows:
        print(f"{r['configuration']:12s} {r['edge_platform'] or r['ground_platform']:10s} {r['max_fps']:8.2f} FPS")
    return 0


def cmd_pipeline(args) -> int:
    sc = _scenario(args)
    out = _outdir(args, sc)
    res, caps = ex.pipeline_episode(sc)
    pl.write_csv(out / "slots.csv", pl.SLOT_COLUMNS, pl.slot_rows(res))
    pl.write_csv(out / "observations.csv", pl.BATCH_COLUMNS, pl.batch_rows(res, caps))
    write_json(out / "pipeline.json", {"scenario": sc.name, "seed": sc.seed, "metrics": res.metrics()})
    m = res.metrics()
    print(f"mean power {m['mean_power_w']:.3f} W, max quantile deviation {m['max_quantile_deviation']:.4f}, "
          f"delivery {m['delivery_ratio']:.3f}, dropped {m['n_dropped']}")
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    out = _outdir(args, sc)
    rows = ex.sweep(sc)
    write_rows(out / "sweep.csv", pl.SWEEP_COLUMNS, rows)
    write_json(out / "sweep.json", {"scenario": sc.name, "seed": sc.seed, "rows": rows})
    for r in rows:
        print(f"{r['platform']:8s} T={r['t_slot_s']:5.1f} s feasible={r['feasible']} power={r['mean_power_w']:.3f} W")
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "observe": cmd_observe,
    "turbulence-mc": cmd_turbulence,
    "capacity": cmd_capacity,
    "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leoedge", description="Observation scheduling and edge-processing experiments")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--scenario", help="scenario YAML or JSON (default: bundled baseline)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", help="output directory (default: scenario output_dir)")
        p.add_argument("--solver", choices=("exact", "ga", "fifo"), help="observation scheduler")
        p.add_argument("--replicas", type=int, help="Monte Carlo replicas for the pipeline")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ScenarioError as exc:
        print("scenario is invalid:", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {e}", file=sys.stderr)
        return 2
    except (InfeasibleAllocationError, ExactSolverSizeError) as exc:
        report = {"verb": args.verb, "error": type(exc).__name__, "message": str(exc),
                  "violated": getattr(exc, "violated", [])}
        print(json.dumps(report, indent=1, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
