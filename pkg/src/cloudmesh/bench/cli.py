"""``cloudmesh`` command line: benchmark sweeps, demos and the acceptance report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from cloudmesh.bench import acceptance, workloads
from cloudmesh.bench.experiments import (
    BenchResult,
    control_bench,
    data_bench,
    isolation_fuzz,
    migrate_demo,
    setup_bench,
    snapshot_check,
)
from cloudmesh.bench.output import render_csv, render_json, sidecar, write_text
from cloudmesh.bench.spec import BenchSpec, Experiment, validate_spec
from cloudmesh.errors import CloudMeshError, InvalidScenario, InvalidSpec
from cloudmesh.fabric import CostModel
from cloudmesh.migration.protocol import MigrationStep
from cloudmesh.sim.engine import Constants, effective_tick_limit
from cloudmesh.sim.scenario import scenario_from_dict

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

FAULT_PHASES = {step.name.lower().replace("_", "-"): step for step in MigrationStep}


def int_list(text: str) -> tuple[int, ...]:
    """``"2-32"``, ``"10,100,1000"`` or a mix such as ``"2-4,8"``."""
    out: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers or ranges, got {text!r}") from None
    return tuple(out)


def _common(p: argparse.ArgumentParser, *, fabric: bool = False, scenario: bool = False) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", metavar="PATH", help="CSV output path; a .json summary is written next to it")
    if fabric:
        p.add_argument("--fabric", choices=("mst", "mesh"), help="tunnel fabric")
    if scenario:
        p.add_argument("--scenario", metavar="PATH", help="scenario JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudmesh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("setup-bench", help="tunnel count and setup cost against the number of clouds")
    _common(p, fabric=True)
    p.add_argument("--clouds", type=int_list, default=None, help="cloud counts, e.g. 2-32")
    p.add_argument("--tunnel-cost-fixed", type=int, default=5)
    p.add_argument("--tunnel-cost-per-weight", type=int, default=1)

    p = sub.add_parser("control-bench", help="hypervisor steps per packet-in against the number of networks")
    _common(p)
    p.add_argument("--networks", type=int_list, default=None, help="virtual network counts, e.g. 10,100,1000")
    p.add_argument("--repetitions", type=int, default=1, help="thousands of requests per point")

    p = sub.add_parser("data-bench", help="latency and throughput, virtualized against raw")
    _common(p, fabric=True)

    p = sub.add_parser("migrate-demo", help="migrate a VM under continuous ping")
    _common(p, fabric=True, scenario=True)
    p.add_argument("--fault", choices=sorted(FAULT_PHASES), help="make the target unresponsive in this phase")
    p.add_argument("--no-serialize", action="store_true", help="skip update serialization (negative control)")

    p = sub.add_parser("snapshot-check", help="snapshot round trip on fuzzed switches")
    _common(p)
    p.add_argument("--switches", type=int, default=500)

    p = sub.add_parser("isolation-fuzz", help="cross-tenant fuzzing with overlapping MAC plans")
    _common(p)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--packets", type=int, default=10_000)
    p.add_argument("--tenants", type=int, default=3)

    p = sub.add_parser("report", help="run the acceptance suite; exit 0 iff every criterion passes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="PATH", help="JSON report path (printed to stdout if omitted)")
    p.add_argument("--criteria", type=int_list, default=None, help="subset of criteria, e.g. 1-4,9")
    return parser


def _sweep(**kw: Optional[tuple[Any, ...]]) -> dict[str, tuple[Any, ...]]:
    return {k: v for k, v in kw.items() if v is not None}


def _load_scenario(path: Optional[str], fabric: Optional[str]) -> dict[str, Any]:
    if path is None:
        doc = workloads.bundled_scenario("migration_demo")
    else:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidScenario(f"cannot read scenario {path}: {exc}") from exc
    if fabric is not None:
        doc["fabric"] = fabric
    cfg = scenario_from_dict(doc)  # validation only; raises before anything runs
    if not cfg.migrations:
        raise InvalidSpec("the migration demo needs a scenario with at least one migration")
    return doc


def _emit(result: BenchResult, out: Optional[str], extra: Optional[dict[str, Any]] = None) -> None:
    csv_text = render_csv(result.columns, result.rows)
    summary = {"experiment": result.experiment.value, "passed": result.passed, "summary": result.summary}
    if extra:
        summary.update(extra)
    if out is None:
        sys.stdout.write(csv_text)
        return
    write_text(out, csv_text)
    write_text(sidecar(out, ".json"), render_json(summary))


def _run(args: argparse.Namespace) -> int:
    effective_tick_limit(Constants().tick_limit)  # a malformed override is a usage error, caught up front
    cmd = args.command
    if cmd == "report":
        if args.criteria is not None:
            known = {c[0] for c in acceptance.CRITERIA}
            bad = sorted(set(args.criteria) - known)
            if bad:
                raise InvalidSpec(f"unknown criteria {bad}")
        results, doc = acceptance.run_suite(args.seed, args.criteria, echo=print)
        text = render_json(doc)
        if args.out is None:
            sys.stdout.write(text)
        else:
            write_text(args.out, text)
        failed = [f"{r.number} {r.name}" for r in results if not r.passed]
        if failed:
            print("failed: " + "; ".join(failed), file=sys.stderr)
            return EXIT_FAILED
        return EXIT_OK

    if cmd == "setup-bench":
        if args.tunnel_cost_fixed < 0 or args.tunnel_cost_per_weight < 0:
            raise InvalidSpec("tunnel costs must be >= 0")
        fabric = (args.fabric,) if args.fabric else None
        spec = validate_spec(BenchSpec(Experiment.SETUP_TIME, _sweep(clouds=args.clouds, fabric=fabric), seed=args.seed))
        result = setup_bench(spec, CostModel(args.tunnel_cost_fixed, args.tunnel_cost_per_weight))
    elif cmd == "control-bench":
        spec = validate_spec(
            BenchSpec(Experiment.CONTROL_OVERHEAD, _sweep(networks=args.networks), args.repetitions, args.seed)
        )
        result = control_bench(spec)
    elif cmd == "data-bench":
        spec = validate_spec(BenchSpec(Experiment.DATA_OVERHEAD, seed=args.seed))
        result = data_bench(spec, fabric=args.fabric or "mst")
    elif cmd == "migrate-demo":
        spec = validate_spec(BenchSpec(Experiment.MIGRATION_DEMO, seed=args.seed))
        doc = _load_scenario(args.scenario, args.fabric)
        fault = FAULT_PHASES[args.fault] if args.fault else None
        result = migrate_demo(spec, doc, fault_phase=fault, serialize=not args.no_serialize)
        for text in result.summary["timeline"]:
            print(text, file=sys.stderr)
    elif cmd == "snapshot-check":
        spec = validate_spec(BenchSpec(Experiment.SNAPSHOT_ROUND_TRIP, {"switches": (args.switches,)}, seed=args.seed))
        result = snapshot_check(spec)
    elif cmd == "isolation-fuzz":
        if args.seeds < 1:
            raise InvalidSpec("seeds must be >= 1")
        sweep = {"seeds": tuple(range(args.seeds)), "packets": (args.packets,), "tenants": (args.tenants,)}
        spec = validate_spec(BenchSpec(Experiment.ISOLATION_FUZZ, sweep, seed=args.seed))
        result = isolation_fuzz(spec)
    else:  # pragma: no cover - argparse rejects unknown commands
        raise InvalidSpec(f"unknown command {cmd}")
    _emit(result, args.out)
    return EXIT_OK if result.passed else EXIT_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except CloudMeshError as exc:
        print(f"cloudmesh: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
