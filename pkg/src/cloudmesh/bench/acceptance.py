"""The acceptance suite: one check per criterion, each with its measured value and threshold."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

import numpy as np

from cloudmesh.bench import oracles, workloads
from cloudmesh.bench.experiments import (
    BenchResult,
    control_bench,
    data_bench,
    isolation_fuzz,
    migrate_demo,
    setup_bench,
    setup_rows,
    snapshot_check,
)
from cloudmesh.bench.output import render_csv, render_json
from cloudmesh.bench.spec import BenchSpec, Experiment
from cloudmesh.errors import TenantSpaceExhausted
from cloudmesh.fabric import CostModel, build_mst
from cloudmesh.hypervisor.tagging import TENANT_LIMIT, VLAN_TENANT_LIMIT, TenantAllocator, tenant_capacity_ratio
from cloudmesh.migration.protocol import MigrationStep
from cloudmesh.sim.scenario import build, scenario_from_dict


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict[str, Any]
    threshold: dict[str, Any]
    detail: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "number": self.number,
            "name": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "threshold": self.threshold,
            "detail": self.detail,
        }

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2} {self.name}: {self.detail}"


@dataclass
class Suite:
    """Shared state for one acceptance run; experiment results are computed once and reused."""

    seed: int = 0
    cache: dict[str, BenchResult] = field(default_factory=dict)

    def result(self, key: str, fn: Callable[[], BenchResult]) -> BenchResult:
        if key not in self.cache:
            self.cache[key] = fn()
        return self.cache[key]

    def spec(self, experiment: Experiment, **sweep) -> BenchSpec:
        return BenchSpec(experiment, sweep, seed=self.seed)


def _timed(limit: Optional[float], fn: Callable[[], tuple[bool, dict, dict, str]]):
    start = time.perf_counter()
    passed, measured, threshold, detail = fn()
    elapsed = time.perf_counter() - start
    if limit is not None:
        # wall time is kept out of the report so it stays byte-stable; only the verdict goes in
        within = elapsed < limit
        measured["within_runtime"] = within
        threshold["runtime_s"] = limit
        passed = passed and within
        if not within:
            detail += f" (took {elapsed:.1f}s, limit {limit}s)"
    return passed, measured, threshold, detail


# -- criteria ------------------------------------------------------------------------------


def tunnel_counts(suite: Suite):
    rows = setup_rows(tuple(range(2, 33)), ("mst", "mesh"), CostModel())
    wrong = [
        (r["n_clouds"], r["fabric_kind"], r["tunnel_count"])
        for r in rows
        if r["tunnel_count"] != (r["n_clouds"] - 1 if r["fabric_kind"] == "mst" else r["n_clouds"] * (r["n_clouds"] - 1) // 2)
    ]
    return (
        not wrong,
        {"points_checked": len(rows), "mismatches": len(wrong)},
        {"mst": "n-1", "mesh": "n(n-1)/2", "n_range": [2, 32], "mismatches": 0},
        "all tunnel counts exact" if not wrong else f"mismatches {wrong[:3]}",
    )


def setup_scaling(suite: Suite):
    res = suite.result("setup", lambda: setup_bench(suite.spec(Experiment.SETUP_TIME)))
    fits = res.summary["fits"]
    cost = {(r["fabric_kind"], r["n_clouds"]): r["setup_cost"] for r in res.rows}
    mesh_above = all(cost[("mesh", n)] > cost[("mst", n)] for n in range(3, 33))
    r2_mst, r2_mesh = fits["mst"]["r_squared"], fits["mesh"]["r_squared"]
    lead = fits["mesh"]["coefficients"][0]
    passed = r2_mst >= 0.999 and r2_mesh >= 0.999 and lead > 0 and mesh_above
    return (
        passed,
        {"r2_mst": r2_mst, "r2_mesh": r2_mesh, "mesh_leading_coefficient": lead, "mesh_above_mst_from_3": mesh_above},
        {"r2_min": 0.999, "mesh_leading_coefficient": "> 0", "mesh_above_mst_from_3": True},
        f"R2 mst={r2_mst:.6f} mesh={r2_mesh:.6f}, mesh leading coef {lead:.3f}",
    )


def mst_optimality(suite: Suite):
    rng = random.Random(suite.seed)
    mismatches = []
    for trial in range(100):
        n = rng.randrange(2, 8)
        ids = workloads.cloud_ids(n)
        w = np.zeros((n, n), dtype=np.int64)
        weights = {}
        for i in range(n):
            for j in range(i + 1, n):
                w[i, j] = w[j, i] = rng.randrange(1, 50)
                weights[(ids[i], ids[j])] = int(w[i, j])
        got = build_mst(workloads.multi_cloud_graph(n, weights)).total_weight
        best = oracles.min_spanning_weight(w)
        if got != best:
            mismatches.append((trial, n, got, best))
    return (
        not mismatches,
        {"trials": 100, "mismatches": len(mismatches)},
        {"trials": 100, "max_clouds": 7, "mismatches": 0},
        "MST weight equals the exhaustive optimum in every trial" if not mismatches else f"{mismatches[:3]}",
    )


def tenant_capacity(suite: Suite):
    alloc = TenantAllocator()
    admitted = 0
    try:
        for _ in range(TENANT_LIMIT + 1):
            alloc.allocate()
            admitted += 1
        errored = False
    except TenantSpaceExhausted:
        errored = True
    ratio = tenant_capacity_ratio()
    passed = admitted == 65536 and errored and ratio >= 10
    return (
        passed,
        {"admitted": admitted, "error_after_limit": errored, "ratio_vs_vlan": round(ratio, 6)},
        {"admitted": 65536, "error_after_limit": True, "ratio_vs_vlan_min": 10, "vlan_ids": VLAN_TENANT_LIMIT},
        f"{admitted} tenants admitted, ratio {ratio:.2f}",
    )


def isolation(suite: Suite):
    res = suite.result("isolation", lambda: isolation_fuzz(suite.spec(Experiment.ISOLATION_FUZZ)))
    s = res.summary
    rows = res.rows
    undelivered = sum(r["packets_addressed"] - r["deliveries_on_target"] for r in rows)
    seeds = len({r["seed"] for r in rows})
    passed = (
        res.passed
        and seeds >= 5
        and min(r["tenants"] for r in rows) >= 3
        and min(r["packets_injected"] for r in rows) >= 10_000
    )
    return (
        passed,
        {
            "seeds": seeds,
            "cross_tenant_deliveries": s["cross_tenant_deliveries"],
            "substrate_identifiers_exposed": s["substrate_leaks"],
            "misdeliveries": s["misdeliveries"],
            "addressed_not_delivered": undelivered,
        },
        {"seeds_min": 5, "tenants_min": 3, "packets_min": 10_000, "cross_tenant_deliveries": 0,
         "substrate_identifiers_exposed": 0, "misdeliveries": 0, "addressed_not_delivered": 0},
        f"{seeds} seeds, cross-tenant={s['cross_tenant_deliveries']}, leaks={s['substrate_leaks']}, "
        f"undelivered={undelivered}",
    )


def reactive_control(suite: Suite):
    doc = workloads.reactive_scenario()
    second = doc["traffic"][1]["start"]
    built = build(scenario_from_dict(doc), suite.seed)
    e = built.engine
    e.run(until=second - 1)
    # every reactive rule must be gone before the second burst
    leftover = sum(1 for sw in e.switches.values() for r in sw.rules.values() if r.flow_id is not None)
    e.run()
    flows = sorted({f for _, _, f in e.packet_in_log})
    before = {str(f): e.packet_ins(f, 0, second) for f in flows}
    after = {str(f): e.packet_ins(f, second) for f in flows}
    passed = len(flows) == 2 and leftover == 0 and set(before.values()) == {1} and set(after.values()) == {1}
    return (
        passed,
        {"flows": len(flows), "rules_left_before_second_burst": leftover,
         "packet_ins_before_expiry": sorted(before.values()), "packet_ins_after_expiry": sorted(after.values())},
        {"packet_ins_before_expiry": 1, "packet_ins_after_expiry": 1, "rules_left_before_second_burst": 0},
        f"per flow before={sorted(before.values())} after={sorted(after.values())}",
    )


def control_constancy(suite: Suite):
    res = suite.result("control", lambda: control_bench(suite.spec(Experiment.CONTROL_OVERHEAD)))
    by_n = {r["n_virtual_networks"]: r for r in res.rows}
    lo, hi = by_n[10]["mean_steps_virtualized"], by_n[1000]["mean_steps_virtualized"]
    rel = abs(hi - lo) / lo
    base_trans = res.summary["baseline_translation_steps"]
    passed = rel <= 0.10 and base_trans == 0
    return (
        passed,
        {"mean_steps_10": lo, "mean_steps_1000": hi, "relative_change": round(rel, 9),
         "baseline_translation_steps": base_trans},
        {"relative_change_max": 0.10, "baseline_translation_steps": 0},
        f"{lo} steps at 10 networks, {hi} at 1000 (change {rel:.1%})",
    )


def data_decomposition(suite: Suite):
    res = suite.result("data", lambda: data_bench(suite.spec(Experiment.DATA_OVERHEAD)))
    dec = res.summary["decomposition"]
    intra_zero = dec["intra"]["measured_deltas"] == [0]
    passed = res.summary["overhead_exact"] and intra_zero
    return (
        passed,
        {path: {"tunnels": d["tunnels"], "measured_deltas": d["measured_deltas"]} for path, d in sorted(dec.items())},
        {path: {"expected_delta": d["closed_form"]} for path, d in sorted(dec.items())},
        ", ".join(f"{p}: {d['measured_deltas']} vs {d['closed_form']}" for p, d in sorted(dec.items())),
    )


def snapshot_fidelity(suite: Suite):
    res = suite.result("snapshot", lambda: snapshot_check(suite.spec(Experiment.SNAPSHOT_ROUND_TRIP)))
    failed = res.summary["failed"]
    counts = {k: sum(1 for r in res.rows if r[k]) for k in ("field_equal", "json_equal", "replay_equal", "shift_exact")}
    return (
        res.passed and len(res.rows) >= 500,
        {"switches": len(res.rows), "rules": res.summary["rules_total"], **counts},
        {"switches": 500, **{k: 500 for k in counts}},
        f"{len(res.rows) - len(failed)}/{len(res.rows)} switches exact",
    )


def migration_transparency(suite: Suite):
    ok = suite.result("migration", lambda: migrate_demo(suite.spec(Experiment.MIGRATION_DEMO)))
    fault = suite.result(
        "migration_fault",
        lambda: migrate_demo(suite.spec(Experiment.MIGRATION_DEMO), fault_phase=MigrationStep.SERIALIZE_UPDATES),
    )
    rep = ok.summary["reports"][0]
    frep = fault.summary["reports"][0]
    m = ok.summary["metrics"]
    pings_ok = all(p["sent"] == p["received"] for p in ok.summary["pings"].values())
    passed = (
        rep["completed"]
        and m["packets_lost"] == 0
        and m["per_flow_order_violations"] == 0
        and rep["inconsistencies"] == 0
        and pings_ok
        and frep["aborted"]
        and frep["rollback_equal"] is True
    )
    return (
        passed,
        {"completed": rep["completed"], "packets_lost": m["packets_lost"],
         "per_flow_order_violations": m["per_flow_order_violations"],
         "stale_rule_inconsistencies": rep["inconsistencies"], "all_pings_answered": pings_ok,
         "barrier_timeout_rolled_back": frep["aborted"], "rollback_state_equal": frep["rollback_equal"]},
        {"packets_lost": 0, "per_flow_order_violations": 0, "stale_rule_inconsistencies": 0,
         "rollback_state_equal": True},
        f"lost={m['packets_lost']} reordered={m['per_flow_order_violations']} "
        f"inconsistencies={rep['inconsistencies']} rollback_equal={frep['rollback_equal']}",
    )


def render(result: BenchResult) -> tuple[str, str]:
    summary = {"experiment": result.experiment.value, "passed": result.passed, "summary": result.summary}
    return render_csv(result.columns, result.rows), render_json(summary)


def determinism(suite: Suite):
    """Re-run every experiment with the same seed and compare the rendered bytes."""
    again = Suite(suite.seed)
    runs = {
        "setup": lambda s: setup_bench(s.spec(Experiment.SETUP_TIME)),
        "control": lambda s: control_bench(s.spec(Experiment.CONTROL_OVERHEAD)),
        "data": lambda s: data_bench(s.spec(Experiment.DATA_OVERHEAD)),
        "migration": lambda s: migrate_demo(s.spec(Experiment.MIGRATION_DEMO)),
        "snapshot": lambda s: snapshot_check(s.spec(Experiment.SNAPSHOT_ROUND_TRIP)),
        "isolation": lambda s: isolation_fuzz(s.spec(Experiment.ISOLATION_FUZZ)),
    }
    differing = []
    for key, fn in runs.items():
        first = render(suite.result(key, lambda: fn(suite)))
        second = render(fn(again))
        if first != second:
            differing.append(key)
    return (
        not differing,
        {"artifacts_compared": 2 * len(runs), "differing": differing},
        {"differing": []},
        "all CSV/JSON artifacts byte-identical" if not differing else f"differ: {differing}",
    )


CRITERIA: tuple[tuple[int, str, Callable, Optional[float]], ...] = (
    (1, "tunnel minimization", tunnel_counts, 1.0),
    (2, "setup scaling", setup_scaling, 5.0),
    (3, "MST optimality", mst_optimality, 30.0),
    (4, "tenant capacity", tenant_capacity, None),
    (5, "isolation fuzz", isolation, 60.0),
    (6, "reactive control", reactive_control, None),
    (7, "control-plane constancy", control_constancy, 60.0),
    (8, "data-plane overhead decomposition", data_decomposition, None),
    (9, "snapshot fidelity", snapshot_fidelity, 60.0),
    (10, "migration transparency", migration_transparency, 60.0),
    (11, "determinism", determinism, None),
)


def evaluate(number: int, suite: Suite) -> CriterionResult:
    for num, name, fn, limit in CRITERIA:
        if num == number:
            passed, measured, threshold, detail = _timed(limit, lambda: fn(suite))
            return CriterionResult(num, name, bool(passed), measured, threshold, detail)
    raise KeyError(number)


def run_suite(seed: int = 0, numbers: Optional[Iterable[int]] = None, echo: Optional[Callable[[str], None]] = None):
    """Evaluate the chosen criteria (all by default); returns results and the report document."""
    suite = Suite(seed)
    wanted = sorted(set(numbers)) if numbers is not None else [c[0] for c in CRITERIA]
    results = []
    for number in wanted:
        res = evaluate(number, suite)
        if echo is not None:
            echo(res.line())
        results.append(res)
    failed = [r.name for r in results if not r.passed]
    doc = {
        "seed": seed,
        "all_passed": not failed,
        "failed": failed,
        "criteria": [r.to_dict() for r in results],
    }
    return results, doc
