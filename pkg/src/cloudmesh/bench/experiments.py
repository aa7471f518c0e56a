"""The experiments behind the CLI: sweeps that produce CSV rows plus a JSON summary."""

from __future__ import annotations

import copy
import dataclasses
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np

from cloudmesh.errors import InvalidSpec
from cloudmesh.fabric import CostModel, build_plan, establish, fabric_path
from cloudmesh.hypervisor.core import find_substrate_leaks
from cloudmesh.migration.protocol import MigrationReport, MigrationStep, schedule_migration
from cloudmesh.migration.snapshot import SwitchSnapshot, restore_switch, snapshot_switch
from cloudmesh.openflow import (
    Drop,
    Forward,
    Match,
    Packet,
    QueueConfig,
    RewriteDst,
    RewriteSrc,
    RuleSpec,
    SendToController,
    Switch,
    forward,
)
from cloudmesh.sim import traffic
from cloudmesh.sim.control import measure_control_overhead
from cloudmesh.sim.engine import Sleep, Until
from cloudmesh.sim.scenario import build, scenario_from_dict
from cloudmesh.bench import workloads
from cloudmesh.bench.spec import BenchSpec, Experiment, validate_spec


@dataclass
class BenchResult:
    """CSV rows plus a JSON-able summary; ``passed`` reflects the experiment's own checks."""

    experiment: Experiment
    columns: tuple[str, ...]
    rows: list[dict[str, Any]]
    summary: dict[str, Any] = field(default_factory=dict)
    passed: bool = True


# -- setup time ----------------------------------------------------------------------

SETUP_COLUMNS = ("n_clouds", "fabric_kind", "tunnel_count", "setup_cost")


@dataclass(frozen=True)
class FitSummary:
    series: str
    degree: int
    coefficients: tuple[float, ...]  # highest power first
    r_squared: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "series": self.series,
            "degree": self.degree,
            "coefficients": [round(c, 9) for c in self.coefficients],
            "r_squared": round(self.r_squared, 12),
        }


def fit_polynomial(xs: list[float], ys: list[float], degree: int, series: str = "") -> FitSummary:
    """Least-squares polynomial fit with its coefficient of determination."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    coeffs = np.polyfit(x, y, degree)
    pred = np.polyval(coeffs, x)
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-9 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return FitSummary(series, degree, tuple(float(c) for c in coeffs), r2)


def setup_rows(ns: tuple[int, ...], kinds: tuple[str, ...], cost_model: CostModel) -> list[dict[str, Any]]:
    rows = []
    for kind in sorted(set(kinds)):
        for n in sorted(set(ns)):
            state = establish(build_plan(workloads.multi_cloud_graph(n), kind), cost_model)
            rows.append(
                {"n_clouds": n, "fabric_kind": kind, "tunnel_count": state.established_count,
                 "setup_cost": state.setup_cost}
            )
    return rows


def setup_bench(spec: BenchSpec, cost_model: Optional[CostModel] = None) -> BenchResult:
    validate_spec(spec)
    cost_model = cost_model or CostModel()
    rows = setup_rows(spec.value("clouds"), spec.value("fabric"), cost_model)
    fits = {}
    for kind, degree in (("mst", 1), ("mesh", 2)):
        series = [r for r in rows if r["fabric_kind"] == kind]
        if len(series) > degree:
            fits[kind] = fit_polynomial(
                [r["n_clouds"] for r in series], [r["setup_cost"] for r in series], degree, kind
            )
    counts_ok = all(
        r["tunnel_count"] == (r["n_clouds"] - 1 if r["fabric_kind"] == "mst" else r["n_clouds"] * (r["n_clouds"] - 1) // 2)
        for r in rows
    )
    summary = {
        "cost_model": {"c_fixed": cost_model.c_fixed, "c_per_weight": cost_model.c_per_weight},
        "fits": {k: f.to_dict() for k, f in sorted(fits.items())},
        "tunnel_counts_exact": counts_ok,
    }
    return BenchResult(Experiment.SETUP_TIME, SETUP_COLUMNS, rows, summary, counts_ok)


# -- control plane -----------------------------------------------------------------------

CONTROL_COLUMNS = (
    "n_virtual_networks",
    "n_requests",
    "mean_steps_baseline",
    "mean_steps_virtualized",
    "delta",
    "mean_translation_baseline",
    "mean_translation_virtualized",
)
STABILITY_TOLERANCE = 0.10


def control_bench(spec: BenchSpec) -> BenchResult:
    validate_spec(spec)
    n_requests = spec.repetitions * 1000
    rows = []
    for n in sorted(set(spec.value("networks"))):
        r = measure_control_overhead(n, n_requests, seed=spec.seed)
        rows.append(
            {
                "n_virtual_networks": n,
                "n_requests": n_requests,
                "mean_steps_baseline": r.mean_steps_baseline,
                "mean_steps_virtualized": r.mean_steps_virtualized,
                "delta": r.delta,
                "mean_translation_baseline": r.mean_translation_baseline,
                "mean_translation_virtualized": r.mean_translation_virtualized,
            }
        )
    first, last = rows[0], rows[-1]
    spread = (
        abs(last["mean_steps_virtualized"] - first["mean_steps_virtualized"]) / first["mean_steps_virtualized"]
        if first["mean_steps_virtualized"]
        else 0.0
    )
    delta_spread = max(abs(r["delta"] - first["delta"]) for r in rows) / first["delta"] if first["delta"] else 0.0
    baseline_constant = len({r["mean_steps_baseline"] for r in rows}) == 1
    baseline_translation = max(r["mean_translation_baseline"] for r in rows)
    summary = {
        "relative_change_virtualized": spread,
        "relative_change_delta": delta_spread,
        "baseline_constant": baseline_constant,
        "baseline_translation_steps": baseline_translation,
        "tolerance": STABILITY_TOLERANCE,
    }
    passed = spread <= STABILITY_TOLERANCE and baseline_translation == 0 and baseline_constant
    return BenchResult(Experiment.CONTROL_OVERHEAD, CONTROL_COLUMNS, rows, summary, passed)


# -- data plane --------------------------------------------------------------------------

DATA_COLUMNS = ("series", "path", "tunnels", "mode", "value")


def _cloud_of(doc: Mapping[str, Any], vnode: str) -> str:
    region = workloads.DATA_VNODES[vnode][1]
    return next(c["id"] for c in doc["clouds"] if c["region"] == region)


def data_bench(spec: BenchSpec, fabric: str = "mst", constants: Optional[Mapping[str, Any]] = None) -> BenchResult:
    """Ping latency and stream throughput, virtualized against raw, with the overhead split."""
    validate_spec(spec)
    runs = {}
    encap = None
    for virtualized in (True, False):
        doc = workloads.data_plane_scenario(virtualized=virtualized, fabric=fabric)
        if constants:
            doc["constants"] = dict(constants)
        cfg = scenario_from_dict(doc)
        encap = cfg.constants.encap_overhead
        built = build(cfg, spec.seed)
        built.engine.run()
        runs[virtualized] = (doc, built)
    doc, built_v = runs[True]
    _, built_r = runs[False]
    state = built_v.fabric
    rows: list[dict[str, Any]] = []
    decomposition = {}
    exact = True
    stream_ok = True
    tunnel_bw = scenario_from_dict(doc).constants.tunnel_bandwidth
    for idx, (item, _) in enumerate(built_v.generators):
        if item["type"] == "ping":
            src, dst = item["src"]["vnode"], item["dst"]["vnode"]
            path = next(k for k, v in workloads.DATA_PATHS.items() if v == (src, dst))
            tunnels = len(fabric_path(state, _cloud_of(doc, src), _cloud_of(doc, dst)))
            per = {}
            for mode, built in (("virtualized", built_v), ("raw", built_r)):
                stats = built.engine.stats(built.generators[idx][1])
                per[mode] = traffic.steady_by_seq(stats)
                rows.append({"series": "ping_one_way", "path": path, "tunnels": tunnels, "mode": mode,
                             "value": traffic.steady_latency(stats)})
                rtts = stats.rtt
                rows.append({"series": "ping_rtt_mean", "path": path, "tunnels": tunnels, "mode": mode,
                             "value": sum(rtts) / len(rtts) if rtts else None})
            common = sorted(set(per["virtualized"]) & set(per["raw"]))
            deltas = sorted({per["virtualized"][s] - per["raw"][s] for s in common})
            closed = encap * tunnels
            ok = bool(common) and deltas == [closed]
            exact = exact and ok
            delta = deltas[0] if len(deltas) == 1 else None
            stretch = None if delta is None else delta - closed
            decomposition[path] = {
                "tunnels": tunnels,
                "closed_form": closed,
                "measured_deltas": deltas,
                "requests_compared": len(common),
                "exact": ok,
            }
            for series, value in (("overhead_total", delta), ("overhead_encap", closed), ("overhead_stretch", stretch)):
                rows.append({"series": series, "path": path, "tunnels": tunnels, "mode": "delta", "value": value})
        elif item["type"] == "stream":
            src, dst = item["src"]["vnode"], item["dst"]["vnode"]
            tunnels = len(fabric_path(state, _cloud_of(doc, src), _cloud_of(doc, dst)))
            for mode, built in (("virtualized", built_v), ("raw", built_r)):
                stats = built.engine.stats(built.generators[idx][1])
                tput = traffic.throughput(stats, item["duration"])
                stream_ok = stream_ok and abs(tput - tunnel_bw) <= 1
                rows.append({"series": "stream_throughput", "path": f"{src}->{dst}", "tunnels": tunnels,
                             "mode": mode, "value": tput})
    rows.sort(key=lambda r: (r["series"], r["tunnels"], r["path"], r["mode"]))
    summary = {
        "encap_overhead": encap,
        "decomposition": decomposition,
        "overhead_exact": exact,
        "stream_at_bottleneck": stream_ok,
        "tunnel_bandwidth": tunnel_bw,
    }
    return BenchResult(Experiment.DATA_OVERHEAD, DATA_COLUMNS, rows, summary, exact and stream_ok)


# -- migration -------------------------------------------------------------------------------

MIGRATION_COLUMNS = ("vm", "step", "switch", "start", "end")


def _fault_injector(engine, phase: MigrationStep, down_for: int):
    """Make the migration target ignore barriers from the moment the migration enters ``phase``."""

    def proc():
        yield Until(lambda: engine.migration is not None and engine.migration.status.phase is phase)
        target = engine.migration.plan.target_host
        engine.unresponsive.add(target)
        yield Sleep(down_for)
        engine.recover(target)

    return proc()


def migrate_demo(
    spec: BenchSpec,
    scenario: Optional[Mapping[str, Any]] = None,
    *,
    fault_phase: Optional[MigrationStep] = None,
    serialize: bool = True,
) -> BenchResult:
    """Run a scenario with migrations under traffic; optionally fail the target during ``fault_phase``."""
    validate_spec(spec)
    doc = copy.deepcopy(dict(scenario)) if scenario is not None else workloads.bundled_scenario("migration_demo")
    cfg = scenario_from_dict(doc)
    if not cfg.migrations:
        raise InvalidSpec("the migration demo needs a scenario with at least one migration")
    if serialize:
        built = build(cfg, spec.seed)
    else:
        built = build(dataclasses.replace(cfg, migrations=()), spec.seed)
        for mig in cfg.migrations:
            built.migrations.append(
                schedule_migration(
                    built.engine, built.resolve(mig["vm"]), mig["target_cloud"], at=mig.get("at", 0), serialize=False
                )
            )
    engine = built.engine
    if fault_phase is not None:
        engine.spawn(_fault_injector(engine, fault_phase, engine.c.barrier_timeout * 2))
    metrics = engine.run()
    reports: list[MigrationReport] = [engine.process(pid).result for pid in built.migrations]
    rows = []
    for rep in reports:
        for span in rep.phases:
            rows.append({"vm": f"{rep.vm_id[0]}:{rep.vm_id[1]}:{rep.vm_id[2]}", "step": span.step.value,
                         "switch": span.switch_id, "start": span.start, "end": span.end})
    pings = {}
    for item, gid in built.generators:
        if item["type"] == "ping":
            s = engine.stats(gid)
            key = f"{item['src']['vnode']}->{item['dst']['vnode']}"
            pings[key] = {"sent": s.sent, "received": s.received}
    summary = {
        "reports": [r.to_dict() for r in reports],
        "pings": pings,
        "metrics": {
            k: getattr(metrics, k)
            for k in (
                "packets_injected",
                "packets_delivered",
                "packets_lost",
                "packets_dropped",
                "per_flow_order_violations",
                "stale_rule_inconsistencies",
                "packets_redirected",
                "conservation_violations",
                "cross_tenant_deliveries",
            )
        },
        "timeline": [r.timeline() for r in reports],
    }
    if fault_phase is None:
        passed = all(
            r.completed and r.packets_lost == 0 and r.ordering_violations == 0 and r.inconsistencies == 0
            for r in reports
        ) and metrics.packets_lost == 0 and metrics.per_flow_order_violations == 0
    else:
        passed = all(r.aborted and r.rollback_equal for r in reports[:1])
    return BenchResult(Experiment.MIGRATION_DEMO, MIGRATION_COLUMNS, rows, summary, passed)


# -- snapshots -------------------------------------------------------------------------------

SNAPSHOT_COLUMNS = ("switch", "rules", "capture_tick", "delay", "field_equal", "json_equal", "replay_equal", "shift_exact")
PORTS = ("p1", "p2", "p3", "vm:0:0:a")
MACS = (1, 2, 3, 0x0001_0000_0001, 0x0002_0000_0001)


def fuzz_switch(rng: random.Random, index: int, max_rules: int = 50) -> tuple[Switch, int]:
    """A switch with random rules, counters, timers and queues; returns it with a capture tick."""
    sw = Switch(
        f"fz{index:04d}",
        {"datapath_id": f"fz{index:04d}", "fail_mode": rng.choice(["secure", "standalone"]),
         "miss_send_len": rng.choice([128, 256, 65535])},
        [QueueConfig(q, rng.randrange(1, 1000), rng.randrange(0, 10)) for q in range(rng.randrange(0, 4))],
    )
    now = rng.randrange(100, 2000)
    n = rng.randrange(0, max_rules + 1)
    ticks = sorted(rng.randrange(0, now) for _ in range(n))
    for tick in ticks:
        match = Match(
            rng.choice(PORTS + (None,)),
            rng.choice(MACS + (None,)),
            rng.choice(MACS + (None,)),
        )
        kind = rng.randrange(4)
        if kind == 0:
            actions: tuple = (Forward(rng.choice(PORTS)),)
        elif kind == 1:
            actions = (RewriteSrc(rng.choice(MACS)), RewriteDst(rng.choice(MACS)), Forward(rng.choice(PORTS)))
        elif kind == 2:
            actions = (Drop(),)
        else:
            actions = (SendToController(),)
        spec = RuleSpec(
            rng.randrange(0, 6),
            match,
            actions,
            idle_timeout=rng.choice([None, rng.randrange(1, 400)]),
            hard_timeout=rng.choice([None, rng.randrange(1, 3000)]),
            cookie=rng.choice([None, (rng.randrange(4), rng.randrange(4))]),
            flow_id=rng.choice([None, f"f{rng.randrange(20)}"]),
            version=rng.randrange(3),
        )
        rule = sw.install(spec, tick)
        rule.packets = rng.randrange(0, 10_000)
        rule.bytes = rule.packets * rng.randrange(64, 1500)
        if rule.idle_timeout is not None and rng.random() < 0.5:
            # last hit somewhere between install and now
            rule.idle_deadline = rng.randrange(tick, now + 1) + rule.idle_timeout
        if rng.random() < 0.15:
            sw.suppress_timers([rule.rule_id], rng.randrange(tick, now + 1))
    sw.expire(now)
    return sw, now


def random_trace(rng: random.Random, length: int = 60, span: int = 600) -> list[tuple[int, str, int, int, int]]:
    """(offset, in_port, src, dst, size) packets at non-decreasing offsets."""
    offsets = sorted(rng.randrange(0, span) for _ in range(length))
    return [(o, rng.choice(PORTS), rng.choice(MACS), rng.choice(MACS), rng.randrange(64, 1500)) for o in offsets]


def replay(sw: Switch, trace, base: int) -> tuple[list[tuple], dict[int, tuple[int, int]]]:
    """Feed ``trace`` to ``sw`` starting at ``base``; decisions and final counters per rule id."""
    decisions = []
    for i, (offset, port, src, dst, size) in enumerate(trace):
        pkt = Packet(i, src, dst, size, i, (src, dst), None, None, base + offset, in_port=port)
        dec = forward(sw, pkt, base + offset)
        decisions.append((offset, None if dec.rule is None else dec.rule.rule_id, dec.actions))
    counters = {rid: (r.packets, r.bytes) for rid, r in sw.rules.items()}
    return decisions, counters


def _fields(sw: Switch, now: int) -> list[tuple]:
    return [
        (r.rule_id, r.priority, r.match, r.actions, r.install_tick, r.idle_timeout, r.hard_timeout,
         r.remaining(now), r.packets, r.bytes, r.cookie, r.flow_id, r.version, r.redirect,
         r.suppressed_since is not None)
        for r in sw.rules_sorted()
    ]


@dataclass(frozen=True)
class RoundTrip:
    rules: int
    capture_tick: int
    delay: int
    field_equal: bool
    json_equal: bool
    replay_equal: bool
    shift_exact: bool

    @property
    def ok(self) -> bool:
        return self.field_equal and self.json_equal and self.replay_equal and self.shift_exact


def check_round_trip(sw: Switch, now: int, delay: int, trace) -> RoundTrip:
    """Snapshot ``sw`` at ``now``, restore immediately and after ``delay`` ticks, compare."""
    original = copy.deepcopy(sw)
    snap = snapshot_switch(sw, now)
    text = snap.to_json()
    parsed = SwitchSnapshot.from_json(text)
    same = restore_switch(parsed, now)
    later = restore_switch(parsed, now + delay)

    field_equal = (
        _fields(same, now) == _fields(original, now)
        and same.config == original.config
        and same.queues == original.queues
        and _fields(later, now + delay) == [f[:4] + (f[4] + delay,) + f[5:] for f in _fields(original, now)]
    )
    json_equal = snapshot_switch(same, now).to_json() == text and parsed == snap

    shift_exact = True
    for r in later.rules.values():
        o = original.rules[r.rule_id]
        if o.suppressed_since is None:
            for a, b in ((r.idle_deadline, o.idle_deadline), (r.hard_deadline, o.hard_deadline)):
                if (a is None) != (b is None) or (a is not None and a - b != delay):
                    shift_exact = False
        elif r.remaining(now + delay) != o.remaining(now):
            shift_exact = False

    ref_dec, ref_cnt = replay(copy.deepcopy(original), trace, now)
    same_dec, same_cnt = replay(same, trace, now)
    late_dec, late_cnt = replay(later, trace, now + delay)
    replay_equal = ref_dec == same_dec == late_dec and ref_cnt == same_cnt == late_cnt
    return RoundTrip(len(snap.rules), now, delay, field_equal, json_equal, replay_equal, shift_exact)


def snapshot_check(spec: BenchSpec) -> BenchResult:
    validate_spec(spec)
    n = max(spec.value("switches"))
    rng = random.Random(spec.seed)
    rows = []
    for i in range(n):
        sw, now = fuzz_switch(rng, i)
        delay = rng.randrange(0, 1000)
        rt = check_round_trip(sw, now, delay, random_trace(rng))
        rows.append({"switch": sw.switch_id, "rules": rt.rules, "capture_tick": rt.capture_tick,
                     "delay": rt.delay, "field_equal": rt.field_equal, "json_equal": rt.json_equal,
                     "replay_equal": rt.replay_equal, "shift_exact": rt.shift_exact})
    failed = [r["switch"] for r in rows if not all(r[k] for k in SNAPSHOT_COLUMNS[4:])]
    summary = {"switches": n, "rules_total": sum(r["rules"] for r in rows), "failed": failed}
    return BenchResult(Experiment.SNAPSHOT_ROUND_TRIP, SNAPSHOT_COLUMNS, rows, summary, not failed)


# -- isolation -------------------------------------------------------------------------------

ISOLATION_COLUMNS = (
    "seed",
    "tenants",
    "packets_injected",
    "packets_addressed",
    "deliveries_on_target",
    "misdeliveries",
    "cross_tenant_deliveries",
    "lldp_substrate_leaks",
    "topology_leaks",
    "lldp_probes_intercepted",
    "passed",
)


def isolation_run(seed: int, packets: int, tenants: int) -> dict[str, Any]:
    cfg = scenario_from_dict(workloads.isolation_scenario(tenants, packets))
    built = build(cfg, seed)
    engine = built.engine
    m = engine.run()
    ids = engine.hv.substrate_identifiers()
    topo_leaks = 0
    for tid in sorted(built.tenant_ids.values()):
        for view in (engine.hv.discover(tid), engine.hv.virtual_topology(tid)):
            topo_leaks += len(find_substrate_leaks(json.dumps(view.to_dict(), sort_keys=True), ids))
    passed = (
        m.cross_tenant_deliveries == 0
        and m.lldp_substrate_leaks == 0
        and topo_leaks == 0
        and m.misdeliveries == 0
        and m.deliveries_on_target == m.packets_addressed
    )
    return {
        "seed": seed,
        "tenants": tenants,
        "packets_injected": m.packets_injected,
        "packets_addressed": m.packets_addressed,
        "deliveries_on_target": m.deliveries_on_target,
        "misdeliveries": m.misdeliveries,
        "cross_tenant_deliveries": m.cross_tenant_deliveries,
        "lldp_substrate_leaks": m.lldp_substrate_leaks,
        "topology_leaks": topo_leaks,
        "lldp_probes_intercepted": m.lldp_probes_intercepted,
        "passed": passed,
    }


def isolation_fuzz(spec: BenchSpec) -> BenchResult:
    validate_spec(spec)
    rows = []
    for tenants in sorted(set(spec.value("tenants"))):
        for packets in sorted(set(spec.value("packets"))):
            for seed in sorted(set(spec.value("seeds"))):
                rows.append(isolation_run(spec.seed * 1000 + seed, packets, tenants))
    summary = {
        "runs": len(rows),
        "cross_tenant_deliveries": sum(r["cross_tenant_deliveries"] for r in rows),
        "substrate_leaks": sum(r["lldp_substrate_leaks"] + r["topology_leaks"] for r in rows),
        "misdeliveries": sum(r["misdeliveries"] for r in rows),
    }
    return BenchResult(Experiment.ISOLATION_FUZZ, ISOLATION_COLUMNS, rows, summary, all(r["passed"] for r in rows))


RUNNERS: dict[Experiment, Callable[..., BenchResult]] = {
    Experiment.SETUP_TIME: setup_bench,
    Experiment.CONTROL_OVERHEAD: control_bench,
    Experiment.DATA_OVERHEAD: data_bench,
    Experiment.MIGRATION_DEMO: migrate_demo,
    Experiment.SNAPSHOT_ROUND_TRIP: snapshot_check,
    Experiment.ISOLATION_FUZZ: isolation_fuzz,
}
