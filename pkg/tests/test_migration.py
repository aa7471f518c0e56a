from __future__ import annotations

import pytest

from cloudmesh.bench import oracles
from cloudmesh.bench.experiments import migrate_demo
from cloudmesh.bench.spec import BenchSpec, Experiment
from cloudmesh.errors import MigrationInProgress, SameCloud, TargetFull, UnknownCloud, UnknownVm
from cloudmesh.fabric import fabric_path
from cloudmesh.migration.protocol import (
    STEP_ORDER,
    MigrationStep,
    plan_migration,
    schedule_migration,
    state_digest,
)
from cloudmesh.sim.engine import Until
from cloudmesh.sim.scenario import build, scenario_from_dict

FRONT = (0, 0, "front")
SPEC = BenchSpec(Experiment.MIGRATION_DEMO)


def run(doc):
    built = build(scenario_from_dict(doc))
    metrics = built.engine.run()
    return built, metrics, [built.engine.process(pid).result for pid in built.migrations]


def test_demo_is_transparent(migration_doc):
    built, m, (rep,) = run(migration_doc)
    assert rep.completed and not rep.aborted
    assert rep.packets_lost == 0 and rep.ordering_violations == 0 and rep.inconsistencies == 0
    assert rep.packets_redirected > 0
    assert [p.step for p in rep.phases] == list(STEP_ORDER)
    for a, b in zip(rep.phases, rep.phases[1:]):
        assert a.start <= a.end <= b.start
    assert built.engine.vm(FRONT).host == "lab-h1"
    for _, gid in built.generators:
        s = built.engine.stats(gid)
        assert s.received == s.sent
    assert m.conservation_violations == 0 and m.cross_tenant_deliveries == 0


def test_no_flows_nothing_redirected(migration_doc):
    migration_doc["traffic"] = []
    _, _, (rep,) = run(migration_doc)
    assert rep.completed and rep.packets_redirected == 0 and rep.packets_lost == 0


def test_finished_traffic_nothing_redirected(migration_doc):
    for item in migration_doc["traffic"]:
        item["count"] = 5
    _, _, (rep,) = run(migration_doc)
    assert rep.completed and rep.packets_redirected == 0


def test_migration_back_and_forth(migration_doc):
    migration_doc["migrations"].append(
        {"vm": {"tenant": "acme", "network": "web", "vnode": "front"}, "target_cloud": "west", "at": 2200}
    )
    built, _, reps = run(migration_doc)
    assert all(r.completed and r.packets_lost == 0 and r.ordering_violations == 0 for r in reps)
    assert built.engine.vm(FRONT).host == "west-h1"


def _engine(doc):
    doc["traffic"], doc["migrations"] = [], []
    return build(scenario_from_dict(doc)).engine


@pytest.mark.parametrize("target,temporary", [("west", 0), ("lab", 1)])
def test_plan_bridge_tunnels(migration_doc, target, temporary):
    eng = _engine(migration_doc)
    plan = plan_migration(eng.hv, FRONT, target, eng.graph, eng.fabric)
    edges = [t.endpoint_clouds for t in eng.fabric.tunnels]
    hops = oracles.tree_path_length(edges, "east", target)
    assert len(fabric_path(eng.fabric, "east", target)) == hops
    assert len(plan.temporary_tunnels) == temporary == (1 if hops > 1 else 0)
    assert plan.steps == tuple(("east-h1", s) for s in STEP_ORDER)


def test_plan_errors(migration_doc):
    eng = _engine(migration_doc)
    args = (eng.graph, eng.fabric)
    with pytest.raises(SameCloud):
        plan_migration(eng.hv, FRONT, "east", *args)
    with pytest.raises(UnknownCloud):
        plan_migration(eng.hv, FRONT, "mars", *args)
    with pytest.raises(UnknownVm):
        plan_migration(eng.hv, (0, 0, "ghost"), "lab", *args)


def test_target_full(migration_doc):
    for n in migration_doc["nodes"]:
        if n["id"] == "lab-h1":
            n["capacity"] = 1
    eng = _engine(migration_doc)
    with pytest.raises(TargetFull):
        plan_migration(eng.hv, FRONT, "lab", eng.graph, eng.fabric)


def test_second_migration_while_one_runs(migration_doc):
    built = build(scenario_from_dict(migration_doc))
    eng = built.engine
    seen = []

    def meddler():
        yield Until(lambda: eng.migration is not None)
        try:
            plan_migration(eng.hv, (0, 0, "back"), "west", eng.graph, eng.fabric, engine=eng)
        except MigrationInProgress as exc:
            seen.append(exc)

    eng.spawn(meddler())
    eng.run()
    assert len(seen) == 1
    assert eng.process(built.migrations[0]).result.completed


def test_update_requested_during_serialization(migration_doc):
    built = build(scenario_from_dict(migration_doc))
    eng = built.engine

    def requester():
        yield Until(lambda: eng.migration is not None and eng.migration.status.phase is MigrationStep.SERIALIZE_UPDATES)
        eng.migration.request_update(eng.migration.flow_ids[0])

    eng.spawn(requester())
    eng.run()
    rep = eng.process(built.migrations[0]).result
    assert rep.completed and rep.updates_serialized == len(rep_flow_ids(eng)) + 1
    assert rep.inconsistencies == 0 and rep.packets_lost == 0 and rep.ordering_violations == 0


def rep_flow_ids(eng):
    return [fid for fid, rec in eng.hv.flows.items() if "front" in (rec.src_vnode, rec.dst_vnode)]


def test_status_invariants(migration_doc):
    built = build(scenario_from_dict(migration_doc))
    eng = built.engine
    phases = []
    problems = []

    def watch(e):
        mig = e.migration
        if mig is None:
            return
        st = mig.status
        if not phases or phases[-1] is not st.phase:
            phases.append(st.phase)
        if st.frozen_flows - set(mig.flow_ids):
            problems.append(("unknown frozen flow", e.now))
        if st.phase is not MigrationStep.SERIALIZE_UPDATES and st.frozen_flows:
            problems.append(("frozen outside serialization", e.now))
        if st.phase in (MigrationStep.DUAL_REPLICA, MigrationStep.MOVE_VM, MigrationStep.CUTOVER) and not st.suppressed_timers:
            problems.append(("timers running while replicas coexist", e.now))

    eng.monitors.append(watch)
    eng.run()
    assert problems == []
    assert [p for p in phases if p is not None] == list(STEP_ORDER)


def test_rollback_digest_helper(migration_doc):
    eng = _engine(migration_doc)
    before = state_digest(eng)
    pid = schedule_migration(eng, FRONT, "lab")
    eng.run()
    assert eng.process(pid).result.completed
    assert state_digest(eng) != before


@pytest.mark.parametrize("phase", list(MigrationStep))
def test_unresponsive_target_rolls_back(phase):
    result = migrate_demo(SPEC, fault_phase=phase)
    (rep,) = result.summary["reports"]
    assert result.passed
    assert rep["aborted"] and rep["rollback_equal"] is True
    assert rep["packets_lost"] == 0
    assert result.summary["pings"]["front->back"]["received"] == 300


def test_without_serialization_order_breaks():
    """Negative control: skipping update serialization must be caught."""
    result = migrate_demo(SPEC, serialize=False)
    (rep,) = result.summary["reports"]
    assert rep["ordering_violations"] > 0
    assert not result.passed
