"""Clone-based live migration of a VM together with its network state.

The VM's edge switch is cloned into the target cloud, both replicas coexist
while every rule update touching the VM's flows is serialized through the
controller (the flow is redirected at its ingress until a barrier confirms
the update on both replicas), then the VM is rebound and the source replica
is retired.  A replica that never acknowledges a barrier aborts the run and
everything is rolled back to the source-only state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional

from cloudmesh.errors import (
    BarrierTimeout,
    MigrationInProgress,
    SameCloud,
    TargetFull,
    UnknownCloud,
)
from cloudmesh.fabric import FabricState, Tunnel, fabric_path, make_tunnel
from cloudmesh.hypervisor.core import (
    REDIRECT_PRIORITY,
    FlowRecord,
    Hypervisor,
    RuleInstall,
    VmRef,
    vm_port,
)
from cloudmesh.migration.snapshot import SwitchSnapshot, materialize, snapshot_switch
from cloudmesh.openflow import (
    FlowRule,
    Forward,
    Match,
    Packet,
    RewriteDst,
    RewriteSrc,
    RuleSpec,
    SendToController,
    Switch,
)
from cloudmesh.sim.engine import Engine, Sleep, Until
from cloudmesh.substrate import HOSTING_ROLES, SubstrateGraph, intra_cloud_path


class MigrationStep(Enum):
    CLONE = "Clone"
    DUAL_REPLICA = "DualReplica"
    SERIALIZE_UPDATES = "SerializeUpdates"
    MOVE_VM = "MoveVm"
    CUTOVER = "Cutover"
    DECOMMISSION = "Decommission"


STEP_ORDER = tuple(MigrationStep)


@dataclass(frozen=True)
class MigrationPlan:
    vm_id: VmRef
    source_cloud: str
    target_cloud: str
    source_host: str
    target_host: str
    switch_order: tuple[str, ...]
    affected_switches: tuple[str, ...]
    bridge_tunnels: tuple[Tunnel, ...]
    temporary_tunnels: tuple[Tunnel, ...]
    steps: tuple[tuple[str, MigrationStep], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "vm": list(self.vm_id),
            "source_cloud": self.source_cloud,
            "target_cloud": self.target_cloud,
            "source_host": self.source_host,
            "target_host": self.target_host,
            "switch_order": list(self.switch_order),
            "affected_switches": list(self.affected_switches),
            "bridge_tunnels": [t.tunnel_id for t in self.bridge_tunnels],
            "temporary_tunnels": [t.tunnel_id for t in self.temporary_tunnels],
            "steps": [[sw, s.value] for sw, s in self.steps],
        }


@dataclass
class MigrationStatus:
    phase: Optional[MigrationStep] = None
    frozen_flows: set[str] = field(default_factory=set)
    suppressed_timers: set[tuple[str, int]] = field(default_factory=set)


@dataclass(frozen=True)
class PhaseSpan:
    step: MigrationStep
    switch_id: str
    start: int
    end: int

    def to_dict(self) -> dict[str, Any]:
        return {"step": self.step.value, "switch": self.switch_id, "start": self.start, "end": self.end}


@dataclass
class MigrationReport:
    vm_id: VmRef
    source_host: str
    target_host: str
    phases: list[PhaseSpan] = field(default_factory=list)
    packets_redirected: int = 0
    packets_lost: int = 0
    ordering_violations: int = 0
    inconsistencies: int = 0
    updates_serialized: int = 0
    aborted: bool = False
    abort_reason: str = ""
    rollback_equal: Optional[bool] = None

    @property
    def completed(self) -> bool:
        return not self.aborted and [p.step for p in self.phases] == list(STEP_ORDER)

    def to_dict(self) -> dict[str, Any]:
        return {
            "vm": list(self.vm_id),
            "source_host": self.source_host,
            "target_host": self.target_host,
            "phases": [p.to_dict() for p in self.phases],
            "packets_redirected": self.packets_redirected,
            "packets_lost": self.packets_lost,
            "ordering_violations": self.ordering_violations,
            "inconsistencies": self.inconsistencies,
            "updates_serialized": self.updates_serialized,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "rollback_equal": self.rollback_equal,
            "completed": self.completed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def timeline(self) -> str:
        lines = [f"migration of {vm_port(self.vm_id)}: {self.source_host} -> {self.target_host}"]
        for p in self.phases:
            lines.append(f"  [{p.start:>8} .. {p.end:>8}] {p.step.value:<16} {p.switch_id}")
        if self.aborted:
            lines.append(f"  aborted: {self.abort_reason} (rolled back, state equal: {self.rollback_equal})")
        lines.append(
            f"  redirected={self.packets_redirected} lost={self.packets_lost} "
            f"reordered={self.ordering_violations} inconsistencies={self.inconsistencies}"
        )
        return "\n".join(lines)


# -- planning ----------------------------------------------------------------------


def pick_target_host(hv: Hypervisor, graph: SubstrateGraph, cloud: str) -> str:
    for node in graph.nodes_in(cloud):
        if node.role in HOSTING_ROLES and hv.remaining.get(node.node_id, 0) > 0:
            return node.node_id
    raise TargetFull(f"no free slot in cloud {cloud}")


def plan_migration(
    hv: Hypervisor,
    vm_id: VmRef,
    target_cloud: str,
    graph: SubstrateGraph,
    fabric: FabricState,
    *,
    engine: Optional[Engine] = None,
) -> MigrationPlan:
    if engine is not None and engine.migration is not None:
        raise MigrationInProgress(f"{vm_port(engine.migration.plan.vm_id)} is still migrating")
    source_host = hv.host_of(vm_id)
    if target_cloud not in graph.clouds:
        raise UnknownCloud(target_cloud)
    source_cloud = graph.node(source_host).cloud_id
    if source_cloud == target_cloud:
        raise SameCloud(f"{vm_port(vm_id)} already lives in {target_cloud}")
    target_host = pick_target_host(hv, graph, target_cloud)
    path = fabric_path(fabric, source_cloud, target_cloud)
    temporary = () if len(path) == 1 else (make_tunnel(graph, source_cloud, target_cloud, "tmp"),)
    affected = sorted(
        {h.switch_id for rec in hv.flows_touching(vm_id) for h in rec.hops} | {source_host}
    )
    order = (source_host,)
    steps = tuple((sw, step) for sw in order for step in STEP_ORDER)
    return MigrationPlan(
        vm_id=vm_id,
        source_cloud=source_cloud,
        target_cloud=target_cloud,
        source_host=source_host,
        target_host=target_host,
        switch_order=order,
        affected_switches=tuple(affected),
        bridge_tunnels=tuple(path) + temporary,
        temporary_tunnels=temporary,
        steps=steps,
    )


# -- global state digest (used to prove rollback) -----------------------------------


def state_document(engine: Engine) -> dict[str, Any]:
    """Rules, placements and tunnels.  Counters and remaining timeouts are excluded."""
    rules = {}
    for sw_id, sw in sorted(engine.switches.items()):
        rules[sw_id] = [
            [
                r.rule_id,
                r.priority,
                r.match.to_dict(),
                [repr(a) for a in r.actions],
                None if r.cookie is None else list(r.cookie),
                r.flow_id,
                r.version,
                r.redirect,
                r.idle_timeout,
                r.hard_timeout,
            ]
            for r in sw.rules_sorted()
            if r.suppressed_since is not None or r.deadline is None or r.deadline > engine.now
        ]
    doc = {
        "rules": rules,
        "placements": engine.hv.placements(),
        "hosts": {vm_port(ref): vm.host for ref, vm in sorted(engine.vms.items())},
        "flows": {
            fid: [rec.version, [[h.switch_id, h.in_port, h.out_port] for h in rec.hops]]
            for fid, rec in sorted(engine.hv.flows.items())
        },
        "tunnels": sorted(engine.tunnels) + sorted(engine.temp_tunnels),
        "remaining": sorted(engine.hv.remaining.items()),
    }
    return doc


def state_digest(engine: Engine) -> str:
    doc = state_document(engine)
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _flow_key(rec: FlowRecord) -> tuple:
    return (rec.tenant, rec.src_vmac, rec.dst_vmac)


def _restore_rules(engine: Engine, sw: Switch, snap: SwitchSnapshot) -> None:
    """Put ``sw``'s table back to ``snap``.

    Rules that survived keep their counters; frozen timers resume as if never
    frozen.  Removed rules come back with their original absolute deadlines.
    """
    now = engine.now
    wanted = {r.rule_id: r for r in snap.rules}
    for rid in sorted(set(sw.rules) - set(wanted)):
        sw.remove(rid)
    for rid, state in sorted(wanted.items()):
        rule = materialize(state, now)
        rule.suppressed_since = None
        cur = sw.remove(rid)
        if cur is not None:
            rule.packets, rule.bytes = cur.packets, cur.bytes
            if not state.suppressed and cur.suppressed_since is not None:
                # frozen by the migration: resume, crediting the frozen span
                shift = now - cur.suppressed_since
                rule.idle_deadline = None if cur.idle_deadline is None else cur.idle_deadline + shift
                rule.hard_deadline = None if cur.hard_deadline is None else cur.hard_deadline + shift
            elif cur.suppressed_since is None and not state.suppressed:
                rule.idle_deadline, rule.hard_deadline = cur.idle_deadline, cur.hard_deadline
        sw.add_rule(rule)
        engine._arm_timer(sw.switch_id, rule)
    sw.next_rule_id = max(sw.next_rule_id, snap.next_rule_id)


# -- execution -------------------------------------------------------------------------


class Migration:
    """Drives one migration as a simulator process."""

    def __init__(self, engine: Engine, plan: MigrationPlan, *, serialize: bool = True) -> None:
        self.e = engine
        self.hv = engine.hv
        self.plan = plan
        self.serialize = serialize
        self.status = MigrationStatus()
        self.report = MigrationReport(plan.vm_id, plan.source_host, plan.target_host)
        self.flow_ids: list[str] = []
        self._audited: set[str] = set()
        self.pending_updates: list[str] = []
        self.auditing = False
        self._redirects: dict[str, list[tuple[str, Match]]] = {}
        self._base = (0, 0, 0)
        self._pre_digest = ""
        self._checkpoint: dict[str, Any] = {}
        self._pre_snaps: dict[str, SwitchSnapshot] = {}
        self._clone_counters: dict[tuple[str, int], tuple[int, int]] = {}
        self._bridge_latency = 0
        self._bridge_switches: set[str] = set()

    # -- helpers --------------------------------------------------------------------
    def request_update(self, flow_id: str) -> None:
        """Ask for a rule update on ``flow_id``; it is serialized before the VM moves."""
        self.pending_updates.append(flow_id)

    def _barrier(self, switches: Iterable[str]) -> Any:
        token = self.e.barrier(switches)
        ok = yield Until(lambda: self.e.barrier_done(token), self.e.c.barrier_timeout)
        if not ok:
            missing = sorted(self.e._barriers.get(token, ()))
            raise BarrierTimeout(f"no barrier reply from {', '.join(missing)}")

    def _frozen(self, fid: str) -> bool:
        for sw_id, match in self._redirects.get(fid, ()):
            rule = self.e.switches[sw_id].find(REDIRECT_PRIORITY, match)
            if rule is not None and rule.redirect:
                return True
        return False

    def audit(self, switch_id: str, rule: FlowRule, pkt: Packet) -> None:
        """Flag a packet forwarded by one replica with an older rule version than the other holds."""
        if not self.auditing or rule.redirect or rule.flow_id not in self._audited:
            return
        h, t = self.plan.source_host, self.plan.target_host
        if switch_id not in (h, t):
            return
        other = self.e.switches[t if switch_id == h else h]
        newer = [r.version for r in other.rules.values() if r.flow_id == rule.flow_id and not r.redirect]
        if newer and max(newer) > rule.version and not self._frozen(rule.flow_id):
            self.report.inconsistencies += 1
            self.e.metrics.stale_rule_inconsistencies += 1

    def _phase(self, step: MigrationStep) -> int:
        self.status.phase = step
        return self.e.now

    def _close(self, step: MigrationStep, start: int) -> None:
        self.report.phases.append(PhaseSpan(step, self.plan.source_host, start, self.e.now))

    def _rules_at(self, rec: FlowRecord, switch_id: str) -> list[RuleSpec]:
        return [i.spec for i in self.hv.rules_for_quiet(rec) if i.switch_id == switch_id]

    # -- main body --------------------------------------------------------------------
    def run(self):
        e, plan = self.e, self.plan
        m = e.metrics
        self._base = (m.packets_redirected, m.packets_lost + m.packets_dropped, m.per_flow_order_violations)
        self._pre_digest = state_digest(e)
        self._checkpoint = self.hv.checkpoint()
        self._pre_snaps = {sw_id: snapshot_switch(sw, e.now) for sw_id, sw in e.switches.items()}
        e.migration = self
        e.hit_monitors.append(self.audit)
        try:
            yield from self._clone()
            yield from self._dual_replica()
            yield from self._serialize_updates()
            yield from self._move_vm()
            yield from self._cutover()
            yield from self._decommission()
        except BarrierTimeout as exc:
            self._rollback(str(exc))
        finally:
            self.auditing = False
            self.status.phase = None
            e.hit_monitors.remove(self.audit)
            e.migration = None
            self.report.packets_redirected = m.packets_redirected - self._base[0]
            self.report.packets_lost = m.packets_lost + m.packets_dropped - self._base[1]
            self.report.ordering_violations = m.per_flow_order_violations - self._base[2]
        return self.report

    def _clone(self):
        e, plan, hv = self.e, self.plan, self.hv
        start = self._phase(MigrationStep.CLONE)
        for tun in plan.temporary_tunnels:
            a, b = tun.endpoint_clouds
            e.open_tunnel(a, b)
            ok = yield Until(lambda a=a, b=b: e.tunnel_up(a, b), e.c.barrier_timeout)
            if not ok:
                raise BarrierTimeout(f"temporary tunnel {tun.tunnel_id} never came up")
        h, t = plan.source_host, plan.target_host
        self.flow_ids = [rec.flow_id for rec in hv.flows_touching(plan.vm_id)]
        self._audited = set(self.flow_ids)
        snap = snapshot_switch(e.switches[h], e.now)
        captured = {(r.priority, r.match): r for r in snap.rules}
        preview = hv.preview_relocation(plan.vm_id, t)
        entries = []
        for fid in self.flow_ids:
            old, new = hv.flows[fid], preview.get(fid)
            if new is None:
                continue
            # role of the VM's edge: ingress when it sends, egress when it receives
            old_specs = self._rules_at(old, h)
            new_specs = self._rules_at(new, t)
            if not old_specs or not new_specs:
                continue
            src_spec = old_specs[0] if old.src_vnode == plan.vm_id[2] else old_specs[-1]
            dst_spec = new_specs[0] if new.src_vnode == plan.vm_id[2] else new_specs[-1]
            if e.switches[t].find(dst_spec.priority, dst_spec.match) is not None:
                # the target already forwards this flow for the peer; it is updated under freeze later
                continue
            state = captured.get((src_spec.priority, src_spec.match))
            replica = RuleSpec(
                dst_spec.priority,
                dst_spec.match,
                dst_spec.actions,
                idle_timeout=dst_spec.idle_timeout,
                hard_timeout=dst_spec.hard_timeout,
                cookie=dst_spec.cookie,
                flow_id=fid,
                version=old.version,
            )
            if state is None:
                entries.append((replica, 0, 0, dst_spec.idle_timeout, dst_spec.hard_timeout, True))
            else:
                self._clone_counters[(fid, dst_spec.priority)] = (state.packets, state.bytes)
                entries.append(
                    (replica, state.packets, state.bytes, state.idle_remaining, state.hard_remaining, True)
                )
        e.send_op(t, ("clone", tuple(entries)))
        # no autonomous expiry of the VM's flow rules anywhere while it moves
        frozen = sorted(set(plan.affected_switches) | {t})
        for sw_id in frozen:
            e.send_op(sw_id, ("suppress", frozenset(self.flow_ids)))
        self.status.suppressed_timers = {
            (sw_id, r.rule_id)
            for sw_id in frozen
            for r in e.switches[sw_id].rules.values()
            if r.flow_id in self.flow_ids
        }
        self.auditing = True
        yield from self._barrier(frozen)
        self._close(MigrationStep.CLONE, start)

    def _dual_replica(self):
        start = self._phase(MigrationStep.DUAL_REPLICA)
        yield from self._barrier([self.plan.source_host, self.plan.target_host])
        self._close(MigrationStep.DUAL_REPLICA, start)

    def _freeze(self, recs: list[FlowRecord]):
        """Redirect each flow at every switch where it can enter, then confirm."""
        e = self.e
        targets = set()
        for rec in recs:
            for spec_sw, spec in self._ingress_specs(rec):
                redirect = RuleSpec(
                    REDIRECT_PRIORITY,
                    spec.match,
                    (SendToController(),),
                    cookie=spec.cookie,
                    flow_id=rec.flow_id,
                    version=rec.version,
                    redirect=True,
                )
                e.send_op(spec_sw, ("add", redirect))
                self._redirects.setdefault(rec.flow_id, []).append((spec_sw, spec.match))
                targets.add(spec_sw)
            self.status.frozen_flows.add(rec.flow_id)
        yield from self._barrier(targets)

    def _ingress_specs(self, rec: FlowRecord) -> list[tuple[str, RuleSpec]]:
        out = []
        first = self.hv.rules_for_quiet(rec)[:1]
        out.extend((i.switch_id, i.spec) for i in first)
        if rec.src_vnode == self.plan.vm_id[2]:
            # the VM may start sending from the replica as well
            preview = self.hv.preview_relocation(self.plan.vm_id, self.plan.target_host).get(rec.flow_id)
            if preview is not None:
                out.extend((i.switch_id, i.spec) for i in self.hv.rules_for_quiet(preview)[:1])
        seen, uniq = set(), []
        for sw, spec in out:
            if (sw, spec.match) not in seen:
                seen.add((sw, spec.match))
                uniq.append((sw, spec))
        return uniq

    def _unfreeze(self, flow_ids: Iterable[str]):
        e = self.e
        targets = set()
        for fid in flow_ids:
            for sw_id, match in self._redirects.pop(fid, []):
                e.send_op(sw_id, ("delete", REDIRECT_PRIORITY, match))
                targets.add(sw_id)
            self.status.frozen_flows.discard(fid)
        yield from self._barrier(targets)

    def _bridge_route(self) -> list[str]:
        """Switches from the source host to the target host over the bridge tunnels."""
        g, plan = self.hv.graph, self.plan
        gw_s, gw_t = g.gateway_of(plan.source_cloud), g.gateway_of(plan.target_cloud)
        head = intra_cloud_path(g, plan.source_host, gw_s).nodes
        if plan.temporary_tunnels:
            middle: list[str] = []
        else:
            middle = []
            here = plan.source_cloud
            for tun in plan.bridge_tunnels:
                here = tun.other(here)
                middle.append(g.gateway_of(here))
            middle = middle[:-1]
        tail = intra_cloud_path(g, gw_t, plan.target_host).nodes
        route: list[str] = []
        for node in list(head) + middle + list(tail):
            if not route or route[-1] != node:
                route.append(node)
        return route

    def _bridge_rules(self, old: FlowRecord, new: FlowRecord, taken: set) -> list[RuleInstall]:
        """Forward stragglers reaching the source replica on to the target (VM-bound flows only)."""
        if old.dst_vnode != self.plan.vm_id[2]:
            return []
        route = self._bridge_route()
        port = vm_port(self.plan.vm_id)
        egress = self.hv.rules_for_quiet(old)[-1].spec
        out = []
        virt = self.hv.virtualized
        src_w, dst_w = (new.src_wire, new.dst_wire) if virt else (new.src_vmac, new.dst_vmac)
        for i, sw in enumerate(route):
            if i == 0:
                match = egress.match
            else:
                match = Match(route[i - 1], src_w, dst_w)
            if i == len(route) - 1:
                actions = (RewriteSrc(new.src_vmac), RewriteDst(new.dst_vmac), Forward(port)) if virt else (Forward(port),)
            else:
                actions = (Forward(route[i + 1]),)
            if (sw, match) in taken:
                continue
            out.append(
                RuleInstall(
                    sw,
                    RuleSpec(
                        egress.priority,
                        match,
                        actions,
                        cookie=egress.cookie,
                        flow_id=new.flow_id,
                        version=new.version,
                    ),
                )
            )
        return out

    def _serialize_updates(self):
        e, plan, hv = self.e, self.plan, self.hv
        start = self._phase(MigrationStep.SERIALIZE_UPDATES)
        vm = plan.vm_id
        e.pause_vm(vm)
        e.expect_vm(vm, plan.target_host)
        recs = hv.flows_touching(vm)
        for rec in recs:
            if rec.flow_id not in self.flow_ids:
                self.flow_ids.append(rec.flow_id)
            self._audited.add(rec.flow_id)
        if self.serialize:
            yield from self._freeze(recs)
            keys = [_flow_key(r) for r in recs]
            ok = yield Until(lambda: all(e.flow_inflight(k) == 0 for k in keys), e.c.barrier_timeout)
            if not ok:
                raise BarrierTimeout("in-flight packets of the migrating flows did not drain")
        changes = hv.relocate(vm, plan.target_host)
        installs: list[RuleInstall] = []
        for fid in sorted(changes):
            installs.extend(hv.rules_for_quiet(changes[fid][1]))
        taken = {(i.switch_id, i.spec.match) for i in installs}
        for fid in sorted(changes):
            installs.extend(self._bridge_rules(changes[fid][0], changes[fid][1], taken))
        self._bridge_latency = self._route_latency(self._bridge_route())
        self._bridge_switches = {i.switch_id for i in installs}
        e.send_flow_mods(installs)
        yield from self._barrier({i.switch_id for i in installs} | {plan.source_host, plan.target_host})
        self.report.updates_serialized += len(changes)
        if self.serialize:
            yield from self._unfreeze(sorted(changes))
        # further updates requested while the replicas coexist, one flow at a time
        while self.pending_updates:
            fid = self.pending_updates.pop(0)
            rec = hv.flows.get(fid)
            if rec is None:
                continue
            if self.serialize:
                yield from self._freeze([rec])
            rec.version += 1
            ups = hv.rules_for_quiet(rec)
            for sw in (plan.source_host,):
                for spec in [r for r in e.switches[sw].rules.values() if r.flow_id == fid and not r.redirect]:
                    ups.append(
                        RuleInstall(
                            sw,
                            RuleSpec(
                                spec.priority,
                                spec.match,
                                spec.actions,
                                idle_timeout=spec.idle_timeout,
                                hard_timeout=spec.hard_timeout,
                                cookie=spec.cookie,
                                flow_id=fid,
                                version=rec.version,
                            ),
                        )
                    )
            e.send_flow_mods(ups)
            yield from self._barrier({i.switch_id for i in ups})
            self.report.updates_serialized += 1
            if self.serialize:
                yield from self._unfreeze([fid])
        self._close(MigrationStep.SERIALIZE_UPDATES, start)

    def _route_latency(self, route: list[str]) -> int:
        return sum(self.e.nominal_latency(a, b) for a, b in zip(route, route[1:]))

    def _move_vm(self):
        e, plan = self.e, self.plan
        start = self._phase(MigrationStep.MOVE_VM)
        e.rebind_vm(plan.vm_id, plan.target_host, e.now + self._bridge_latency)
        yield Until(lambda: e.vm(plan.vm_id).host == plan.target_host)
        e.resume_vm(plan.vm_id)
        self._close(MigrationStep.MOVE_VM, start)

    def _cutover(self):
        start = self._phase(MigrationStep.CUTOVER)
        yield from self._barrier([self.plan.source_host, self.plan.target_host])
        self._close(MigrationStep.CUTOVER, start)

    def _decommission(self):
        e, plan, hv = self.e, self.plan, self.hv
        start = self._phase(MigrationStep.DECOMMISSION)
        h, t = plan.source_host, plan.target_host
        fids = frozenset(self.flow_ids)
        for sw_id in sorted(set(plan.affected_switches) | {t} | self._bridge_switches):
            e.send_op(sw_id, ("resume", fids))
        self.status.suppressed_timers = set()
        # counters: the target started from the clone-time copy; add what the source saw since
        deltas = {}
        for fid in self.flow_ids:
            rec = hv.flows.get(fid)
            if rec is None:
                continue
            src_rules = [r for r in e.switches[h].rules.values() if r.flow_id == fid and not r.redirect]
            for r in src_rules:
                base = self._clone_counters.get((fid, r.priority))
                if base is not None and r.packets >= base[0]:
                    deltas[fid] = (r.packets - base[0], r.bytes - base[1])
                    break

        def reconcile(sw: Switch, deltas=deltas, vm_side=vm_port(plan.vm_id)) -> None:
            for fid, (dp, db) in sorted(deltas.items()):
                for r in sw.rules_sorted():
                    if r.flow_id == fid and not r.redirect and (r.match.in_port == vm_side or vm_side in [
                        getattr(a, "port", None) for a in r.actions
                    ]):
                        r.packets += dp
                        r.bytes += db
                        break

        e.send_op(t, ("call", reconcile))
        desired = set()
        for fid in self.flow_ids:
            rec = hv.flows.get(fid)
            if rec is not None:
                desired |= {(i.switch_id, i.spec.priority, i.spec.match) for i in hv.rules_for_quiet(rec)}
        touched = set()
        for sw_id, sw in sorted(e.switches.items()):
            for r in sw.rules_sorted():
                if r.flow_id in fids and not r.redirect and (sw_id, r.priority, r.match) not in desired:
                    e.send_op(sw_id, ("delete", r.priority, r.match))
                    touched.add(sw_id)
        yield from self._barrier(touched | {h, t})
        for tun in plan.temporary_tunnels:
            e.close_tunnel(*tun.endpoint_clouds)
        self._close(MigrationStep.DECOMMISSION, start)

    def _rollback(self, reason: str) -> None:
        e, plan = self.e, self.plan
        self.report.aborted = True
        self.report.abort_reason = reason
        self.auditing = False
        held = sorted(e.held, key=lambda k: (k[0], k[1].key()))
        for sw_id, snap in sorted(self._pre_snaps.items()):
            _restore_rules(e, e.switches[sw_id], snap)
        self.hv.restore_checkpoint(self._checkpoint)
        for key in held:
            e._release(*key)
        vm = e.vm(plan.vm_id)
        e.incoming.pop(plan.vm_id, None)
        stranded = e.port_queues.pop((plan.vm_id, plan.target_host), [])
        if vm.host != plan.source_host:
            e.port_queues.setdefault((plan.vm_id, plan.source_host), []).extend(
                e.port_queues.pop((plan.vm_id, vm.host), [])
            )
            vm.host = plan.source_host
        e.port_queues.setdefault((plan.vm_id, plan.source_host), []).extend(stranded)
        if not e.port_queues[(plan.vm_id, plan.source_host)]:
            del e.port_queues[(plan.vm_id, plan.source_host)]
        if vm.paused:
            e.resume_vm(plan.vm_id)
        for tun in plan.temporary_tunnels:
            e.close_tunnel(*tun.endpoint_clouds)
        self.status = MigrationStatus()
        self.report.rollback_equal = state_digest(e) == self._pre_digest


def execute_migration(engine: Engine, plan: MigrationPlan, *, serialize: bool = True) -> int:
    """Start ``plan`` as a simulator process now; its report is the process result."""
    mig = Migration(engine, plan, serialize=serialize)
    return engine.spawn(mig.run())


def schedule_migration(
    engine: Engine, vm_id: VmRef, target_cloud: str, *, at: int = 0, serialize: bool = True
) -> int:
    """Plan and run a migration starting at tick ``at`` (planning happens then, on live state)."""

    def proc():
        if at > engine.now:
            yield Sleep(at - engine.now)
        plan = plan_migration(engine.hv, vm_id, target_cloud, engine.graph, engine.fabric, engine=engine)
        report = yield from Migration(engine, plan, serialize=serialize).run()
        return report

    return engine.spawn(proc())
