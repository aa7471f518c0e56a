"""Deterministic discrete-event simulator.

Provides the substrate data plane (switches forwarding through flow tables,
links and tunnels with latency and a per-tick byte budget) and the
OpenFlow-like control channel between switches and the hypervisor
(packet-in, flow-mod, barrier, LLDP punts).  Events are processed in
``(tick, seq)`` order; ``seq`` is assigned at enqueue, so a run is a pure
function of its inputs.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Callable, Generator, Mapping, Optional

from cloudmesh.errors import (
    InvalidScenario,
    TickLimitExceeded,
    UnknownEndpoint,
    UnknownSwitch,
    UnknownTenant,
)
from cloudmesh.fabric import CostModel, FabricState, Tunnel, make_tunnel
from cloudmesh.hypervisor.core import (
    Hypervisor,
    LldpEvent,
    PacketInEvent,
    RuleInstall,
    VmRef,
    find_substrate_leaks,
    is_vm_port,
    vm_port,
)
from cloudmesh.hypervisor.tagging import LLDP_MULTICAST
from cloudmesh.hypervisor.vnet import VirtualNetworkSpec
from cloudmesh.openflow import (
    Drop,
    FlowRule,
    Forward,
    Match,
    Packet,
    RewriteDst,
    RewriteSrc,
    RuleSpec,
    SendToController,
    Switch,
    forward,
)
from cloudmesh.substrate import CloudKind, SubstrateGraph, cloud_pair

DEFAULT_TICK_LIMIT = 10**7
TICK_LIMIT_ENV = "CLOUDMESH_TICK_LIMIT"
BOUNDED_BUFFER = 64
AUDIT_PERIOD = 1000


class EventKind(Enum):
    PACKET_ARRIVE = "PacketArrive"
    PACKET_IN = "PacketIn"
    FLOW_MOD = "FlowMod"
    BARRIER_REQUEST = "BarrierRequest"
    BARRIER_REPLY = "BarrierReply"
    LLDP_PROBE = "LldpProbe"
    TIMER_EXPIRY = "TimerExpiry"
    TUNNEL_UP = "TunnelUp"
    VM_REBIND = "VmRebind"
    # engine-internal plumbing
    INJECT = "Inject"
    PACKET_OUT = "PacketOut"
    WAKEUP = "Wakeup"


@dataclass(frozen=True)
class Constants:
    """Tick costs standing in for wall-clock quantities."""

    intra_hop_latency: int = 1
    tunnel_latency: int = 50
    control_rtt: int = 10
    encap_overhead: int = 2
    idle_timeout: Optional[int] = 60
    hard_timeout: Optional[int] = None
    barrier_timeout: int = 1000
    buffer_limit: Optional[int] = None
    public_bandwidth: int = 1000
    tunnel_bandwidth: int = 100
    # per-tenant byte budget per link and tick; None leaves links shared freely
    tenant_link_share: Optional[int] = None
    tick_limit: int = DEFAULT_TICK_LIMIT

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Constants":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known - {"bounded_buffer"}
        if extra:
            raise InvalidScenario(f"unknown constants {sorted(extra)}")
        kw = {k: v for k, v in doc.items() if k in known}
        if doc.get("bounded_buffer"):
            kw.setdefault("buffer_limit", BOUNDED_BUFFER)
        for k, v in kw.items():
            if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 0):
                raise InvalidScenario(f"constant {k} must be a non-negative integer")
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def effective_tick_limit(default: int) -> int:
    raw = os.environ.get(TICK_LIMIT_ENV)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise InvalidScenario(f"{TICK_LIMIT_ENV}={raw!r} is not an integer") from None
    if value < 0:
        raise InvalidScenario(f"{TICK_LIMIT_ENV} must be >= 0")
    return value


METRICS_COLUMNS = (
    "packets_injected",
    "packets_delivered",
    "packets_dropped",
    "packets_lost",
    "packets_redirected",
    "control_frames",
    "packet_in_count",
    "rules_installed",
    "cross_tenant_deliveries",
    "misdeliveries",
    "per_flow_order_violations",
    "controller_processing_steps",
    "translation_steps",
    "tunnel_traversals",
    "lldp_probes_intercepted",
    "lldp_substrate_leaks",
    "packets_addressed",
    "deliveries_on_target",
    "conservation_violations",
    "stale_rule_inconsistencies",
    "setup_cost",
    "tunnel_count",
    "events_processed",
    "final_tick",
    "latency_count",
    "latency_min",
    "latency_max",
    "latency_sum",
    "trace_digest",
)


@dataclass
class Metrics:
    packets_injected: int = 0
    packets_delivered: int = 0
    packets_dropped: int = 0
    packets_lost: int = 0
    packets_redirected: int = 0
    control_frames: int = 0
    packet_in_count: int = 0
    rules_installed: int = 0
    cross_tenant_deliveries: int = 0
    misdeliveries: int = 0
    per_flow_order_violations: int = 0
    controller_processing_steps: int = 0
    translation_steps: int = 0
    tunnel_traversals: int = 0
    lldp_probes_intercepted: int = 0
    lldp_substrate_leaks: int = 0
    packets_addressed: int = 0
    deliveries_on_target: int = 0
    conservation_violations: int = 0
    stale_rule_inconsistencies: int = 0
    setup_cost: int = 0
    tunnel_count: int = 0
    events_processed: int = 0
    final_tick: int = 0
    per_packet_latency_ticks: list[int] = field(default_factory=list)
    trace_digest: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self) -> list[Any]:
        lat = self.per_packet_latency_ticks
        derived = {
            "latency_count": len(lat),
            "latency_min": min(lat) if lat else 0,
            "latency_max": max(lat) if lat else 0,
            "latency_sum": sum(lat),
        }
        return [derived[c] if c in derived else getattr(self, c) for c in METRICS_COLUMNS]


# -- processes ---------------------------------------------------------------------


@dataclass(frozen=True)
class Sleep:
    ticks: int


@dataclass(frozen=True)
class Until:
    """Resume once ``predicate()`` holds (sent ``True``) or after ``timeout`` ticks (sent ``False``)."""

    predicate: Callable[[], bool]
    timeout: Optional[int] = None


Process = Generator[Any, Any, Any]


@dataclass
class _Proc:
    pid: int
    gen: Process
    done: bool = False
    result: Any = None
    waiting: Optional[Until] = None
    wait_token: int = 0


# -- data plane state ----------------------------------------------------------------


@dataclass
class LinkState:
    latency: int
    bandwidth: int
    tunnel: bool
    last_tick: int = -1
    used: int = 0

    def depart(self, now: int, size: int) -> int:
        """Tick at which a ``size``-byte packet leaves; FIFO, budget of one tick."""
        t = max(now, self.last_tick)
        if size > self.bandwidth:
            if t == self.last_tick and self.used > 0:
                t += 1
            span = math.ceil(size / self.bandwidth)
            self.last_tick = t + span - 1
            self.used = self.bandwidth
            return self.last_tick
        if t == self.last_tick and self.used + size > self.bandwidth:
            t += 1
        if t != self.last_tick:
            self.last_tick = t
            self.used = 0
        self.used += size
        return t


@dataclass
class VmState:
    ref: VmRef
    vmac: int
    host: str
    paused: bool = False
    outbox: list[tuple] = field(default_factory=list)


@dataclass
class GeneratorStats:
    kind: str
    sent: int = 0
    received: int = 0
    one_way: list[tuple[int, bool, int]] = field(default_factory=list)  # (latency, detoured, seq_no)
    rtt: list[int] = field(default_factory=list)
    deliveries: list[tuple[int, int]] = field(default_factory=list)  # (tick, bytes)


def _fingerprint(obj: Any) -> str:
    if isinstance(obj, tuple):
        return "(" + ",".join(_fingerprint(x) for x in obj) + ")"
    if isinstance(obj, Packet):
        return f"p{obj.packet_id}"
    if isinstance(obj, RuleSpec):
        return f"r{obj.priority}:{obj.match.key()}:{obj.version}:{int(obj.redirect)}"
    if isinstance(obj, Match):
        return f"m{obj.key()}"
    if obj is None or isinstance(obj, (int, str, bool)):
        return str(obj)
    if isinstance(obj, (list, frozenset, set)):
        return "[" + ",".join(sorted(_fingerprint(x) for x in obj)) + "]"
    return type(obj).__name__


class Engine:
    """One simulation run.  Not thread-safe; sweeps use separate instances."""

    def __init__(
        self,
        graph: SubstrateGraph,
        fabric: FabricState,
        *,
        constants: Optional[Constants] = None,
        virtualized: bool = True,
        cost_model: Optional[CostModel] = None,
    ) -> None:
        self.graph = graph
        self.fabric = fabric
        self.c = constants or Constants()
        self.virtualized = virtualized
        self.cost_model = cost_model or CostModel()
        self.tick_limit = effective_tick_limit(self.c.tick_limit)
        self.switches: dict[str, Switch] = {nid: Switch(nid) for nid in sorted(graph.nodes)}
        self.hv = Hypervisor(
            graph,
            fabric,
            virtualized=virtualized,
            idle_timeout=self.c.idle_timeout,
            hard_timeout=self.c.hard_timeout,
            datapath=self.switches,
            hop_latency=self.nominal_latency,
        )
        self.metrics = Metrics(setup_cost=fabric.setup_cost, tunnel_count=fabric.established_count)
        self.now = 0
        self._heap: list[tuple] = []
        self._seq = 0
        self._trace = hashlib.sha256()
        self._handlers = {
            EventKind.PACKET_ARRIVE: self._on_arrive,
            EventKind.PACKET_IN: self._on_packet_in,
            EventKind.FLOW_MOD: self._on_flow_mod,
            EventKind.BARRIER_REQUEST: self._on_barrier_request,
            EventKind.BARRIER_REPLY: self._on_barrier_reply,
            EventKind.LLDP_PROBE: self._on_lldp_probe,
            EventKind.TIMER_EXPIRY: self._on_timer,
            EventKind.TUNNEL_UP: self._on_tunnel_up,
            EventKind.VM_REBIND: self._on_rebind,
            EventKind.INJECT: self._on_inject,
            EventKind.PACKET_OUT: self._on_packet_out,
            EventKind.WAKEUP: self._on_wakeup,
        }
        # endpoints
        self.vms: dict[VmRef, VmState] = {}
        self.port_vm: dict[str, VmRef] = {}
        self.port_queues: dict[tuple[VmRef, str], list[Packet]] = {}
        self.incoming: dict[VmRef, str] = {}
        # switch-side packet state
        self.buffers: dict[str, dict[tuple, list[Packet]]] = {}
        self._buffer_size: dict[str, int] = {}
        self.held: dict[tuple[str, Match], list[Packet]] = {}
        # links and tunnels
        self.links: dict[tuple[str, str], LinkState] = {}
        self._tenant_buckets: dict[tuple[str, str, int], LinkState] = {}
        self.tunnels: dict[tuple[str, str], Tunnel] = {t.endpoint_clouds: t for t in fabric.tunnels}
        self.temp_tunnels: dict[tuple[str, str], Tunnel] = {}
        self._pending_tunnels: dict[tuple[str, str], Tunnel] = {}
        # control channel
        self.unresponsive: set[str] = set()
        self._deferred: dict[str, list[tuple[str, int]]] = {}
        self._barriers: dict[int, set[str]] = {}
        self._barrier_cb: dict[int, Callable[[], None]] = {}
        self._next_barrier = 1
        self._timer_at: dict[tuple[str, int], int] = {}
        # processes and observers
        self._procs: dict[int, _Proc] = {}
        self._waiting: dict[int, _Proc] = {}
        self._next_pid = 1
        self.monitors: list[Callable[["Engine"], None]] = []
        self.hit_monitors: list[Callable[[str, FlowRule, Packet], None]] = []
        self.migration: Any = None
        # accounting
        self.gen_stats: dict[int, GeneratorStats] = {}
        self._next_gen = 1
        self._next_packet = 1
        self._last_seq: dict[tuple, int] = {}
        self.inflight: dict[tuple, int] = {}
        self.lldp_log: list[dict[str, Any]] = []
        self.packet_in_log: list[tuple[int, str, tuple]] = []  # (tick, switch, flow)
        self._in_network = 0
        self._buffered = 0
        self._held = 0
        self._port_queued = 0
        self._next_audit = AUDIT_PERIOD
        self._substrate_ids = self.hv.substrate_identifiers()

    # -- setup ---------------------------------------------------------------------
    def add_tenant(self) -> int:
        return self.hv.register_tenant()

    def add_network(self, tenant: int, spec: VirtualNetworkSpec) -> int:
        vn_id, emb = self.hv.submit_virtual_network(tenant, spec)
        for v in spec.vnodes:
            ref = (tenant, vn_id, v.vnode_id)
            self.vms[ref] = VmState(ref, v.virtual_mac, emb.vnode_map[v.vnode_id])
            self.port_vm[vm_port(ref)] = ref
        return vn_id

    def endpoint(self, tenant: int, vn_id: int, vnode: str) -> VmRef:
        ref = (tenant, vn_id, vnode)
        if ref not in self.vms:
            raise UnknownEndpoint(f"tenant {tenant} network {vn_id} vnode {vnode!r}")
        return ref

    def vm(self, ref: VmRef) -> VmState:
        try:
            return self.vms[ref]
        except KeyError:
            raise UnknownEndpoint(str(ref)) from None

    def switch(self, switch_id: str) -> Switch:
        try:
            return self.switches[switch_id]
        except KeyError:
            raise UnknownSwitch(switch_id) from None

    def new_generator(self, kind: str) -> int:
        gid = self._next_gen
        self._next_gen += 1
        self.gen_stats[gid] = GeneratorStats(kind)
        return gid

    # -- scheduling ------------------------------------------------------------------
    def _push(self, tick: int, kind: EventKind, payload: Any) -> None:
        if tick < self.now:
            raise AssertionError(f"event at {tick} scheduled from {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (tick, self._seq, kind, payload))

    def ctl_delay(self, switch_id: str) -> int:
        """One-way control-channel latency between the controller and ``switch_id``."""
        if switch_id not in self.switches:
            raise UnknownSwitch(switch_id)
        return self.c.control_rtt // 2

    def nominal_latency(self, a: str, b: str) -> int:
        """Propagation latency of the hop ``a -> b`` ignoring queueing (0 if no such link)."""
        link = self._link(a, b)
        return 0 if link is None else link.latency

    def inject(
        self,
        src: VmRef,
        dst_mac: int,
        *,
        at: Optional[int] = None,
        size: int = 100,
        kind: str = "data",
        generator: int = 0,
        seq_no: int = 0,
        ref_tick: int = 0,
    ) -> None:
        self.vm(src)
        self._push(self.now if at is None else at, EventKind.INJECT, (src, dst_mac, size, kind, generator, seq_no, ref_tick))

    def probe_lldp(self, src: VmRef, at: Optional[int] = None) -> None:
        self.inject(src, LLDP_MULTICAST, at=at, size=64, kind="lldp")

    def spawn(self, gen: Process, at: Optional[int] = None) -> int:
        pid = self._next_pid
        self._next_pid += 1
        self._procs[pid] = _Proc(pid, gen)
        self._push(self.now if at is None else at, EventKind.WAKEUP, (pid, None, 0))
        return pid

    def process(self, pid: int) -> _Proc:
        return self._procs[pid]

    # -- controller-side commands ------------------------------------------------------
    def send_flow_mods(self, installs: list[RuleInstall]) -> None:
        for ins in installs:
            self.send_op(ins.switch_id, ("add", ins.spec))

    def send_op(self, switch_id: str, op: tuple) -> None:
        self.switch(switch_id)
        self._push(self.now + self.ctl_delay(switch_id), EventKind.FLOW_MOD, (switch_id, op))

    def barrier(self, switch_ids, on_done: Optional[Callable[[], None]] = None) -> int:
        token = self._next_barrier
        self._next_barrier += 1
        targets = sorted(set(switch_ids))
        self._barriers[token] = set(targets)
        if on_done is not None:
            self._barrier_cb[token] = on_done
        if not targets:
            self._finish_barrier(token)
        for sw in targets:
            self._push(self.now + self.ctl_delay(sw), EventKind.BARRIER_REQUEST, (sw, token))
        return token

    def recover(self, switch_id: str) -> None:
        """Bring an unresponsive switch back; it answers the barriers it sat on."""
        self.unresponsive.discard(switch_id)
        for payload in self._deferred.pop(switch_id, []):
            self._push(self.now + self.ctl_delay(switch_id), EventKind.BARRIER_REPLY, payload)

    def barrier_done(self, token: int) -> bool:
        return not self._barriers.get(token)

    def _finish_barrier(self, token: int) -> None:
        cb = self._barrier_cb.pop(token, None)
        if cb is not None:
            cb()

    def open_tunnel(self, a: str, b: str, prefix: str = "tmp") -> Tunnel:
        """Start bringing up a temporary tunnel; it carries traffic after its setup cost in ticks."""
        tun = make_tunnel(self.graph, a, b, prefix)
        self._push(self.now + self.cost_model.tunnel_cost(tun), EventKind.TUNNEL_UP, (tun.endpoint_clouds, tun.tunnel_id))
        self._pending_tunnels[tun.endpoint_clouds] = tun
        return tun

    def tunnel_up(self, a: str, b: str) -> bool:
        pair = cloud_pair(a, b)
        return pair in self.tunnels or pair in self.temp_tunnels

    def close_tunnel(self, a: str, b: str) -> None:
        pair = cloud_pair(a, b)
        self.temp_tunnels.pop(pair, None)
        self._pending_tunnels.pop(pair, None)
        ga, gb = self.graph.gateway_of(pair[0]), self.graph.gateway_of(pair[1])
        self.links.pop((ga, gb), None)
        self.links.pop((gb, ga), None)

    def pause_vm(self, ref: VmRef) -> None:
        self.vm(ref).paused = True

    def resume_vm(self, ref: VmRef) -> None:
        vm = self.vm(ref)
        vm.paused = False
        outbox, vm.outbox = vm.outbox, []
        for payload in outbox:
            self._emit(vm, payload)
        queued = self.port_queues.pop((ref, vm.host), [])
        self._port_queued -= len(queued)
        for pkt in queued:
            self._deliver(vm, pkt)

    def expect_vm(self, ref: VmRef, switch_id: str) -> None:
        """Accept packets for ``ref`` at ``switch_id`` ahead of its rebind."""
        self.incoming[ref] = switch_id

    def rebind_vm(self, ref: VmRef, switch_id: str, at: int) -> None:
        self._push(at, EventKind.VM_REBIND, (ref, switch_id))

    # -- main loop ---------------------------------------------------------------------
    def run(self, until: Optional[int] = None) -> Metrics:
        m = self.metrics
        while self._heap:
            tick = self._heap[0][0]
            if until is not None and tick > until:
                break
            if tick > self.tick_limit:
                raise TickLimitExceeded(f"event at tick {tick} exceeds limit {self.tick_limit}")
            tick, seq, kind, payload = heapq.heappop(self._heap)
            while tick >= self._next_audit:
                self.audit()
                self._next_audit += AUDIT_PERIOD
            self.now = tick
            self._trace.update(f"{tick}|{seq}|{kind.value}|{_fingerprint(payload)}\n".encode())
            self._handlers[kind](payload)
            m.events_processed += 1
            for mon in list(self.monitors):
                mon(self)
            if self._waiting:
                self._poll_waiting()
        if until is not None and not self._heap:
            self.now = max(self.now, until)
        self.audit()
        m.final_tick = self.now
        m.trace_digest = self._trace.copy().hexdigest()
        return m

    def audit(self) -> bool:
        m = self.metrics
        accounted = (
            m.packets_delivered
            + m.packets_dropped
            + m.packets_lost
            + m.control_frames
            + self._in_network
            + self._buffered
            + self._held
            + self._port_queued
        )
        ok = accounted == m.packets_injected
        if not ok:
            m.conservation_violations += 1
        return ok

    # -- processes -----------------------------------------------------------------------
    def _on_wakeup(self, payload) -> None:
        pid, value, token = payload
        proc = self._procs[pid]
        if proc.done:
            return
        if token:
            if proc.waiting is None or proc.wait_token != token:
                return
            self._waiting.pop(pid, None)
            proc.waiting = None
        self._step(proc, value)

    def _step(self, proc: _Proc, value: Any) -> None:
        try:
            instr = proc.gen.send(value)
        except StopIteration as stop:
            proc.done = True
            proc.result = stop.value
            return
        if isinstance(instr, Sleep):
            self._push(self.now + max(0, instr.ticks), EventKind.WAKEUP, (proc.pid, None, 0))
        elif isinstance(instr, Until):
            if instr.predicate():
                self._push(self.now, EventKind.WAKEUP, (proc.pid, True, 0))
                return
            proc.wait_token += 1
            proc.waiting = instr
            self._waiting[proc.pid] = proc
            if instr.timeout is not None:
                self._push(self.now + instr.timeout, EventKind.WAKEUP, (proc.pid, False, proc.wait_token))
        else:
            raise TypeError(f"process yielded {instr!r}")

    def _poll_waiting(self) -> None:
        for pid in sorted(self._waiting):
            proc = self._waiting[pid]
            if proc.waiting is not None and proc.waiting.predicate():
                del self._waiting[pid]
                proc.waiting = None
                proc.wait_token += 1
                self._push(self.now, EventKind.WAKEUP, (pid, True, 0))

    # -- packets ---------------------------------------------------------------------------
    def _resolve(self, src: VmRef, dst_mac: int) -> Optional[VmRef]:
        net = self.hv.tenants.get(src[0])
        net = None if net is None else net.networks.get(src[1])
        if net is None:
            return None
        vnode = net.by_vmac.get(dst_mac)
        return None if vnode is None else (src[0], src[1], vnode)

    def _on_inject(self, payload) -> None:
        vm = self.vms[payload[0]]
        if vm.paused:
            vm.outbox.append(payload)
            return
        self._emit(vm, payload)

    def _emit(self, vm: VmState, payload) -> None:
        src, dst_mac, size, kind, generator, seq_no, ref_tick = payload
        pkt = Packet(
            packet_id=self._next_packet,
            src=vm.vmac,
            dst=dst_mac,
            size=size,
            seq_no=seq_no,
            flow=(src[0], vm.vmac, dst_mac),
            tenant=src[0],
            origin=src,
            sent_tick=self.now,
            generator=generator,
            kind=kind,
            in_port=vm_port(src),
            intended=self._resolve(src, dst_mac),
            ref_tick=ref_tick,
        )
        self._next_packet += 1
        self.metrics.packets_injected += 1
        if pkt.intended is not None and kind != "lldp":
            self.metrics.packets_addressed += 1
        stats = self.gen_stats.get(generator)
        if stats is not None and kind != "echo_reply":
            stats.sent += 1
        self._schedule_arrival(vm.host, pkt, self.now)

    def _schedule_arrival(self, switch_id: str, pkt: Packet, tick: int) -> None:
        self._in_network += 1
        self.inflight[pkt.flow] = self.inflight.get(pkt.flow, 0) + 1
        self._push(tick, EventKind.PACKET_ARRIVE, (switch_id, pkt))

    def _leave(self, pkt: Packet) -> None:
        self.inflight[pkt.flow] -= 1

    def _on_arrive(self, payload) -> None:
        switch_id, pkt = payload
        self._in_network -= 1
        self._leave(pkt)
        self._process(switch_id, pkt)

    def _process(self, switch_id: str, pkt: Packet) -> None:
        buf = self.buffers.get(switch_id)
        key = (pkt.in_port, pkt.src, pkt.dst)
        if buf and key in buf:
            # queue behind packets of the same match already waiting on the controller
            self._buffer(switch_id, key, pkt)
            return
        sw = self.switches[switch_id]
        dec = forward(sw, pkt, self.now)
        if dec.miss:
            self._table_miss(switch_id, key, pkt)
            return
        rule = dec.rule
        self._arm_timer(switch_id, rule)
        for mon in self.hit_monitors:
            mon(switch_id, rule, pkt)
        out: Optional[str] = None
        for action in dec.actions:
            if isinstance(action, RewriteSrc):
                pkt.src = action.mac
            elif isinstance(action, RewriteDst):
                pkt.dst = action.mac
            elif isinstance(action, Forward):
                out = action.port
                break
            elif isinstance(action, Drop):
                self.metrics.packets_dropped += 1
                return
            elif isinstance(action, SendToController):
                if rule.redirect:
                    self._hold(switch_id, rule, pkt)
                elif pkt.dst == LLDP_MULTICAST:
                    self._punt_lldp(switch_id, pkt)
                else:
                    self._table_miss(switch_id, key, pkt)
                return
        if out is None:
            self.metrics.packets_dropped += 1
        elif is_vm_port(out):
            self._to_port(switch_id, out, pkt)
        else:
            self._transmit(switch_id, out, pkt)

    def _buffer(self, switch_id: str, key: tuple, pkt: Packet) -> None:
        pkt.detoured = True
        self.buffers.setdefault(switch_id, {}).setdefault(key, []).append(pkt)
        self._buffer_size[switch_id] = self._buffer_size.get(switch_id, 0) + 1
        self._buffered += 1
        self.inflight[pkt.flow] += 1

    def _table_miss(self, switch_id: str, key: tuple, pkt: Packet) -> None:
        limit = self.c.buffer_limit
        if limit is not None and self._buffer_size.get(switch_id, 0) >= limit:
            self.metrics.packets_lost += 1
            return
        pending = key in self.buffers.get(switch_id, {})
        self._buffer(switch_id, key, pkt)
        if not pending:
            self.packet_in_log.append((self.now, switch_id, pkt.flow))
            self._push(self.now + self.ctl_delay(switch_id), EventKind.PACKET_IN, (switch_id, key))

    def _hold(self, switch_id: str, rule: FlowRule, pkt: Packet) -> None:
        self.metrics.packets_redirected += 1
        self.held.setdefault((switch_id, rule.match), []).append(pkt)
        self._held += 1

    def _release(self, switch_id: str, match: Match) -> None:
        pkts = self.held.pop((switch_id, match), [])
        self._held -= len(pkts)
        for pkt in pkts:
            self._process(switch_id, pkt)

    def held_count(self, switch_id: Optional[str] = None) -> int:
        return sum(len(v) for (sw, _), v in self.held.items() if switch_id in (None, sw))

    def _punt_lldp(self, switch_id: str, pkt: Packet) -> None:
        self.metrics.control_frames += 1
        self._push(self.now + self.ctl_delay(switch_id), EventKind.LLDP_PROBE, (switch_id, pkt.in_port, pkt.packet_id))

    def _link(self, a: str, b: str) -> Optional[LinkState]:
        if b not in self.graph.nodes:
            return None
        st = self.links.get((a, b))
        na, nb = self.graph.node(a), self.graph.node(b)
        if na.cloud_id == nb.cloud_id:
            if st is None:
                cloud = self.graph.cloud(na.cloud_id)
                if cloud.kind is CloudKind.PUBLIC:
                    st = LinkState(self.c.intra_hop_latency, self.c.public_bandwidth, False)
                else:
                    link = self.graph.link_between(a, b)
                    if link is None:
                        return None
                    st = LinkState(self.c.intra_hop_latency * link.weight, link.bandwidth, False)
                self.links[(a, b)] = st
            return st
        pair = cloud_pair(na.cloud_id, nb.cloud_id)
        tun = self.tunnels.get(pair) or self.temp_tunnels.get(pair)
        if tun is None or a != self.graph.gateway_of(na.cloud_id) or b != self.graph.gateway_of(nb.cloud_id):
            return None
        if st is None:
            latency = self.c.tunnel_latency * tun.weight
            if self.virtualized:
                latency += self.c.encap_overhead
            st = LinkState(latency, self.c.tunnel_bandwidth, True)
            self.links[(a, b)] = st
        return st

    def _transmit(self, switch_id: str, nxt: str, pkt: Packet) -> None:
        link = self._link(switch_id, nxt)
        if link is None:
            self.metrics.packets_lost += 1
            return
        if pkt.dst == LLDP_MULTICAST:
            self.metrics.lldp_substrate_leaks += 1
        ready = self.now
        share = self.c.tenant_link_share
        if share and pkt.tenant is not None:
            bucket = self._tenant_buckets.get((switch_id, nxt, pkt.tenant))
            if bucket is None:
                bucket = self._tenant_buckets[(switch_id, nxt, pkt.tenant)] = LinkState(0, share, False)
            ready = bucket.depart(self.now, pkt.size)
        depart = link.depart(ready, pkt.size)
        if link.tunnel:
            pkt.tunnels += 1
            self.metrics.tunnel_traversals += 1
        pkt.in_port = switch_id
        self._schedule_arrival(nxt, pkt, depart + link.latency)

    def _to_port(self, switch_id: str, port: str, pkt: Packet) -> None:
        ref = self.port_vm.get(port)
        vm = None if ref is None else self.vms.get(ref)
        if vm is None:
            self.metrics.packets_lost += 1
        elif vm.host == switch_id and not vm.paused:
            self._deliver(vm, pkt)
        elif vm.host == switch_id or self.incoming.get(ref) == switch_id:
            self.port_queues.setdefault((ref, switch_id), []).append(pkt)
            self._port_queued += 1
        else:
            self.metrics.packets_lost += 1

    def _deliver(self, vm: VmState, pkt: Packet) -> None:
        m = self.metrics
        m.packets_delivered += 1
        latency = self.now - pkt.sent_tick
        m.per_packet_latency_ticks.append(latency)
        if vm.ref[0] != pkt.tenant:
            m.cross_tenant_deliveries += 1
        if pkt.intended != vm.ref:
            m.misdeliveries += 1
        else:
            m.deliveries_on_target += 1
        key = (pkt.generator, pkt.flow)
        last = self._last_seq.get(key)
        if last is not None and pkt.seq_no <= last:
            m.per_flow_order_violations += 1
        else:
            self._last_seq[key] = pkt.seq_no
        stats = self.gen_stats.get(pkt.generator)
        if pkt.kind == "echo_request":
            if stats is not None:
                stats.one_way.append((latency, pkt.detoured, pkt.seq_no))
            reply = (vm.ref, pkt.src, pkt.size, "echo_reply", pkt.generator, pkt.seq_no, pkt.sent_tick)
            self._emit(vm, reply)
        elif pkt.kind == "echo_reply":
            if stats is not None:
                stats.received += 1
                stats.rtt.append(self.now - pkt.ref_tick)
        elif stats is not None:
            stats.received += 1
            stats.deliveries.append((self.now, pkt.size))

    # -- control channel ----------------------------------------------------------------
    def _on_packet_in(self, payload) -> None:
        switch_id, key = payload
        m = self.metrics
        m.packet_in_count += 1
        steps = self.hv.steps
        before_total, before_tr = steps.total, steps.translation
        try:
            installs = self.hv.on_packet_in(PacketInEvent(switch_id, key[0], key[1], key[2], self.now))
        except UnknownTenant:
            installs = None
        m.controller_processing_steps += steps.total - before_total
        m.translation_steps += steps.translation - before_tr
        if installs is None:
            # a tag nobody owns: discard what the switch buffered
            pkts = self.buffers.get(switch_id, {}).pop(key, [])
            self._unbuffer(switch_id, pkts)
            m.packets_dropped += len(pkts)
            return
        self.send_flow_mods(installs)
        targets = {i.switch_id for i in installs} | {switch_id}
        self.barrier(targets, on_done=lambda: self._packet_out(switch_id, key))

    def _packet_out(self, switch_id: str, key: tuple) -> None:
        self._push(self.now + self.ctl_delay(switch_id), EventKind.PACKET_OUT, (switch_id, key))

    def _unbuffer(self, switch_id: str, pkts: list[Packet]) -> None:
        self._buffered -= len(pkts)
        self._buffer_size[switch_id] -= len(pkts)
        for p in pkts:
            self._leave(p)

    def _on_packet_out(self, payload) -> None:
        switch_id, key = payload
        pkts = self.buffers.get(switch_id, {}).pop(key, [])
        self._unbuffer(switch_id, pkts)
        for pkt in pkts:
            self._process(switch_id, pkt)

    def _on_flow_mod(self, payload) -> None:
        switch_id, op = payload
        sw = self.switches[switch_id]
        kind = op[0]
        if kind == "add":
            rule = sw.install(op[1], self.now)
            self.metrics.rules_installed += 1
            self._arm_timer(switch_id, rule)
        elif kind == "delete":
            _, priority, match = op
            gone = sw.remove_match(priority, match)
            if gone is not None and gone.redirect:
                self._release(switch_id, match)
        elif kind == "clone":
            # (spec, packets, bytes, idle_remaining, hard_remaining, suppress)
            for spec, packets, nbytes, idle_rem, hard_rem, suppress in op[1]:
                rule = sw.install(spec, self.now)
                rule.packets, rule.bytes = packets, nbytes
                rule.idle_deadline = None if idle_rem is None else self.now + idle_rem
                rule.hard_deadline = None if hard_rem is None else self.now + hard_rem
                if suppress:
                    sw.suppress_timers([rule.rule_id], self.now)
                self.metrics.rules_installed += 1
                self._arm_timer(switch_id, rule)
        elif kind == "suppress":
            ids = [r.rule_id for r in sw.rules_sorted() if r.flow_id in op[1] and not r.redirect]
            sw.suppress_timers(ids, self.now)
        elif kind == "resume":
            ids = [r.rule_id for r in sw.rules_sorted() if r.flow_id in op[1]]
            for rid in sorted(sw.resume_timers(ids, self.now)):
                self._arm_timer(switch_id, sw.rules[rid])
        elif kind == "call":
            op[1](sw)
        else:
            raise ValueError(f"unknown flow-mod {kind!r}")

    def _on_barrier_request(self, payload) -> None:
        switch_id, token = payload
        if switch_id in self.unresponsive:
            self._deferred.setdefault(switch_id, []).append(payload)
            return
        self._push(self.now + self.ctl_delay(switch_id), EventKind.BARRIER_REPLY, payload)

    def _on_barrier_reply(self, payload) -> None:
        switch_id, token = payload
        pending = self._barriers.get(token)
        if pending is None or switch_id not in pending:
            return
        pending.discard(switch_id)
        if not pending:
            self._finish_barrier(token)

    def _on_lldp_probe(self, payload) -> None:
        switch_id, in_port, _ = payload
        ref = self.port_vm.get(in_port)
        if ref is None:
            return
        plan = self.hv.intercept_lldp(LldpEvent(ref[0], ref[1], ref[2]))
        self.metrics.lldp_probes_intercepted += 1
        doc = plan.to_dict()
        self.lldp_log.append(doc)
        leaks = find_substrate_leaks(json.dumps(doc, sort_keys=True), self._substrate_ids)
        self.metrics.lldp_substrate_leaks += len(leaks) + plan.substrate_emissions

    def _arm_timer(self, switch_id: str, rule: FlowRule) -> None:
        d = rule.deadline
        if d is None or rule.suppressed_since is not None:
            return
        key = (switch_id, rule.rule_id)
        pending = self._timer_at.get(key)
        if pending is None or pending > d:
            self._timer_at[key] = d
            self._push(max(d, self.now), EventKind.TIMER_EXPIRY, (switch_id, rule.rule_id, d))

    def _on_timer(self, payload) -> None:
        switch_id, rule_id, tick = payload
        key = (switch_id, rule_id)
        if self._timer_at.get(key) == tick:
            del self._timer_at[key]
        sw = self.switches[switch_id]
        rule = sw.rules.get(rule_id)
        if rule is None or rule.suppressed_since is not None:
            return
        d = rule.deadline
        if d is None:
            return
        if d <= self.now:
            sw.remove(rule_id)
        else:
            self._arm_timer(switch_id, rule)

    def _on_tunnel_up(self, payload) -> None:
        pair, _ = payload
        tun = self._pending_tunnels.pop(pair, None)
        if tun is not None:
            self.temp_tunnels[pair] = tun

    def _on_rebind(self, payload) -> None:
        ref, switch_id = payload
        vm = self.vms[ref]
        old = vm.host
        vm.host = switch_id
        self.incoming.pop(ref, None)
        merged = self.port_queues.pop((ref, old), []) + self.port_queues.pop((ref, switch_id), [])
        if merged:
            self.port_queues[(ref, switch_id)] = merged

    # -- inspection -------------------------------------------------------------------------
    def stats(self, generator: int) -> GeneratorStats:
        return self.gen_stats[generator]

    def packet_ins(self, flow: tuple, start: int = 0, end: Optional[int] = None) -> int:
        """Packet-ins raised for ``flow`` in ticks [start, end)."""
        return sum(1 for t, _, f in self.packet_in_log if f == flow and t >= start and (end is None or t < end))

    def flow_inflight(self, flow: tuple) -> int:
        return self.inflight.get(flow, 0)
