"""The network hypervisor.

Sits between the substrate switches and tenant control logic.  Each tenant
gets a 16-bit id carried in the high bits of every substrate MAC its traffic
uses; edge switches rewrite virtual MACs to tagged substrate MACs on ingress
and back on egress, and core switches forward on the tagged pair.  Data-plane
rules are installed reactively on the first packet-in of a flow.  LLDP
probes issued by tenant applications are answered from the tenant's virtual
topology and never reach a substrate switch.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional

from cloudmesh.errors import (
    InvalidVirtualNetwork,
    UnknownNetwork,
    UnknownTenant,
    UnknownVm,
)
from cloudmesh.fabric import FabricState
from cloudmesh.hypervisor.tagging import (
    LLDP_MULTICAST,
    LocalIdMap,
    SubstrateMac,
    TenantAllocator,
    decode_mac,
    encode_mac,
)
from cloudmesh.hypervisor.vnet import (
    Embedding,
    VirtualLink,
    VirtualNetworkSpec,
    embed,
    hosting_index,
    substrate_paths,
)
from cloudmesh.openflow import (
    Drop,
    Forward,
    Match,
    RewriteDst,
    RewriteSrc,
    RuleSpec,
    SendToController,
    Switch,
)
from cloudmesh.substrate import HOSTING_ROLES, Path, SubstrateGraph, shortest_path

MISS_PRIORITY = 0
FLOW_PRIORITY = 100
REDIRECT_PRIORITY = 200
LLDP_PRIORITY = 1000

VmRef = tuple[int, int, str]  # (tenant, vn_id, vnode_id)


def vm_port(vm: VmRef) -> str:
    tenant, vn, vnode = vm
    return f"vm:{tenant}:{vn}:{vnode}"


def is_vm_port(port: str) -> bool:
    return port.startswith("vm:")


@dataclass(frozen=True)
class PacketInEvent:
    switch_id: str
    in_port: str
    src_mac: int
    dst_mac: int
    tick: int = 0


@dataclass(frozen=True)
class RuleInstall:
    switch_id: str
    spec: RuleSpec


@dataclass(frozen=True)
class RuleDelete:
    switch_id: str
    priority: int
    match: Match


@dataclass(frozen=True)
class Hop:
    switch_id: str
    in_port: str
    out_port: str


@dataclass
class FlowRecord:
    flow_id: str
    tenant: int
    vn: int
    src_vnode: str
    dst_vnode: str
    src_vmac: int
    dst_vmac: int
    src_wire: int
    dst_wire: int
    hops: tuple[Hop, ...]
    version: int = 0

    @property
    def ingress(self) -> Hop:
        return self.hops[0]

    def switches(self) -> list[str]:
        return [h.switch_id for h in self.hops]

    def tunnels_crossed(self, graph: SubstrateGraph) -> int:
        sws = self.switches()
        return sum(
            1 for a, b in zip(sws, sws[1:]) if graph.node(a).cloud_id != graph.node(b).cloud_id
        )


@dataclass
class StepCounter:
    """Elementary controller operations, split by layer."""

    translation: int = 0
    app: int = 0

    @property
    def total(self) -> int:
        return self.translation + self.app

    def reset(self) -> None:
        self.translation = 0
        self.app = 0


@dataclass
class VirtualNetwork:
    vn_id: int
    tenant: int
    spec: VirtualNetworkSpec
    embedding: Embedding
    by_vmac: dict[int, str]
    adj: dict[str, dict[str, int]]
    lldp_ports: dict[str, list[str]]
    routes: dict[tuple[str, str], Optional[tuple[str, ...]]] = field(default_factory=dict)

    def vlink(self, a: str, b: str) -> Optional[VirtualLink]:
        for link in self.spec.vlinks:
            if {link.a, link.b} == {a, b}:
                return link
        return None


@dataclass
class TenantState:
    tenant_id: int
    locals: LocalIdMap = field(default_factory=LocalIdMap)
    networks: dict[int, VirtualNetwork] = field(default_factory=dict)
    by_local: dict[int, tuple[int, str]] = field(default_factory=dict)
    next_vn: int = 0


@dataclass(frozen=True)
class LldpEvent:
    tenant: int
    vn_id: int
    vnode_id: str
    port: Optional[int] = None  # None probes every port of the vnode


@dataclass(frozen=True)
class LldpReply:
    chassis_id: str
    port_id: int
    remote_chassis_id: str
    remote_port_id: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "chassis_id": self.chassis_id,
            "port_id": self.port_id,
            "remote_chassis_id": self.remote_chassis_id,
            "remote_port_id": self.remote_port_id,
        }


@dataclass(frozen=True)
class LldpResponsePlan:
    tenant: int
    vn_id: int
    replies: tuple[LldpReply, ...]
    substrate_emissions: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "tenant": self.tenant,
            "network": self.vn_id,
            "replies": [r.to_dict() for r in self.replies],
        }


@dataclass(frozen=True)
class TopologyView:
    tenant: int
    nodes: tuple[str, ...]
    links: tuple[tuple[str, str], ...]

    def to_dict(self) -> dict[str, Any]:
        return {"tenant": self.tenant, "nodes": list(self.nodes), "links": [list(l) for l in self.links]}


def _loop_erase(walk: list[str]) -> list[str]:
    out: list[str] = []
    pos: dict[str, int] = {}
    for node in walk:
        if node in pos:
            cut = pos[node]
            for dropped in out[cut + 1 :]:
                del pos[dropped]
            out = out[: cut + 1]
        else:
            pos[node] = len(out)
            out.append(node)
    return out


class Hypervisor:
    """Tenant lifecycle, embedding, reactive translation and LLDP interception.

    With ``virtualized=False`` the same controller runs without the
    translation layer: no tagging, no rewrites, MACs matched as-is.  That is
    the baseline for overhead measurements and requires globally unique MACs.
    """

    def __init__(
        self,
        graph: SubstrateGraph,
        fabric: FabricState,
        *,
        virtualized: bool = True,
        idle_timeout: Optional[int] = 60,
        hard_timeout: Optional[int] = None,
        datapath: Optional[Mapping[str, Switch]] = None,
        hop_latency: Optional[Callable[[str, str], int]] = None,
    ) -> None:
        self.graph = graph
        self.fabric = fabric
        self.virtualized = virtualized
        self.idle_timeout = idle_timeout
        self.hard_timeout = hard_timeout
        self.datapath: Mapping[str, Switch] = datapath if datapath is not None else {}
        self.hop_latency = hop_latency
        self.steps = StepCounter()
        self.allocator = TenantAllocator()
        self.tenants: dict[int, TenantState] = {}
        self.remaining: dict[str, int] = {
            n.node_id: n.capacity for n in graph.nodes.values() if n.role in HOSTING_ROLES
        }
        self.flows: dict[str, FlowRecord] = {}
        self.bindings: dict[tuple[str, str], VmRef] = {}
        self.raw_endpoints: dict[int, VmRef] = {}
        self._hosts_by_cloud = hosting_index(graph)

    # -- tenants ------------------------------------------------------------------
    def register_tenant(self) -> int:
        tid = self.allocator.allocate()
        self.tenants[tid] = TenantState(tid)
        return tid

    def release_tenant(self, tenant: int) -> None:
        state = self._tenant(tenant)
        for vn in list(state.networks):
            self.teardown(tenant, vn)
        del self.tenants[tenant]
        self.allocator.release(tenant)

    def _tenant(self, tenant: int) -> TenantState:
        try:
            return self.tenants[tenant]
        except KeyError:
            raise UnknownTenant(str(tenant)) from None

    def _network(self, tenant: int, vn_id: int) -> VirtualNetwork:
        try:
            return self._tenant(tenant).networks[vn_id]
        except KeyError:
            raise UnknownNetwork(f"tenant {tenant} network {vn_id}") from None

    def map_virtual_mac(self, tenant: int, vmac: int) -> SubstrateMac:
        state = self._tenant(tenant)
        return encode_mac(tenant, state.locals.assign(vmac))

    # -- submission ------------------------------------------------------------
    def submit_virtual_network(self, tenant: int, spec: VirtualNetworkSpec) -> tuple[int, Embedding]:
        state = self._tenant(tenant)
        for v in spec.vnodes:
            if self.virtualized and state.locals.get(v.virtual_mac) is not None:
                raise InvalidVirtualNetwork(
                    f"virtual MAC of {v.vnode_id} already used by another network of tenant {tenant}"
                )
            if not self.virtualized and v.virtual_mac in self.raw_endpoints:
                raise InvalidVirtualNetwork("without virtualization MACs must be globally unique")
        emb, left = embed(spec, self.graph, self.fabric, self.remaining, self._hosts_by_cloud)
        self.remaining = left
        vn_id = state.next_vn
        state.next_vn += 1
        adj: dict[str, dict[str, int]] = {v.vnode_id: {} for v in spec.vnodes}
        lldp_ports: dict[str, list[str]] = {v.vnode_id: [] for v in spec.vnodes}
        for link in spec.vlinks:
            adj[link.a][link.b] = 1
            adj[link.b][link.a] = 1
            lldp_ports[link.a].append(link.b)
            lldp_ports[link.b].append(link.a)
        net = VirtualNetwork(
            vn_id=vn_id,
            tenant=tenant,
            spec=spec,
            embedding=emb,
            by_vmac={v.virtual_mac: v.vnode_id for v in spec.vnodes},
            adj=adj,
            lldp_ports=lldp_ports,
        )
        state.networks[vn_id] = net
        for v in spec.vnodes:
            ref = (tenant, vn_id, v.vnode_id)
            if self.virtualized:
                local = state.locals.assign(v.virtual_mac)
                state.by_local[local] = (vn_id, v.vnode_id)
            else:
                self.raw_endpoints[v.virtual_mac] = ref
            self.bindings[(emb.vnode_map[v.vnode_id], vm_port(ref))] = ref
        self._provision_edges(net)
        return vn_id, emb

    def _provision_edges(self, net: VirtualNetwork) -> None:
        """Pre-install the only proactive rules: LLDP trap and table-miss."""
        for vnode, host in sorted(net.embedding.vnode_map.items()):
            sw = self.datapath.get(host)
            if sw is None:
                continue
            port = vm_port((net.tenant, net.vn_id, vnode))
            sw.install(
                RuleSpec(
                    LLDP_PRIORITY,
                    Match(in_port=port, dst_mac=LLDP_MULTICAST),
                    (SendToController(),),
                    cookie=(net.tenant, net.vn_id),
                ),
                0,
            )
            sw.install(RuleSpec(MISS_PRIORITY, Match(), (SendToController(),)), 0)

    def provisioning_rules(self, vm: VmRef, host: str) -> list[RuleInstall]:
        port = vm_port(vm)
        return [
            RuleInstall(
                host,
                RuleSpec(
                    LLDP_PRIORITY,
                    Match(in_port=port, dst_mac=LLDP_MULTICAST),
                    (SendToController(),),
                    cookie=(vm[0], vm[1]),
                ),
            ),
            RuleInstall(host, RuleSpec(MISS_PRIORITY, Match(), (SendToController(),))),
        ]

    # -- routing ---------------------------------------------------------------
    def _virtual_route(self, net: VirtualNetwork, src: str, dst: str) -> Optional[tuple[str, ...]]:
        self.steps.app += 1
        key = (src, dst)
        if key not in net.routes:
            path = shortest_path(net.adj, src, dst)
            net.routes[key] = None if path is None else path.nodes
        return net.routes[key]

    def _walk(
        self,
        net: VirtualNetwork,
        route: tuple[str, ...],
        salt: int,
        vnode_map: Mapping[str, str],
        vlink_map: Mapping[tuple[str, str], list[Path]],
    ) -> list[str]:
        walk = [vnode_map[route[0]]]
        for u, v in zip(route, route[1:]):
            self.steps.app += 1
            if (u, v) in vlink_map:
                paths = vlink_map[(u, v)]
                nodes = paths[salt % len(paths)].nodes
            else:
                paths = vlink_map[(v, u)]
                nodes = tuple(reversed(paths[salt % len(paths)].nodes))
            walk.extend(nodes[1:])
        return _loop_erase(walk)

    def _hops(self, walk: list[str], src: VmRef, dst: VmRef) -> tuple[Hop, ...]:
        hops = []
        last = len(walk) - 1
        for i, sw in enumerate(walk):
            in_port = vm_port(src) if i == 0 else walk[i - 1]
            out_port = vm_port(dst) if i == last else walk[i + 1]
            hops.append(Hop(sw, in_port, out_port))
        return tuple(hops)

    def _build_record(
        self,
        net: VirtualNetwork,
        src_vnode: str,
        dst_vnode: str,
        vnode_map: Optional[Mapping[str, str]] = None,
        vlink_map: Optional[Mapping[tuple[str, str], list[Path]]] = None,
    ) -> Optional[FlowRecord]:
        route = self._virtual_route(net, src_vnode, dst_vnode)
        if route is None:
            return None
        tenant = net.tenant
        src_vmac = net.spec.vnode(src_vnode).virtual_mac
        dst_vmac = net.spec.vnode(dst_vnode).virtual_mac
        if self.virtualized:
            locals_ = self.tenants[tenant].locals
            self.steps.translation += 2
            src_local, dst_local = locals_.get(src_vmac), locals_.get(dst_vmac)
            src_wire = encode_mac(tenant, src_local).value
            dst_wire = encode_mac(tenant, dst_local).value
            flow_id = f"{tenant}:{src_local}:{dst_local}"
            salt = src_local * 31 + dst_local
        else:
            src_wire, dst_wire = src_vmac, dst_vmac
            flow_id = f"raw:{src_vmac:x}:{dst_vmac:x}"
            salt = src_vmac * 31 + dst_vmac
        walk = self._walk(
            net,
            route,
            salt,
            vnode_map if vnode_map is not None else net.embedding.vnode_map,
            vlink_map if vlink_map is not None else net.embedding.vlink_map,
        )
        hops = self._hops(walk, (tenant, net.vn_id, src_vnode), (tenant, net.vn_id, dst_vnode))
        return FlowRecord(
            flow_id, tenant, net.vn_id, src_vnode, dst_vnode, src_vmac, dst_vmac, src_wire, dst_wire, hops
        )

    def rules_for(self, rec: FlowRecord) -> list[RuleInstall]:
        """Data-plane rules realizing ``rec`` along its hops."""
        out = []
        last = len(rec.hops) - 1
        cookie = (rec.tenant, rec.vn)
        offset = 0
        for i, hop in enumerate(rec.hops):
            self.steps.app += 1
            if i and self.hop_latency is not None:
                offset += self.hop_latency(rec.hops[i - 1].switch_id, hop.switch_id)
            if not self.virtualized or last == 0:
                match = Match(hop.in_port, rec.src_vmac, rec.dst_vmac) if i == 0 else Match(
                    hop.in_port, rec.src_wire, rec.dst_wire
                )
                actions: tuple = (Forward(hop.out_port),)
            elif i == 0:
                self.steps.translation += 1
                match = Match(hop.in_port, rec.src_vmac, rec.dst_vmac)
                actions = (RewriteSrc(rec.src_wire), RewriteDst(rec.dst_wire), Forward(hop.out_port))
            elif i == last:
                self.steps.translation += 1
                match = Match(hop.in_port, rec.src_wire, rec.dst_wire)
                actions = (RewriteSrc(rec.src_vmac), RewriteDst(rec.dst_vmac), Forward(hop.out_port))
            else:
                match = Match(hop.in_port, rec.src_wire, rec.dst_wire)
                actions = (Forward(hop.out_port),)
            out.append(
                RuleInstall(
                    hop.switch_id,
                    RuleSpec(
                        FLOW_PRIORITY,
                        match,
                        actions,
                        idle_timeout=None if self.idle_timeout is None else self.idle_timeout + offset,
                        hard_timeout=self.hard_timeout,
                        cookie=cookie,
                        flow_id=rec.flow_id,
                        version=rec.version,
                    ),
                )
            )
        return out

    def rules_for_quiet(self, rec: FlowRecord) -> list[RuleInstall]:
        saved = (self.steps.translation, self.steps.app)
        try:
            return self.rules_for(rec)
        finally:
            self.steps.translation, self.steps.app = saved

    def _drop_rule(self, switch: str, in_port: str, src: int, dst: int, cookie) -> RuleInstall:
        self.steps.app += 1
        return RuleInstall(
            switch,
            RuleSpec(
                FLOW_PRIORITY,
                Match(in_port, src, dst),
                (Drop(),),
                idle_timeout=self.idle_timeout,
                cookie=cookie,
                flow_id=None,
            ),
        )

    # -- packet-in ---------------------------------------------------------------
    def _endpoint_for_wire(self, wire: int) -> Optional[VmRef]:
        """Resolve a tagged substrate MAC to the endpoint it names."""
        self.steps.translation += 1
        tenant, local = decode_mac(wire)
        state = self.tenants.get(tenant)
        if state is None:
            raise UnknownTenant(f"tag {tenant:#06x} not allocated")
        self.steps.translation += 1
        hit = state.by_local.get(local)
        if hit is None:
            return None
        return (tenant, hit[0], hit[1])

    def on_packet_in(self, event: PacketInEvent) -> list[RuleInstall]:
        """Translate a packet-in into rule installs along the mapped substrate path."""
        self.steps.app += 1
        binding = self.bindings.get((event.switch_id, event.in_port))
        if binding is not None:
            return self._edge_packet_in(event, binding)
        if not self.virtualized:
            src = self.raw_endpoints.get(event.src_mac)
            dst = self.raw_endpoints.get(event.dst_mac)
            self.steps.app += 2
            if src is None or dst is None or src[:2] != dst[:2]:
                return [self._drop_rule(event.switch_id, event.in_port, event.src_mac, event.dst_mac, None)]
            return self._core_reinstall(event, src, dst)
        src = self._endpoint_for_wire(event.src_mac)
        dst = self._endpoint_for_wire(event.dst_mac)
        if src is None or dst is None or src[:2] != dst[:2]:
            return [self._drop_rule(event.switch_id, event.in_port, event.src_mac, event.dst_mac, None)]
        return self._core_reinstall(event, src, dst)

    def _edge_packet_in(self, event: PacketInEvent, src: VmRef) -> list[RuleInstall]:
        tenant, vn_id, src_vnode = src
        net = self.tenants[tenant].networks[vn_id]
        cookie = (tenant, vn_id)
        if self.virtualized:
            self.steps.translation += 1
            dst_vnode_local = net.by_vmac.get(event.dst_mac)
            if dst_vnode_local is None:
                return [self._drop_rule(event.switch_id, event.in_port, event.src_mac, event.dst_mac, cookie)]
            # resolve the destination through its tag, like any core switch would
            dst_wire = self.map_virtual_mac(tenant, event.dst_mac).value
            self.steps.translation += 1
            dst = self._endpoint_for_wire(dst_wire)
        else:
            self.steps.app += 1
            dst = self.raw_endpoints.get(event.dst_mac)
            if dst is not None and dst[:2] != (tenant, vn_id):
                dst = None
        # never route outside the sender's own network, whatever the tag resolved to
        if dst is None or dst[:2] != (tenant, vn_id):
            return [self._drop_rule(event.switch_id, event.in_port, event.src_mac, event.dst_mac, cookie)]
        rec = self._flow(net, src_vnode, dst[2])
        if rec is None:
            return [self._drop_rule(event.switch_id, event.in_port, event.src_mac, event.dst_mac, cookie)]
        return self.rules_for(rec)

    def _flow(self, net: VirtualNetwork, src_vnode: str, dst_vnode: str) -> Optional[FlowRecord]:
        rec = self._build_record(net, src_vnode, dst_vnode)
        if rec is None:
            return None
        self.steps.app += 1
        old = self.flows.get(rec.flow_id)
        if old is not None and old.hops == rec.hops:
            return old
        if old is not None:
            rec.version = old.version + 1
        self.flows[rec.flow_id] = rec
        return rec

    def _core_reinstall(self, event: PacketInEvent, src: VmRef, dst: VmRef) -> list[RuleInstall]:
        net = self.tenants[src[0]].networks[src[1]]
        rec = self._flow(net, src[2], dst[2])
        on_path = rec is not None and any(
            h.switch_id == event.switch_id and h.in_port == event.in_port for h in rec.hops
        )
        if not on_path:
            return [self._drop_rule(event.switch_id, event.in_port, event.src_mac, event.dst_mac, (src[0], src[1]))]
        return self.rules_for(rec)

    # -- LLDP and views ------------------------------------------------------------
    def intercept_lldp(self, probe: LldpEvent) -> LldpResponsePlan:
        net = self._tenant(probe.tenant).networks.get(probe.vn_id)
        if net is None or probe.vnode_id not in net.lldp_ports:
            raise UnknownTenant(f"tenant {probe.tenant} has no vnode {probe.vnode_id!r}")
        ports = net.lldp_ports[probe.vnode_id]
        wanted = range(1, len(ports) + 1) if probe.port is None else [probe.port]
        replies = []
        for p in wanted:
            if not 1 <= p <= len(ports):
                continue
            nbr = ports[p - 1]
            remote_port = net.lldp_ports[nbr].index(probe.vnode_id) + 1
            replies.append(LldpReply(probe.vnode_id, p, nbr, remote_port))
        return LldpResponsePlan(probe.tenant, probe.vn_id, tuple(replies))

    def discover(self, tenant: int) -> TopologyView:
        """Run a full LLDP round for ``tenant`` and assemble what it would learn."""
        state = self._tenant(tenant)
        nodes, links = set(), set()
        for vn_id, net in sorted(state.networks.items()):
            for v in net.spec.vnodes:
                nodes.add(f"{vn_id}/{v.vnode_id}")
                plan = self.intercept_lldp(LldpEvent(tenant, vn_id, v.vnode_id))
                for r in plan.replies:
                    a, b = sorted((f"{vn_id}/{r.chassis_id}", f"{vn_id}/{r.remote_chassis_id}"))
                    links.add((a, b))
        return TopologyView(tenant, tuple(sorted(nodes)), tuple(sorted(links)))

    def virtual_topology(self, tenant: int) -> TopologyView:
        state = self._tenant(tenant)
        nodes, links = [], []
        for vn_id, net in sorted(state.networks.items()):
            nodes.extend(f"{vn_id}/{v.vnode_id}" for v in net.spec.vnodes)
            for l in net.spec.vlinks:
                a, b = sorted((f"{vn_id}/{l.a}", f"{vn_id}/{l.b}"))
                links.append((a, b))
        return TopologyView(tenant, tuple(sorted(nodes)), tuple(sorted(links)))

    # -- teardown ----------------------------------------------------------------
    def teardown(self, tenant: int, vn_id: int) -> None:
        state = self._tenant(tenant)
        net = state.networks.get(vn_id)
        if net is None:
            raise UnknownNetwork(f"tenant {tenant} network {vn_id}")
        cookie = (tenant, vn_id)
        for sw in self.datapath.values():
            sw.remove_cookie(cookie)
        for fid in [f for f, r in self.flows.items() if (r.tenant, r.vn) == cookie]:
            del self.flows[fid]
        for vnode, host in net.embedding.vnode_map.items():
            self.remaining[host] += 1
            self.bindings.pop((host, vm_port((tenant, vn_id, vnode))), None)
        for v in net.spec.vnodes:
            if self.virtualized:
                local = state.locals.get(v.virtual_mac)
                state.by_local.pop(local, None)
                state.locals.release(v.virtual_mac)
            else:
                self.raw_endpoints.pop(v.virtual_mac, None)
        del state.networks[vn_id]

    # -- migration support ---------------------------------------------------------
    def network_of(self, vm: VmRef) -> VirtualNetwork:
        try:
            net = self.tenants[vm[0]].networks[vm[1]]
        except KeyError:
            raise UnknownVm(str(vm)) from None
        if vm[2] not in net.embedding.vnode_map:
            raise UnknownVm(str(vm))
        return net

    def host_of(self, vm: VmRef) -> str:
        return self.network_of(vm).embedding.vnode_map[vm[2]]

    def vms(self) -> list[VmRef]:
        out = []
        for tid, state in sorted(self.tenants.items()):
            for vn_id, net in sorted(state.networks.items()):
                out.extend((tid, vn_id, v) for v in sorted(net.embedding.vnode_map))
        return out

    def flows_touching(self, vm: VmRef) -> list[FlowRecord]:
        tenant, vn, vnode = vm
        return sorted(
            (
                r
                for r in self.flows.values()
                if r.tenant == tenant and r.vn == vn and vnode in (r.src_vnode, r.dst_vnode)
            ),
            key=lambda r: r.flow_id,
        )

    def relocation_maps(self, vm: VmRef, target_host: str):
        net = self.network_of(vm)
        vnode_map = dict(net.embedding.vnode_map)
        vnode_map[vm[2]] = target_host
        vlink_map = dict(net.embedding.vlink_map)
        for link in net.spec.vlinks:
            if vm[2] in link.key:
                vlink_map[link.key] = substrate_paths(
                    self.graph, self.fabric, vnode_map[link.a], vnode_map[link.b], link.multipath
                )
        return vnode_map, vlink_map

    def preview_relocation(self, vm: VmRef, target_host: str) -> dict[str, FlowRecord]:
        """Flow records for ``vm``'s flows as they would be with the VM on ``target_host``."""
        net = self.network_of(vm)
        vnode_map, vlink_map = self.relocation_maps(vm, target_host)
        out = {}
        for old in self.flows_touching(vm):
            rec = self._build_record(net, old.src_vnode, old.dst_vnode, vnode_map, vlink_map)
            if rec is not None:
                rec.version = old.version + 1
                out[rec.flow_id] = rec
        return out

    def relocate(self, vm: VmRef, target_host: str) -> dict[str, tuple[FlowRecord, FlowRecord]]:
        """Commit ``vm`` to ``target_host``; returns {flow_id: (old, new)} for its flows."""
        net = self.network_of(vm)
        source = net.embedding.vnode_map[vm[2]]
        new_records = self.preview_relocation(vm, target_host)
        vnode_map, vlink_map = self.relocation_maps(vm, target_host)
        net.embedding.vnode_map = vnode_map
        net.embedding.vlink_map = vlink_map
        self.remaining[source] += 1
        self.remaining[target_host] -= 1
        port = vm_port(vm)
        self.bindings.pop((source, port), None)
        self.bindings[(target_host, port)] = vm
        changes = {}
        for fid, new in new_records.items():
            changes[fid] = (self.flows[fid], new)
            self.flows[fid] = new
        return changes

    def checkpoint(self) -> dict[str, Any]:
        return copy.deepcopy(
            {
                "tenants": self.tenants,
                "remaining": self.remaining,
                "flows": self.flows,
                "bindings": self.bindings,
                "raw_endpoints": self.raw_endpoints,
            }
        )

    def restore_checkpoint(self, cp: Mapping[str, Any]) -> None:
        cp = copy.deepcopy(dict(cp))
        self.tenants = cp["tenants"]
        self.remaining = cp["remaining"]
        self.flows = cp["flows"]
        self.bindings = cp["bindings"]
        self.raw_endpoints = cp["raw_endpoints"]

    def placements(self) -> dict[str, str]:
        return {vm_port(vm): self.host_of(vm) for vm in self.vms()}

    def substrate_identifiers(self) -> set[str]:
        ids = set(self.graph.nodes) | set(self.graph.clouds)
        ids |= {t.tunnel_id for t in self.fabric.tunnels}
        return ids


def find_substrate_leaks(blob: str, identifiers: Iterable[str]) -> list[str]:
    """Identifiers appearing as whole tokens in ``blob``."""
    tokens = set(re.findall(r"[A-Za-z0-9_.:\-]+", blob))
    # colon-joined tokens (tunnel ids) are checked whole, plain ids also by parts
    parts = set()
    for t in tokens:
        parts.update(t.split(":"))
    return sorted(i for i in identifiers if i in tokens or i in parts)
