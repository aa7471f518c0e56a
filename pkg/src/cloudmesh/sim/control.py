"""Controller-side overhead measurement: packet-ins served serially, steps counted."""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass
from typing import Any

from cloudmesh.fabric import build_plan, establish
from cloudmesh.hypervisor.core import Hypervisor, PacketInEvent, vm_port
from cloudmesh.hypervisor.vnet import VirtualLink, VirtualNetworkSpec, VirtualNode
from cloudmesh.substrate import (
    CloudDescriptor,
    CloudKind,
    NodeRole,
    SubstrateGraph,
    SubstrateNode,
    add_cloud,
    add_node,
)

VNODES_PER_NETWORK = 5


@dataclass(frozen=True)
class ControlOverhead:
    n_virtual_networks: int
    n_requests: int
    mean_steps_virtualized: float
    mean_steps_baseline: float
    mean_translation_virtualized: float
    mean_translation_baseline: float

    @property
    def delta(self) -> float:
        return self.mean_steps_virtualized - self.mean_steps_baseline

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["delta"] = self.delta
        return d


def _bench_substrate(n_networks: int) -> SubstrateGraph:
    g = add_cloud(SubstrateGraph(), CloudDescriptor("bench", CloudKind.PUBLIC))
    g = add_node(g, SubstrateNode("bench-gw", "bench", NodeRole.GATEWAY, 0))
    width = len(str(n_networks))
    for i in range(n_networks):
        g = add_node(g, SubstrateNode(f"bench-h{i:0{width}d}", "bench", NodeRole.VM, VNODES_PER_NETWORK))
    return g


def _bench_network(index: int) -> VirtualNetworkSpec:
    nodes = tuple(
        VirtualNode(f"v{j}", ((index + 1) << 8) | (j + 1)) for j in range(VNODES_PER_NETWORK)
    )
    links = tuple(
        VirtualLink(f"v{a}", f"v{b}") for a in range(VNODES_PER_NETWORK) for b in range(a + 1, VNODES_PER_NETWORK)
    )
    return VirtualNetworkSpec(nodes, links)


def _serve(hv: Hypervisor, requests: list[tuple[int, int, int]], vns: list[tuple[int, int]]) -> tuple[float, float]:
    """Feed packet-ins one after another; mean total and translation steps per request."""
    total = trans = 0
    for net_index, a, b in requests:
        tenant, vn_id = vns[net_index]
        net = hv.tenants[tenant].networks[vn_id]
        src, dst = net.spec.vnodes[a], net.spec.vnodes[b]
        host = net.embedding.vnode_map[src.vnode_id]
        event = PacketInEvent(host, vm_port((tenant, vn_id, src.vnode_id)), src.virtual_mac, dst.virtual_mac)
        hv.steps.reset()
        hv.on_packet_in(event)
        total += hv.steps.total
        trans += hv.steps.translation
    if not requests:
        return 0.0, 0.0
    return total / len(requests), trans / len(requests)


def measure_control_overhead(n_virtual_networks: int, n_requests: int, seed: int = 0) -> ControlOverhead:
    """Mean hypervisor steps per packet-in, with and without the translation layer.

    One switch per virtual network as in a cbench run; each request is a
    packet-in for a random pair of a random network, served before the next
    one is issued.  Both modes see the identical request sequence.
    """
    if n_virtual_networks < 1:
        raise ValueError("n_virtual_networks must be >= 1")
    if n_requests < 0:
        raise ValueError("n_requests must be >= 0")
    graph = _bench_substrate(n_virtual_networks)
    fabric = establish(build_plan(graph, "mst"))
    rng = random.Random(seed)
    requests = []
    for _ in range(n_requests):
        a, b = rng.sample(range(VNODES_PER_NETWORK), 2)
        requests.append((rng.randrange(n_virtual_networks), a, b))
    means = {}
    for virtualized in (True, False):
        hv = Hypervisor(graph, fabric, virtualized=virtualized)
        vns = []
        for i in range(n_virtual_networks):
            tenant = hv.register_tenant()
            vn_id, _ = hv.submit_virtual_network(tenant, _bench_network(i))
            vns.append((tenant, vn_id))
        means[virtualized] = _serve(hv, requests, vns)
    return ControlOverhead(
        n_virtual_networks,
        n_requests,
        means[True][0],
        means[False][0],
        means[True][1],
        means[False][1],
    )
