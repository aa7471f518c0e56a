"""Scenario documents for the experiments, built in code so sweeps can vary them."""

from __future__ import annotations

import json
from importlib import resources
from typing import Any, Iterable, Mapping, Optional

from cloudmesh.substrate import (
    CloudDescriptor,
    CloudKind,
    NodeRole,
    SubstrateGraph,
    SubstrateNode,
    add_cloud,
    add_node,
    cloud_pair,
)


def bundled_scenario(name: str) -> dict[str, Any]:
    """A scenario shipped with the package, e.g. ``"three_clouds"``."""
    text = resources.files("cloudmesh.scenarios").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def cloud_ids(n: int) -> list[str]:
    width = max(2, len(str(n - 1)))
    return [f"c{i:0{width}d}" for i in range(n)]


def multi_cloud_graph(
    n: int,
    weights: Optional[Mapping[tuple[str, str], int]] = None,
    hosts_per_cloud: int = 1,
    capacity: int = 4,
) -> SubstrateGraph:
    """``n`` public clouds, each with a gateway and ``hosts_per_cloud`` hosts.

    Inter-cloud weights default to 1; ``weights`` overrides individual pairs.
    """
    weights = {cloud_pair(*k): v for k, v in (weights or {}).items()}
    g = SubstrateGraph()
    for cid in cloud_ids(n):
        pairs = {other: weights.get(cloud_pair(cid, other), 1) for other in g.clouds}
        g = add_cloud(g, CloudDescriptor(cid, CloudKind.PUBLIC, f"region-{cid}"), pairs)
        g = add_node(g, SubstrateNode(f"{cid}-gw", cid, NodeRole.GATEWAY, 0))
        for h in range(hosts_per_cloud):
            g = add_node(g, SubstrateNode(f"{cid}-h{h}", cid, NodeRole.VM, capacity))
    return g


def _substrate_chain(capacity: int = 1) -> dict[str, Any]:
    """Three public clouds a-b-c where the direct a-c pair is expensive, so the tree is a chain."""
    clouds = ["a", "b", "c"]
    nodes = []
    for c in clouds:
        nodes.append({"id": f"{c}-gw", "cloud": c, "role": "gateway", "capacity": 0})
        for h in (1, 2):
            nodes.append({"id": f"{c}-h{h}", "cloud": c, "role": "vm", "capacity": capacity})
    return {
        "clouds": [{"id": c, "kind": "public", "region": f"region-{c}"} for c in clouds],
        "nodes": nodes,
        "links": [],
        "inter_cloud_weights": [
            {"clouds": ["a", "b"], "weight": 1},
            {"clouds": ["b", "c"], "weight": 1},
            {"clouds": ["a", "c"], "weight": 4},
        ],
    }


def _ep(tenant: str, vnode: str, network: str = "net") -> dict[str, str]:
    return {"tenant": tenant, "network": network, "vnode": vnode}


# vnode -> (mac, region) for the data-plane workload; the region pins the cloud
DATA_VNODES = {
    "p1": ("02:00:00:00:00:01", "region-a"),
    "p2": ("02:00:00:00:00:02", "region-a"),
    "r1": ("02:00:00:00:00:03", "region-b"),
    "q1": ("02:00:00:00:00:04", "region-c"),
}
# path name -> (src, dst); the names say how many tunnels the path crosses
DATA_PATHS = {"intra": ("p1", "p2"), "one_tunnel": ("p1", "r1"), "two_tunnels": ("p1", "q1")}


def data_plane_scenario(
    *,
    virtualized: bool,
    ping_count: int = 20,
    ping_interval: int = 20,
    stream_rate: int = 300,
    stream_duration: int = 200,
    fabric: str = "mst",
) -> dict[str, Any]:
    """Pings over intra- and inter-cloud paths plus one stream over the bottleneck tunnel.

    The ping interval stays under the idle timeout so every request after the
    first finds its rules in place.
    """
    doc = _substrate_chain()
    doc["fabric"] = fabric
    doc["virtualized"] = virtualized
    doc["tenants"] = [{"name": "t"}]
    doc["virtual_networks"] = [
        {
            "tenant": "t",
            "name": "net",
            "vnodes": [{"id": v, "mac": mac, "location": loc} for v, (mac, loc) in DATA_VNODES.items()],
            "vlinks": [{"a": "p1", "b": v} for v in ("p2", "r1", "q1")],
        }
    ]
    traffic: list[dict[str, Any]] = []
    start = 0
    for src, dst in DATA_PATHS.values():
        traffic.append(
            {"type": "ping", "src": _ep("t", src), "dst": _ep("t", dst), "count": ping_count,
             "interval": ping_interval, "start": start}
        )
        start += ping_count * ping_interval + 1000
    traffic.append(
        {"type": "stream", "src": _ep("t", "p2"), "dst": _ep("t", "r1"), "rate": stream_rate,
         "duration": stream_duration, "start": start, "packet_size": 100}
    )
    doc["traffic"] = traffic
    return doc


def isolation_scenario(n_tenants: int = 3, packets: int = 10_000, vnodes: int = 4) -> dict[str, Any]:
    """``n_tenants`` tenants with the same MAC plan spread over the three-cloud substrate.

    Every vnode of every tenant also sends an LLDP probe, so topology
    discovery is exercised alongside the fuzzed data traffic.
    """
    base = bundled_scenario("three_clouds")
    doc = {k: base[k] for k in ("clouds", "nodes", "links", "inter_cloud_weights")}
    regions = ["us-east", "us-west", "campus"]
    doc["tenants"] = [{"name": f"tenant{i}"} for i in range(n_tenants)]
    networks, traffic = [], []
    for i in range(n_tenants):
        name = f"tenant{i}"
        vns = [
            {"id": f"v{j}", "mac": f"02:00:00:00:00:{j + 1:02x}", "location": regions[(i + j) % 3]}
            for j in range(vnodes)
        ]
        links = [{"a": f"v{a}", "b": f"v{b}"} for a in range(vnodes) for b in range(a + 1, vnodes)]
        networks.append({"tenant": name, "name": "net", "vnodes": vns, "vlinks": links})
        traffic.extend({"type": "lldp", "src": _ep(name, f"v{j}"), "at": j} for j in range(vnodes))
    doc["virtual_networks"] = networks
    traffic.append({"type": "fuzz", "count": packets, "start": 10, "spacing": 1, "size": 64})
    doc["traffic"] = traffic
    # the fuzz pool spans tenants; keep capacity comfortably above demand
    for node in doc["nodes"]:
        if node["role"] == "vm":
            node["capacity"] = max(node["capacity"], n_tenants * vnodes)
    return doc


def reactive_scenario(idle_timeout: int = 60, burst: int = 10, gap: int = 20) -> dict[str, Any]:
    """Two one-way streams of spaced packets, one intra- and one inter-cloud.

    Each source sends ``burst`` packets ``gap`` ticks apart, falls silent for
    well over the idle timeout, then sends another burst.
    """
    doc = _substrate_chain()
    doc["constants"] = {"idle_timeout": idle_timeout}
    doc["tenants"] = [{"name": "t"}]
    doc["virtual_networks"] = [
        {
            "tenant": "t",
            "name": "net",
            "vnodes": [{"id": v, "mac": mac, "location": loc} for v, (mac, loc) in DATA_VNODES.items()],
            "vlinks": [{"a": "p1", "b": v} for v in ("p2", "r1", "q1")],
        }
    ]
    quiet = burst * gap + 10 * idle_timeout + 1000
    traffic = []
    for src, dst in (("p1", "p2"), ("p1", "q1")):
        for start in (0, quiet):
            traffic.append(
                {"type": "stream", "src": _ep("t", src), "dst": _ep("t", dst), "rate": 100 // gap or 1,
                 "duration": burst * gap, "start": start, "packet_size": 100}
            )
    doc["traffic"] = traffic
    return doc


def endpoints(doc: Mapping[str, Any]) -> Iterable[tuple[str, str, str]]:
    for net in doc.get("virtual_networks", []):
        for v in net["vnodes"]:
            yield net["tenant"], net["name"], v["id"]
