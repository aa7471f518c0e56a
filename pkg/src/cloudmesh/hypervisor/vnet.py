"""Tenant virtual network requests and their embedding onto the substrate."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any, Optional

from cloudmesh.errors import CapacityExceeded, InfeasibleConstraint, InvalidVirtualNetwork
from cloudmesh.fabric import FabricState, fabric_path
from cloudmesh.hypervisor.tagging import MAC_LIMIT, mac_from_str, mac_to_str
from cloudmesh.substrate import HOSTING_ROLES, Path, SubstrateGraph, intra_cloud_paths


@dataclass(frozen=True)
class VirtualNode:
    vnode_id: str
    virtual_mac: int
    location_constraint: Optional[str] = None


@dataclass(frozen=True)
class VirtualLink:
    a: str
    b: str
    multipath: int = 1

    @property
    def key(self) -> tuple[str, str]:
        return (self.a, self.b)


@dataclass(frozen=True)
class VirtualNetworkSpec:
    vnodes: tuple[VirtualNode, ...]
    vlinks: tuple[VirtualLink, ...] = ()

    def __post_init__(self) -> None:
        ids = [v.vnode_id for v in self.vnodes]
        if len(set(ids)) != len(ids):
            raise InvalidVirtualNetwork("duplicate vnode ids")
        macs = [v.virtual_mac for v in self.vnodes]
        if len(set(macs)) != len(macs):
            raise InvalidVirtualNetwork("duplicate virtual MACs")
        if any(not 0 <= m < MAC_LIMIT for m in macs):
            raise InvalidVirtualNetwork("virtual MAC outside 48 bits")
        known = set(ids)
        seen = set()
        for link in self.vlinks:
            if link.a not in known or link.b not in known:
                raise InvalidVirtualNetwork(f"vlink {link.a}-{link.b} references unknown vnode")
            if link.a == link.b:
                raise InvalidVirtualNetwork(f"vlink self-loop on {link.a}")
            if link.multipath < 1:
                raise InvalidVirtualNetwork("multipath must be >= 1")
            pair = frozenset(link.key)
            if pair in seen:
                raise InvalidVirtualNetwork(f"duplicate vlink {link.a}-{link.b}")
            seen.add(pair)

    def vnode(self, vnode_id: str) -> VirtualNode:
        for v in self.vnodes:
            if v.vnode_id == vnode_id:
                return v
        raise KeyError(vnode_id)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "VirtualNetworkSpec":
        extra = set(doc) - {"vnodes", "vlinks"}
        if extra:
            raise InvalidVirtualNetwork(f"unknown keys {sorted(extra)}")
        try:
            vnodes = tuple(
                VirtualNode(str(v["id"]), mac_from_str(v["mac"]), v.get("location"))
                for v in doc["vnodes"]
            )
            vlinks = tuple(
                VirtualLink(str(l["a"]), str(l["b"]), int(l.get("multipath", 1)))
                for l in doc.get("vlinks", [])
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidVirtualNetwork(f"bad virtual network document: {exc!r}") from exc
        return cls(vnodes, vlinks)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"vnodes": [], "vlinks": []}
        for v in self.vnodes:
            d = {"id": v.vnode_id, "mac": mac_to_str(v.virtual_mac)}
            if v.location_constraint is not None:
                d["location"] = v.location_constraint
            out["vnodes"].append(d)
        for l in self.vlinks:
            out["vlinks"].append({"a": l.a, "b": l.b, "multipath": l.multipath})
        return out


@dataclass
class Embedding:
    vnode_map: dict[str, str] = field(default_factory=dict)
    vlink_map: dict[tuple[str, str], list[Path]] = field(default_factory=dict)


def cloud_matches(graph: SubstrateGraph, cloud_id: str, constraint: str) -> bool:
    c = graph.cloud(cloud_id)
    return constraint in (c.cloud_id, c.region_label)


def hosting_index(graph: SubstrateGraph) -> dict[str, list[str]]:
    return {
        cid: [n.node_id for n in graph.nodes_in(cid) if n.role in HOSTING_ROLES]
        for cid in graph.cloud_ids()
    }


def place_vnodes(
    spec: VirtualNetworkSpec,
    graph: SubstrateGraph,
    remaining: Mapping[str, int],
    hosts_by_cloud: Optional[Mapping[str, list[str]]] = None,
) -> tuple[dict[str, str], dict[str, int]]:
    """Greedy first-fit placement.

    Candidate clouds are those matching the vnode's location constraint (all
    clouds when unconstrained), tried by decreasing remaining capacity, then
    cloud id; inside a cloud the first hosting node by id with a free slot wins.
    Returns the placement and the updated capacity map; ``remaining`` is not
    modified.
    """
    left = dict(remaining)
    placement: dict[str, str] = {}
    if hosts_by_cloud is None:
        hosts_by_cloud = hosting_index(graph)
    cloud_left = {c: sum(left.get(h, 0) for h in hosts) for c, hosts in hosts_by_cloud.items()}
    for vnode in spec.vnodes:
        if vnode.location_constraint is None:
            clouds = graph.cloud_ids()
        else:
            clouds = [c for c in graph.cloud_ids() if cloud_matches(graph, c, vnode.location_constraint)]
            if not clouds:
                raise InfeasibleConstraint(
                    f"no cloud matches location {vnode.location_constraint!r} for {vnode.vnode_id}"
                )
        ranked = sorted(clouds, key=lambda c: (-cloud_left[c], c))
        choice = next(
            ((c, h) for c in ranked if cloud_left[c] > 0 for h in hosts_by_cloud[c] if left.get(h, 0) > 0),
            None,
        )
        if choice is None:
            raise CapacityExceeded(f"no free slot for {vnode.vnode_id}")
        cloud, host = choice
        left[host] -= 1
        cloud_left[cloud] -= 1
        placement[vnode.vnode_id] = host
    return placement, left


def substrate_paths(
    graph: SubstrateGraph, fabric: FabricState, src: str, dst: str, k: int = 1
) -> list[Path]:
    """``k`` substrate paths from host ``src`` to host ``dst``.

    Hosts in different clouds are joined through their gateways along the
    tunnel fabric.
    """
    ca, cb = graph.node(src).cloud_id, graph.node(dst).cloud_id
    if ca == cb:
        return intra_cloud_paths(graph, src, dst, k)
    gw_a, gw_b = graph.gateway_of(ca), graph.gateway_of(cb)
    heads = intra_cloud_paths(graph, src, gw_a, k)
    tails = intra_cloud_paths(graph, gw_b, dst, k)
    middle: list[str] = []
    tunnel_cost = 0
    here = ca
    for tunnel in fabric_path(fabric, ca, cb):
        here = tunnel.other(here)
        middle.append(graph.gateway_of(here))
        tunnel_cost += tunnel.weight
    out = []
    for head, tail in zip(heads, tails):
        nodes = head.nodes + tuple(middle[:-1]) + tail.nodes
        out.append(Path(nodes, head.cost + tunnel_cost + tail.cost))
    return out


def embed(
    spec: VirtualNetworkSpec,
    graph: SubstrateGraph,
    fabric: FabricState,
    remaining: Mapping[str, int],
    hosts_by_cloud: Optional[Mapping[str, list[str]]] = None,
) -> tuple[Embedding, dict[str, int]]:
    placement, left = place_vnodes(spec, graph, remaining, hosts_by_cloud)
    emb = Embedding(vnode_map=placement)
    for link in spec.vlinks:
        emb.vlink_map[link.key] = substrate_paths(
            graph, fabric, placement[link.a], placement[link.b], link.multipath
        )
    return emb, left
