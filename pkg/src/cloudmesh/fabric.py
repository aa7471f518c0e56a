"""Inter-cloud tunnel overlay: MST plan, full-mesh baseline, setup-cost accounting."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any

from cloudmesh.errors import UnknownCloud
from cloudmesh.substrate import SubstrateGraph, cloud_pair


class TopologyKind(Enum):
    MST = "mst"
    FULL_MESH = "mesh"


class TunnelState(Enum):
    PLANNED = "planned"
    ESTABLISHED = "established"


@dataclass(frozen=True)
class Tunnel:
    tunnel_id: str
    endpoint_clouds: tuple[str, str]
    weight: int
    state: TunnelState = TunnelState.PLANNED

    def other(self, cloud_id: str) -> str:
        a, b = self.endpoint_clouds
        return b if cloud_id == a else a

    def to_dict(self) -> dict[str, Any]:
        return {
            "tunnel_id": self.tunnel_id,
            "endpoints": list(self.endpoint_clouds),
            "weight": self.weight,
            "state": self.state.value,
        }


def make_tunnel(graph: SubstrateGraph, a: str, b: str, prefix: str = "gre") -> Tunnel:
    pair = cloud_pair(a, b)
    return Tunnel(f"{prefix}:{pair[0]}:{pair[1]}", pair, graph.weight(*pair))


@dataclass(frozen=True)
class TunnelPlan:
    topology_kind: TopologyKind
    clouds: tuple[str, ...]
    tunnels: tuple[Tunnel, ...]

    @property
    def total_weight(self) -> int:
        return sum(t.weight for t in self.tunnels)


@dataclass(frozen=True)
class CostModel:
    c_fixed: int = 5
    c_per_weight: int = 1

    def tunnel_cost(self, tunnel: Tunnel) -> int:
        return self.c_fixed + self.c_per_weight * tunnel.weight


@dataclass(frozen=True)
class FabricState:
    plan: TunnelPlan
    established_count: int
    setup_cost: int

    @property
    def tunnels(self) -> tuple[Tunnel, ...]:
        return self.plan.tunnels

    def to_dict(self) -> dict[str, Any]:
        return {
            "topology": self.plan.topology_kind.value,
            "clouds": list(self.plan.clouds),
            "tunnels": [t.to_dict() for t in self.plan.tunnels],
            "total_weight": self.plan.total_weight,
            "established_count": self.established_count,
            "setup_cost": self.setup_cost,
        }


class _DisjointSet:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def build_mst(graph: SubstrateGraph) -> TunnelPlan:
    """Kruskal over the complete cloud graph; ties go to the smaller cloud pair."""
    clouds = graph.cloud_ids()
    edges = sorted((w, pair) for pair, w in graph.inter_cloud_weights.items())
    dsu = _DisjointSet(clouds)
    chosen: list[Tunnel] = []
    for _, (a, b) in edges:
        if dsu.union(a, b):
            chosen.append(make_tunnel(graph, a, b))
            if len(chosen) == len(clouds) - 1:
                break
    return TunnelPlan(TopologyKind.MST, tuple(clouds), tuple(chosen))


def build_full_mesh(graph: SubstrateGraph) -> TunnelPlan:
    clouds = graph.cloud_ids()
    tunnels = tuple(make_tunnel(graph, a, b) for a, b in itertools.combinations(clouds, 2))
    return TunnelPlan(TopologyKind.FULL_MESH, tuple(clouds), tunnels)


def build_plan(graph: SubstrateGraph, kind: TopologyKind | str) -> TunnelPlan:
    kind = TopologyKind(kind)
    return build_mst(graph) if kind is TopologyKind.MST else build_full_mesh(graph)


def establish(plan: TunnelPlan, cost_model: CostModel | None = None) -> FabricState:
    """Bring every tunnel up in plan order, accounting setup cost serially."""
    cost_model = cost_model or CostModel()
    cost = 0
    up = []
    for tunnel in plan.tunnels:
        cost += cost_model.tunnel_cost(tunnel)
        up.append(replace(tunnel, state=TunnelState.ESTABLISHED))
    return FabricState(replace(plan, tunnels=tuple(up)), len(up), cost)


def fabric_path(state: FabricState, cloud_a: str, cloud_b: str) -> list[Tunnel]:
    """Tunnels crossed from ``cloud_a`` to ``cloud_b``, in traversal order."""
    clouds = set(state.plan.clouds)
    for c in (cloud_a, cloud_b):
        if c not in clouds:
            raise UnknownCloud(c)
    if cloud_a == cloud_b:
        return []
    adj: dict[str, list[Tunnel]] = {c: [] for c in clouds}
    for t in state.tunnels:
        a, b = t.endpoint_clouds
        adj[a].append(t)
        adj[b].append(t)
    if state.plan.topology_kind is TopologyKind.FULL_MESH:
        pair = cloud_pair(cloud_a, cloud_b)
        return [t for t in adj[cloud_a] if t.endpoint_clouds == pair][:1]
    # BFS over the tree; sorted adjacency keeps the walk deterministic
    prev: dict[str, tuple[str, Tunnel] | None] = {cloud_a: None}
    queue = deque([cloud_a])
    while queue:
        u = queue.popleft()
        if u == cloud_b:
            break
        for t in sorted(adj[u], key=lambda t: t.endpoint_clouds):
            v = t.other(u)
            if v not in prev:
                prev[v] = (u, t)
                queue.append(v)
    if cloud_b not in prev:
        return []
    out: list[Tunnel] = []
    cur = cloud_b
    while prev[cur] is not None:
        u, t = prev[cur]
        out.append(t)
        cur = u
    out.reverse()
    return out


def fabric_cloud_route(state: FabricState, cloud_a: str, cloud_b: str) -> list[str]:
    """Cloud sequence visited along :func:`fabric_path`."""
    route = [cloud_a]
    for t in fabric_path(state, cloud_a, cloud_b):
        route.append(t.other(route[-1]))
    return route
