"""Multi-cloud substrate: clouds, nodes, intra-cloud links and inter-cloud weights.

Public clouds are treated as a "big switch": every pair of local nodes is
one logical hop apart at cost 1.  Private clouds carry an explicit link set
and paths are computed over it.

Every operation returns a new :class:`SubstrateGraph`; a graph handed out
earlier is never modified.
"""

from __future__ import annotations

import heapq
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from cloudmesh.errors import (
    DifferentClouds,
    DuplicateCloudId,
    HardwareSwitchInPublicCloud,
    InvalidScenario,
    NoPath,
    UnknownCloud,
    UnknownNode,
)


class CloudKind(Enum):
    PUBLIC = "public"
    PRIVATE = "private"


class NodeRole(Enum):
    VM = "vm"
    GATEWAY = "gateway"
    HARDWARE_SWITCH = "hardware_switch"


HOSTING_ROLES = frozenset({NodeRole.VM, NodeRole.GATEWAY})


@dataclass(frozen=True)
class CloudDescriptor:
    cloud_id: str
    kind: CloudKind
    region_label: str = ""


@dataclass(frozen=True)
class SubstrateNode:
    node_id: str
    cloud_id: str
    role: NodeRole
    capacity: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise ValueError(f"capacity of {self.node_id} must be non-negative")


@dataclass(frozen=True)
class SubstrateLink:
    a: str
    b: str
    weight: int = 1
    bandwidth: int = 1000

    def __post_init__(self) -> None:
        if self.weight < 1 or self.bandwidth < 1:
            raise ValueError(f"link {self.a}-{self.b}: weight and bandwidth must be >= 1")
        if self.a == self.b:
            raise ValueError(f"self-loop on {self.a}")
        # canonical endpoint order so (a, b) and (b, a) compare equal
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)


def cloud_pair(a: str, b: str) -> tuple[str, str]:
    """Canonical unordered cloud pair."""
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class Path:
    nodes: tuple[str, ...]
    cost: int

    @property
    def hops(self) -> int:
        return len(self.nodes) - 1


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    info: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


@dataclass(frozen=True, eq=True)
class SubstrateGraph:
    clouds: Mapping[str, CloudDescriptor] = field(default_factory=dict)
    nodes: Mapping[str, SubstrateNode] = field(default_factory=dict)
    links: tuple[SubstrateLink, ...] = ()
    inter_cloud_weights: Mapping[tuple[str, str], int] = field(default_factory=dict)

    # -- lookups -----------------------------------------------------------
    def cloud(self, cloud_id: str) -> CloudDescriptor:
        try:
            return self.clouds[cloud_id]
        except KeyError:
            raise UnknownCloud(cloud_id) from None

    def node(self, node_id: str) -> SubstrateNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def cloud_ids(self) -> list[str]:
        return sorted(self.clouds)

    def nodes_in(self, cloud_id: str) -> list[SubstrateNode]:
        return sorted(
            (n for n in self.nodes.values() if n.cloud_id == cloud_id),
            key=lambda n: n.node_id,
        )

    def gateway_of(self, cloud_id: str) -> str:
        gws = [n.node_id for n in self.nodes_in(cloud_id) if n.role is NodeRole.GATEWAY]
        if not gws:
            raise UnknownNode(f"cloud {cloud_id} has no gateway")
        return gws[0]

    def weight(self, a: str, b: str) -> int:
        return self.inter_cloud_weights[cloud_pair(a, b)]

    def adjacency(self, cloud_id: str) -> dict[str, dict[str, int]]:
        """Explicit intra-cloud adjacency (private clouds) as node -> {nbr: weight}."""
        adj: dict[str, dict[str, int]] = {n.node_id: {} for n in self.nodes_in(cloud_id)}
        for link in self.links:
            if link.a in adj and link.b in adj:
                # parallel links collapse to the cheapest one
                w = min(link.weight, adj[link.a].get(link.b, link.weight))
                adj[link.a][link.b] = w
                adj[link.b][link.a] = w
        return adj

    def link_between(self, a: str, b: str) -> SubstrateLink | None:
        best = None
        key = (a, b) if a <= b else (b, a)
        for link in self.links:
            if link.endpoints == key and (best is None or link.weight < best.weight):
                best = link
        return best


# -- construction --------------------------------------------------------------


def add_cloud(
    graph: SubstrateGraph,
    desc: CloudDescriptor,
    weights: Mapping[str, int] | None = None,
    default_weight: int = 1,
) -> SubstrateGraph:
    """Return ``graph`` plus ``desc``; new cloud pairs get ``weights[other]`` or the default."""
    if desc.cloud_id in graph.clouds:
        raise DuplicateCloudId(desc.cloud_id)
    weights = dict(weights or {})
    unknown = set(weights) - set(graph.clouds)
    if unknown:
        raise UnknownCloud(", ".join(sorted(unknown)))
    icw = dict(graph.inter_cloud_weights)
    for other in graph.clouds:
        w = weights.get(other, default_weight)
        if w < 1:
            raise ValueError(f"inter-cloud weight {desc.cloud_id}-{other} must be >= 1")
        icw[cloud_pair(desc.cloud_id, other)] = w
    clouds = dict(graph.clouds)
    clouds[desc.cloud_id] = desc
    return replace(graph, clouds=clouds, inter_cloud_weights=icw)


def set_inter_cloud_weight(graph: SubstrateGraph, a: str, b: str, weight: int) -> SubstrateGraph:
    graph.cloud(a)
    graph.cloud(b)
    if a == b:
        raise ValueError("inter-cloud weight needs two distinct clouds")
    if weight < 1:
        raise ValueError("inter-cloud weight must be >= 1")
    icw = dict(graph.inter_cloud_weights)
    icw[cloud_pair(a, b)] = weight
    return replace(graph, inter_cloud_weights=icw)


def add_node(graph: SubstrateGraph, node: SubstrateNode) -> SubstrateGraph:
    cloud = graph.cloud(node.cloud_id)
    if node.role is NodeRole.HARDWARE_SWITCH and cloud.kind is CloudKind.PUBLIC:
        raise HardwareSwitchInPublicCloud(node.node_id)
    if node.node_id in graph.nodes:
        raise ValueError(f"duplicate node id {node.node_id}")
    nodes = dict(graph.nodes)
    nodes[node.node_id] = node
    return replace(graph, nodes=nodes)


def add_link(graph: SubstrateGraph, link: SubstrateLink) -> SubstrateGraph:
    # endpoint/cloud checks are deferred to validate()
    return replace(graph, links=graph.links + (link,))


def validate(graph: SubstrateGraph) -> ValidationReport:
    violations: list[Violation] = []
    info: list[Violation] = []
    for cid in graph.cloud_ids():
        gws = [n for n in graph.nodes_in(cid) if n.role is NodeRole.GATEWAY]
        if not gws:
            violations.append(Violation("MissingGateway", cid))
        elif len(gws) > 1:
            violations.append(
                Violation("MultipleGateways", cid, ",".join(g.node_id for g in gws))
            )
        for gw in gws:
            if gw.capacity > 0:
                info.append(Violation("GatewayHostsVms", gw.node_id))
    for node in sorted(graph.nodes.values(), key=lambda n: n.node_id):
        if node.cloud_id not in graph.clouds:
            violations.append(Violation("UnknownCloud", node.node_id, node.cloud_id))
    for link in graph.links:
        name = f"{link.a}-{link.b}"
        ends = [graph.nodes.get(link.a), graph.nodes.get(link.b)]
        if None in ends:
            violations.append(Violation("DanglingLink", name))
            continue
        a, b = ends
        if a.cloud_id != b.cloud_id:
            violations.append(Violation("CrossCloudLink", name))
        elif graph.clouds[a.cloud_id].kind is CloudKind.PUBLIC:
            violations.append(Violation("PublicCloudLink", name))
    ids = set(graph.clouds)
    for a in ids:
        for b in ids:
            if a < b and cloud_pair(a, b) not in graph.inter_cloud_weights:
                violations.append(Violation("MissingInterCloudWeight", f"{a}-{b}"))
    return ValidationReport(tuple(violations), tuple(info))


# -- paths ---------------------------------------------------------------------


def shortest_path(
    adj: Mapping[str, Mapping[str, int]],
    src: str,
    dst: str,
    banned_nodes: Iterable[str] = (),
    banned_edges: Iterable[tuple[str, str]] = (),
) -> Path | None:
    """Minimum-weight path; equal-cost ties go to the lexicographically smallest node sequence.

    Labels are compared as ``(cost, node_sequence)`` tuples.  With positive
    weights the prefix of a lexicographically minimal shortest path is itself
    lexicographically minimal, so a label-setting search is exact.
    """
    banned = set(banned_nodes) - {src, dst}
    bad_edges = {frozenset(e) for e in banned_edges}
    best: dict[str, tuple[int, tuple[str, ...]]] = {src: (0, (src,))}
    heap: list[tuple[int, tuple[str, ...]]] = [(0, (src,))]
    done: set[str] = set()
    while heap:
        cost, seq = heapq.heappop(heap)
        u = seq[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return Path(seq, cost)
        for v, w in adj.get(u, {}).items():
            if v in done or v in banned or frozenset((u, v)) in bad_edges:
                continue
            label = (cost + w, seq + (v,))
            if v not in best or label < best[v]:
                best[v] = label
                heapq.heappush(heap, label)
    return None


def intra_cloud_path(graph: SubstrateGraph, a: str, b: str) -> Path:
    na, nb = graph.node(a), graph.node(b)
    if na.cloud_id != nb.cloud_id:
        raise DifferentClouds(f"{a} in {na.cloud_id}, {b} in {nb.cloud_id}")
    if a == b:
        return Path((a,), 0)
    if graph.cloud(na.cloud_id).kind is CloudKind.PUBLIC:
        return Path((a, b), 1)
    path = shortest_path(graph.adjacency(na.cloud_id), a, b)
    if path is None:
        raise NoPath(f"{a} -> {b}")
    return path


def intra_cloud_paths(graph: SubstrateGraph, a: str, b: str, k: int) -> list[Path]:
    """Up to ``k`` paths, preferring node-disjoint, then edge-disjoint alternatives.

    When fewer distinct paths exist the cheapest one is repeated so that the
    result always has length ``k``.
    """
    first = intra_cloud_path(graph, a, b)
    paths = [first]
    cloud = graph.node(a).cloud_id
    if graph.cloud(cloud).kind is CloudKind.PUBLIC or a == b:
        return paths * k
    adj = graph.adjacency(cloud)
    while len(paths) < k:
        used_nodes = {n for p in paths for n in p.nodes[1:-1]}
        used_edges = {(p.nodes[i], p.nodes[i + 1]) for p in paths for i in range(p.hops)}
        nxt = shortest_path(adj, a, b, banned_nodes=used_nodes, banned_edges=used_edges)
        if nxt is None:
            nxt = shortest_path(adj, a, b, banned_edges=used_edges)
        if nxt is None or nxt in paths:
            break
        paths.append(nxt)
    while len(paths) < k:
        paths.append(first)
    return paths


# -- JSON ----------------------------------------------------------------------

_TOP_KEYS = {"clouds", "nodes", "links", "inter_cloud_weights"}


def _check_keys(obj: Any, allowed: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise InvalidScenario(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise InvalidScenario(f"{where}: unknown keys {sorted(extra)}")


def substrate_from_dict(doc: Mapping[str, Any], strict: bool = True) -> SubstrateGraph:
    """Build a graph from the scenario-file substrate section.

    Only the four substrate keys are accepted when ``strict`` is true.
    """
    if strict:
        _check_keys(doc, _TOP_KEYS, "substrate")
    graph = SubstrateGraph()
    try:
        for c in doc.get("clouds", []):
            _check_keys(c, {"id", "kind", "region"}, "cloud")
            graph = add_cloud(graph, CloudDescriptor(c["id"], CloudKind(c["kind"]), c.get("region", "")))
        for n in doc.get("nodes", []):
            _check_keys(n, {"id", "cloud", "role", "capacity"}, "node")
            graph = add_node(
                graph, SubstrateNode(n["id"], n["cloud"], NodeRole(n["role"]), int(n.get("capacity", 0)))
            )
        for link in doc.get("links", []):
            _check_keys(link, {"a", "b", "weight", "bandwidth"}, "link")
            graph = add_link(
                graph,
                SubstrateLink(link["a"], link["b"], int(link.get("weight", 1)), int(link.get("bandwidth", 1000))),
            )
        for entry in doc.get("inter_cloud_weights", []):
            _check_keys(entry, {"clouds", "weight"}, "inter_cloud_weights entry")
            a, b = entry["clouds"]
            graph = set_inter_cloud_weight(graph, a, b, int(entry["weight"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise InvalidScenario(f"bad substrate description: {exc!r}") from exc
    return graph


def substrate_to_dict(graph: SubstrateGraph) -> dict[str, Any]:
    return {
        "clouds": [
            {"id": c.cloud_id, "kind": c.kind.value, "region": c.region_label}
            for c in (graph.clouds[k] for k in graph.cloud_ids())
        ],
        "nodes": [
            {"id": n.node_id, "cloud": n.cloud_id, "role": n.role.value, "capacity": n.capacity}
            for n in sorted(graph.nodes.values(), key=lambda n: n.node_id)
        ],
        "links": [
            {"a": l.a, "b": l.b, "weight": l.weight, "bandwidth": l.bandwidth}
            for l in sorted(graph.links, key=lambda l: (l.a, l.b, l.weight))
        ],
        "inter_cloud_weights": [
            {"clouds": list(pair), "weight": w} for pair, w in sorted(graph.inter_cloud_weights.items())
        ],
    }
