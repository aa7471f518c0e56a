"""Scenario files: the substrate schema extended with tenants, networks, traffic and constants."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath
from typing import Any, Mapping, Optional

from cloudmesh.errors import CloudMeshError, InvalidScenario, UnknownEndpoint
from cloudmesh.fabric import CostModel, FabricState, TopologyKind, build_plan, establish
from cloudmesh.hypervisor.core import VmRef
from cloudmesh.hypervisor.vnet import VirtualNetworkSpec
from cloudmesh.sim import traffic
from cloudmesh.sim.engine import Constants, Engine, Metrics
from cloudmesh.substrate import SubstrateGraph, substrate_from_dict, validate

SUBSTRATE_KEYS = {"clouds", "nodes", "links", "inter_cloud_weights"}
SCENARIO_KEYS = SUBSTRATE_KEYS | {
    "fabric",
    "constants",
    "virtualized",
    "tenants",
    "virtual_networks",
    "traffic",
    "migrations",
}
ENDPOINT_KEYS = {"tenant", "network", "vnode"}
TRAFFIC_KEYS = {
    "ping": {"type", "src", "dst", "count", "interval", "start", "size"},
    "stream": {"type", "src", "dst", "rate", "duration", "start", "packet_size"},
    "lldp": {"type", "src", "at"},
    "fuzz": {"type", "count", "start", "spacing", "size"},
}
MIGRATION_KEYS = {"vm", "target_cloud", "at"}


@dataclass(frozen=True)
class Endpoint:
    tenant: str
    network: str
    vnode: str

    @classmethod
    def from_dict(cls, d: Any) -> "Endpoint":
        if not isinstance(d, Mapping):
            raise InvalidScenario(f"endpoint must be an object, got {d!r}")
        _keys(d, ENDPOINT_KEYS, "endpoint", required=ENDPOINT_KEYS)
        return cls(str(d["tenant"]), str(d["network"]), str(d["vnode"]))


@dataclass(frozen=True)
class NetworkRequest:
    tenant: str
    name: str
    spec: VirtualNetworkSpec


@dataclass(frozen=True)
class ScenarioConfig:
    graph: SubstrateGraph
    fabric_kind: TopologyKind = TopologyKind.MST
    cost_model: CostModel = CostModel()
    constants: Constants = Constants()
    virtualized: bool = True
    tenants: tuple[str, ...] = ()
    networks: tuple[NetworkRequest, ...] = ()
    traffic: tuple[Mapping[str, Any], ...] = ()
    migrations: tuple[Mapping[str, Any], ...] = ()
    source: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def with_fabric(self, kind: TopologyKind | str) -> "ScenarioConfig":
        return _replace(self, fabric_kind=TopologyKind(kind))

    def with_cost_model(self, cost_model: CostModel) -> "ScenarioConfig":
        return _replace(self, cost_model=cost_model)

    def with_virtualized(self, virtualized: bool) -> "ScenarioConfig":
        return _replace(self, virtualized=virtualized)


def _replace(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(cfg, **kw)


def _keys(d: Mapping[str, Any], allowed: set[str], where: str, required: set[str] = frozenset()) -> None:
    extra = set(d) - allowed
    if extra:
        raise InvalidScenario(f"unknown keys in {where}: {sorted(extra)}")
    missing = set(required) - set(d)
    if missing:
        raise InvalidScenario(f"{where} lacks {sorted(missing)}")


def _int(d: Mapping[str, Any], key: str, default: Optional[int] = None, minimum: int = 0) -> int:
    v = d.get(key, default)
    if v is None or isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise InvalidScenario(f"{key} must be an integer >= {minimum}, got {v!r}")
    return v


def _parse_fabric(raw: Any) -> tuple[TopologyKind, CostModel]:
    if raw is None:
        return TopologyKind.MST, CostModel()
    if isinstance(raw, str):
        try:
            return TopologyKind(raw), CostModel()
        except ValueError:
            raise InvalidScenario(f"fabric must be 'mst' or 'mesh', got {raw!r}") from None
    if isinstance(raw, Mapping):
        _keys(raw, {"kind", "cost_fixed", "cost_per_weight"}, "fabric")
        kind, _ = _parse_fabric(raw.get("kind", "mst"))
        return kind, CostModel(_int(raw, "cost_fixed", 5), _int(raw, "cost_per_weight", 1))
    raise InvalidScenario(f"bad fabric entry {raw!r}")


def scenario_from_dict(doc: Mapping[str, Any]) -> ScenarioConfig:
    """Validate and parse a scenario document.  Nothing is simulated here."""
    if not isinstance(doc, Mapping):
        raise InvalidScenario("scenario must be a JSON object")
    _keys(doc, SCENARIO_KEYS, "scenario")
    graph = substrate_from_dict({k: v for k, v in doc.items() if k in SUBSTRATE_KEYS})
    report = validate(graph)
    if not report.ok:
        raise InvalidScenario(f"substrate invalid: {', '.join(report.codes())}")
    kind, cost_model = _parse_fabric(doc.get("fabric"))
    try:
        constants = Constants.from_dict(doc.get("constants", {}))
    except TypeError as exc:
        raise InvalidScenario(str(exc)) from exc
    virtualized = doc.get("virtualized", True)
    if not isinstance(virtualized, bool):
        raise InvalidScenario("virtualized must be a boolean")

    tenants: list[str] = []
    for t in doc.get("tenants", []):
        _keys(t, {"name"}, "tenant", required={"name"})
        if t["name"] in tenants:
            raise InvalidScenario(f"duplicate tenant {t['name']!r}")
        tenants.append(str(t["name"]))

    networks: list[NetworkRequest] = []
    seen = set()
    for n in doc.get("virtual_networks", []):
        _keys(n, {"tenant", "name", "vnodes", "vlinks"}, "virtual network", required={"tenant", "name", "vnodes"})
        if n["tenant"] not in tenants:
            raise InvalidScenario(f"virtual network {n['name']!r} names unknown tenant {n['tenant']!r}")
        key = (n["tenant"], n["name"])
        if key in seen:
            raise InvalidScenario(f"duplicate virtual network {key}")
        seen.add(key)
        try:
            spec = VirtualNetworkSpec.from_dict({k: n[k] for k in ("vnodes", "vlinks") if k in n})
        except CloudMeshError as exc:
            raise InvalidScenario(f"virtual network {n['name']!r}: {exc}") from exc
        networks.append(NetworkRequest(str(n["tenant"]), str(n["name"]), spec))

    vnodes = {(r.tenant, r.name): {v.vnode_id for v in r.spec.vnodes} for r in networks}

    def check_endpoint(raw: Any) -> Endpoint:
        ep = Endpoint.from_dict(raw)
        if ep.vnode not in vnodes.get((ep.tenant, ep.network), ()):
            raise InvalidScenario(f"unknown endpoint {ep}")
        return ep

    flows = []
    for item in doc.get("traffic", []):
        if not isinstance(item, Mapping) or item.get("type") not in TRAFFIC_KEYS:
            raise InvalidScenario(f"traffic entry needs a type in {sorted(TRAFFIC_KEYS)}")
        _keys(item, TRAFFIC_KEYS[item["type"]], f"{item['type']} traffic")
        if item["type"] in ("ping", "stream"):
            src, dst = check_endpoint(item.get("src")), check_endpoint(item.get("dst"))
            if (src.tenant, src.network) != (dst.tenant, dst.network):
                raise InvalidScenario("traffic endpoints must share a virtual network")
        if item["type"] == "ping":
            _int(item, "count", minimum=1)
            _int(item, "interval", 1, 1)
            _int(item, "start", 0)
            _int(item, "size", 64, 1)
        elif item["type"] == "stream":
            _int(item, "rate", minimum=1)
            _int(item, "duration", minimum=1)
            _int(item, "start", 0)
            _int(item, "packet_size", 100, 1)
        elif item["type"] == "lldp":
            check_endpoint(item.get("src"))
            _int(item, "at", 0)
        else:
            _int(item, "count", minimum=0)
            _int(item, "start", 0)
            _int(item, "spacing", 1, 1)
            _int(item, "size", 64, 1)
        flows.append(item)

    migrations = []
    for mig in doc.get("migrations", []):
        _keys(mig, MIGRATION_KEYS, "migration", required={"vm", "target_cloud"})
        check_endpoint(mig["vm"])
        if mig["target_cloud"] not in graph.clouds:
            raise InvalidScenario(f"unknown target cloud {mig['target_cloud']!r}")
        _int(mig, "at", 0)
        migrations.append(mig)

    return ScenarioConfig(
        graph=graph,
        fabric_kind=kind,
        cost_model=cost_model,
        constants=constants,
        virtualized=virtualized,
        tenants=tuple(tenants),
        networks=tuple(networks),
        traffic=tuple(flows),
        migrations=tuple(migrations),
        source=doc,
    )


def load_scenario(path: str | FsPath) -> ScenarioConfig:
    try:
        doc = json.loads(FsPath(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidScenario(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(doc)


@dataclass
class Built:
    """An engine with the scenario's tenants and networks set up and traffic scheduled."""

    engine: Engine
    fabric: FabricState
    tenant_ids: dict[str, int]
    network_ids: dict[tuple[str, str], int]
    generators: list[tuple[Mapping[str, Any], int]]
    migrations: list[int]

    def resolve(self, ep: Endpoint | Mapping[str, Any]) -> VmRef:
        if not isinstance(ep, Endpoint):
            ep = Endpoint.from_dict(ep)
        try:
            tid = self.tenant_ids[ep.tenant]
            vn = self.network_ids[(ep.tenant, ep.network)]
        except KeyError:
            raise UnknownEndpoint(str(ep)) from None
        return self.engine.endpoint(tid, vn, ep.vnode)


def build(cfg: ScenarioConfig, seed: int = 0) -> Built:
    fabric = establish(build_plan(cfg.graph, cfg.fabric_kind), cfg.cost_model)
    engine = Engine(
        cfg.graph, fabric, constants=cfg.constants, virtualized=cfg.virtualized, cost_model=cfg.cost_model
    )
    tenant_ids = {name: engine.add_tenant() for name in cfg.tenants}
    network_ids = {}
    for req in cfg.networks:
        network_ids[(req.tenant, req.name)] = engine.add_network(tenant_ids[req.tenant], req.spec)
    built = Built(engine, fabric, tenant_ids, network_ids, [], [])
    rng = random.Random(seed)
    for item in cfg.traffic:
        kind = item["type"]
        if kind == "ping":
            gid = traffic.ping_generator(
                engine,
                built.resolve(item["src"]),
                built.resolve(item["dst"]),
                item["count"],
                item.get("interval", 1),
                item.get("start", 0),
                item.get("size", 64),
            )
        elif kind == "stream":
            gid = traffic.stream_generator(
                engine,
                built.resolve(item["src"]),
                built.resolve(item["dst"]),
                item["rate"],
                item["duration"],
                item.get("start", 0),
                item.get("packet_size", 100),
            )
        elif kind == "lldp":
            engine.probe_lldp(built.resolve(item["src"]), at=item.get("at", 0))
            gid = 0
        else:
            gid = traffic.fuzz_generator(
                engine, rng, item["count"], item.get("start", 0), item.get("spacing", 1), item.get("size", 64)
            )
        built.generators.append((item, gid))
    if cfg.migrations:
        from cloudmesh.migration.protocol import schedule_migration

        for mig in cfg.migrations:
            built.migrations.append(
                schedule_migration(engine, built.resolve(mig["vm"]), mig["target_cloud"], at=mig.get("at", 0))
            )
    return built


def run(cfg: ScenarioConfig, seed: int = 0) -> Metrics:
    """Simulate ``cfg`` to quiescence (or the tick limit) and return its metrics."""
    return build(cfg, seed).engine.run()
