from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudmesh.errors import (
    DifferentClouds,
    DuplicateCloudId,
    HardwareSwitchInPublicCloud,
    InvalidScenario,
    NoPath,
    UnknownCloud,
)
from cloudmesh.substrate import (
    CloudDescriptor,
    CloudKind,
    NodeRole,
    SubstrateGraph,
    SubstrateLink,
    SubstrateNode,
    add_cloud,
    add_link,
    add_node,
    intra_cloud_path,
    substrate_from_dict,
    substrate_to_dict,
    validate,
)


def public(cid: str) -> CloudDescriptor:
    return CloudDescriptor(cid, CloudKind.PUBLIC, f"region-{cid}")


def private(cid: str) -> CloudDescriptor:
    return CloudDescriptor(cid, CloudKind.PRIVATE, f"region-{cid}")


def test_add_cloud_to_empty_graph():
    g = add_cloud(SubstrateGraph(), public("aws-eu"))
    assert list(g.clouds) == ["aws-eu"] and not g.nodes


def test_add_cloud_records_caller_weight():
    g = add_cloud(SubstrateGraph(), public("A"))
    g = add_cloud(g, public("B"), {"A": 7})
    assert dict(g.inter_cloud_weights) == {("A", "B"): 7}


def test_add_cloud_defaults_weight_to_one():
    g = add_cloud(add_cloud(SubstrateGraph(), public("A")), public("B"))
    assert g.weight("A", "B") == 1


def test_duplicate_cloud_rejected():
    g = add_cloud(SubstrateGraph(), public("A"))
    with pytest.raises(DuplicateCloudId):
        add_cloud(g, public("A"))


def test_add_node_checks():
    g = add_cloud(SubstrateGraph(), public("A"))
    g = add_node(g, SubstrateNode("A-h1", "A", NodeRole.VM, 2))
    assert "A-h1" in g.nodes
    with pytest.raises(HardwareSwitchInPublicCloud):
        add_node(g, SubstrateNode("A-sw", "A", NodeRole.HARDWARE_SWITCH))
    with pytest.raises(UnknownCloud):
        add_node(g, SubstrateNode("Z-h1", "Z", NodeRole.VM, 1))


def _two_clouds() -> SubstrateGraph:
    g = add_cloud(add_cloud(SubstrateGraph(), public("A")), private("B"))
    g = add_node(g, SubstrateNode("A-gw", "A", NodeRole.GATEWAY))
    return add_node(g, SubstrateNode("B-gw", "B", NodeRole.GATEWAY))


def test_validate_well_formed():
    assert validate(_two_clouds()).ok


def test_second_gateway_is_deferred_to_validate():
    g = add_node(_two_clouds(), SubstrateNode("A-gw2", "A", NodeRole.GATEWAY))
    assert validate(g).codes() == ["MultipleGateways"]


def test_missing_gateway():
    g = add_cloud(_two_clouds(), public("C"))
    assert "MissingGateway" in validate(g).codes()


def test_cross_cloud_link():
    g = add_link(_two_clouds(), SubstrateLink("A-gw", "B-gw"))
    assert "CrossCloudLink" in validate(g).codes()


def test_dangling_link():
    g = add_link(_two_clouds(), SubstrateLink("B-gw", "B-nowhere"))
    assert "DanglingLink" in validate(g).codes()


def test_gateway_hosting_vms_is_informational():
    g = add_cloud(SubstrateGraph(), public("A"))
    g = add_node(g, SubstrateNode("A-gw", "A", NodeRole.GATEWAY, 3))
    report = validate(g)
    assert report.ok and [v.code for v in report.info] == ["GatewayHostsVms"]


def test_public_cloud_path_is_one_hop():
    g = add_cloud(SubstrateGraph(), public("A"))
    for i in range(20):
        g = add_node(g, SubstrateNode(f"A-h{i:02d}", "A", NodeRole.VM, 1))
    p = intra_cloud_path(g, "A-h00", "A-h19")
    assert p.nodes == ("A-h00", "A-h19") and p.cost == 1


def _private_line() -> SubstrateGraph:
    g = add_cloud(SubstrateGraph(), private("P"))
    for n in "ABC":
        g = add_node(g, SubstrateNode(n, "P", NodeRole.VM, 1))
    g = add_link(g, SubstrateLink("A", "B", 3))
    return add_link(g, SubstrateLink("B", "C", 4))


def test_private_line_path():
    p = intra_cloud_path(_private_line(), "A", "C")
    assert p.nodes == ("A", "B", "C") and p.cost == 7


def test_equal_cost_tie_goes_to_smaller_sequence():
    g = add_cloud(SubstrateGraph(), private("P"))
    for n in ("s", "x", "y", "t"):
        g = add_node(g, SubstrateNode(n, "P", NodeRole.VM, 1))
    for a, b in (("s", "y"), ("y", "t"), ("s", "x"), ("x", "t")):
        g = add_link(g, SubstrateLink(a, b, 2))
    assert intra_cloud_path(g, "s", "t").nodes == ("s", "x", "t")


def test_path_errors():
    g = add_node(_private_line(), SubstrateNode("D", "P", NodeRole.VM, 1))
    with pytest.raises(NoPath):
        intra_cloud_path(g, "A", "D")
    g = add_cloud(g, public("Q"))
    g = add_node(g, SubstrateNode("Q-h", "Q", NodeRole.VM, 1))
    with pytest.raises(DifferentClouds):
        intra_cloud_path(g, "A", "Q-h")


def brute_force_path(nodes, edges, a, b):
    """Minimum (cost, sequence) over every simple path, by enumeration."""
    w = {}
    for (u, v), c in edges.items():
        w[(u, v)] = w[(v, u)] = c
    middle = [n for n in nodes if n not in (a, b)]
    best = None
    for k in range(len(middle) + 1):
        for perm in itertools.permutations(middle, k):
            seq = (a, *perm, b)
            if all((x, y) in w for x, y in zip(seq, seq[1:])):
                label = (sum(w[(x, y)] for x, y in zip(seq, seq[1:])), seq)
                if best is None or label < best:
                    best = label
    return best


@st.composite
def private_graphs(draw):
    n = draw(st.integers(2, 8))
    names = [f"n{i}" for i in range(n)]
    pairs = list(itertools.combinations(names, 2))
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    edges = {p: draw(st.integers(1, 5)) for p in chosen}
    a, b = draw(st.sampled_from(list(itertools.permutations(names, 2))))
    return names, edges, a, b


@settings(max_examples=200, deadline=None)
@given(private_graphs())
def test_private_path_matches_exhaustive_oracle(case):
    names, edges, a, b = case
    g = add_cloud(SubstrateGraph(), private("P"))
    for n in names:
        g = add_node(g, SubstrateNode(n, "P", NodeRole.VM, 1))
    for (u, v), c in edges.items():
        g = add_link(g, SubstrateLink(u, v, c))
    expected = brute_force_path(names, edges, a, b)
    if expected is None:
        with pytest.raises(NoPath):
            intra_cloud_path(g, a, b)
    else:
        p = intra_cloud_path(g, a, b)
        assert (p.cost, p.nodes) == expected


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=5))
def test_operations_never_mutate_earlier_graphs(weights):
    g0 = add_node(add_cloud(SubstrateGraph(), public("c0")), SubstrateNode("c0-gw", "c0", NodeRole.GATEWAY))
    before = substrate_to_dict(g0)
    report = validate(g0)
    g = g0
    for i, w in enumerate(weights, start=1):
        g = add_cloud(g, public(f"c{i}"), {"c0": w})
        g = add_node(g, SubstrateNode(f"c{i}-gw", f"c{i}", NodeRole.GATEWAY))
    assert substrate_to_dict(g0) == before
    assert validate(g0) == report


def test_json_round_trip(three_clouds):
    sub = {k: three_clouds[k] for k in ("clouds", "nodes", "links", "inter_cloud_weights")}
    g = substrate_from_dict(sub)
    assert substrate_from_dict(substrate_to_dict(g)) == g


def test_loader_rejects_unknown_keys(three_clouds):
    sub = {k: three_clouds[k] for k in ("clouds", "nodes", "links", "inter_cloud_weights")}
    sub["extra"] = 1
    with pytest.raises(InvalidScenario):
        substrate_from_dict(sub)
    sub.pop("extra")
    sub["nodes"][0]["colour"] = "red"
    with pytest.raises(InvalidScenario):
        substrate_from_dict(sub)
