from __future__ import annotations

import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudmesh.bench import oracles, workloads
from cloudmesh.errors import UnknownCloud
from cloudmesh.fabric import (
    CostModel,
    TopologyKind,
    TunnelState,
    build_full_mesh,
    build_mst,
    build_plan,
    establish,
    fabric_cloud_route,
    fabric_path,
)


def weighted_graph(n: int, seed: int, hi: int = 20):
    rng = random.Random(seed)
    ids = workloads.cloud_ids(n)
    weights = {(a, b): rng.randint(1, hi) for a, b in itertools.combinations(ids, 2)}
    return workloads.multi_cloud_graph(n, weights), ids, weights


def subset_minimum(ids, weights) -> int:
    """Cheapest spanning tree by trying every (n-1)-edge subset; independent of the Prüfer oracle."""
    n = len(ids)
    if n < 2:
        return 0
    best = None
    for subset in itertools.combinations(weights.items(), n - 1):
        parent = {c: c for c in ids}

        def root(x):
            while parent[x] != x:
                x = parent[x]
            return x

        ok = True
        for (a, b), _ in subset:
            ra, rb = root(a), root(b)
            if ra == rb:
                ok = False
                break
            parent[ra] = rb
        if ok:
            total = sum(w for _, w in subset)
            best = total if best is None else min(best, total)
    return best


def is_spanning_tree(ids, tunnels) -> bool:
    if len(tunnels) != len(ids) - 1:
        return False
    adj = {c: set() for c in ids}
    for t in tunnels:
        a, b = t.endpoint_clouds
        adj[a].add(b)
        adj[b].add(a)
    seen, stack = set(), [ids[0]]
    while stack:
        u = stack.pop()
        if u not in seen:
            seen.add(u)
            stack.extend(adj[u] - seen)
    return seen == set(ids)


@pytest.mark.parametrize("n,expected", [(1, 0), (2, 1), (4, 3), (8, 7)])
def test_mst_tunnel_count(n, expected):
    assert len(build_mst(workloads.multi_cloud_graph(n)).tunnels) == expected


@pytest.mark.parametrize("n,expected", [(2, 1), (7, 21), (10, 45)])
def test_mesh_tunnel_count(n, expected):
    assert len(build_full_mesh(workloads.multi_cloud_graph(n)).tunnels) == expected


def test_mst_equal_weights_prefer_smaller_pairs():
    plan = build_mst(workloads.multi_cloud_graph(4))
    assert [t.endpoint_clouds for t in plan.tunnels] == [("c00", "c01"), ("c00", "c02"), ("c00", "c03")]


@pytest.mark.parametrize("seed", range(8))
def test_mst_six_clouds_matches_both_oracles(seed):
    g, ids, weights = weighted_graph(6, seed)
    plan = build_mst(g)
    w = np.zeros((6, 6), dtype=np.int64)
    for (a, b), c in weights.items():
        i, j = ids.index(a), ids.index(b)
        w[i, j] = w[j, i] = c
    assert plan.total_weight == oracles.min_spanning_weight(w) == subset_minimum(ids, weights)
    assert is_spanning_tree(ids, plan.tunnels)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_mst_no_heavier_than_random_spanning_trees(n, seed):
    g, ids, weights = weighted_graph(n, seed)
    plan = build_mst(g)
    assert is_spanning_tree(ids, plan.tunnels)
    rng = random.Random(seed)
    for _ in range(20):
        seq = tuple(rng.randrange(n) for _ in range(n - 2))
        edges = oracles.prufer_to_edges(seq, n)
        total = sum(weights[(ids[a], ids[b])] for a, b in edges)
        assert plan.total_weight <= total


def test_tunnel_weights_follow_graph():
    g, _, weights = weighted_graph(5, 3)
    for t in build_full_mesh(g).tunnels:
        assert t.weight == weights[t.endpoint_clouds]
        assert t.state is TunnelState.PLANNED


def test_establish_costs():
    g = workloads.multi_cloud_graph(4)
    state = establish(build_mst(g), CostModel(5, 0))
    assert state.setup_cost == 15 and state.established_count == 3
    assert all(t.state is TunnelState.ESTABLISHED for t in state.tunnels)
    assert establish(build_mst(workloads.multi_cloud_graph(1))).setup_cost == 0


@pytest.mark.parametrize("n", range(2, 33))
def test_mst_setup_cost_closed_form(n):
    assert establish(build_mst(workloads.multi_cloud_graph(n)), CostModel(5, 0)).setup_cost == 5 * (n - 1)
    assert establish(build_mst(workloads.multi_cloud_graph(n))).setup_cost == 6 * (n - 1)


def test_setup_cost_sums_per_tunnel_terms():
    g, _, weights = weighted_graph(6, 11)
    plan = build_full_mesh(g)
    assert establish(plan, CostModel(3, 2)).setup_cost == sum(3 + 2 * w for w in weights.values())


def chain():
    g = workloads.multi_cloud_graph(3, {("c00", "c02"): 9})
    return establish(build_plan(g, TopologyKind.MST)), establish(build_plan(g, "mesh"))


def test_fabric_path_examples():
    mst, mesh = chain()
    path = fabric_path(mst, "c00", "c02")
    assert [t.endpoint_clouds for t in path] == [("c00", "c01"), ("c01", "c02")]
    assert fabric_cloud_route(mst, "c00", "c02") == ["c00", "c01", "c02"]
    assert [t.endpoint_clouds for t in fabric_path(mesh, "c00", "c02")] == [("c00", "c02")]
    assert fabric_path(mst, "c00", "c00") == []
    with pytest.raises(UnknownCloud):
        fabric_path(mst, "c00", "nope")


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000))
def test_fabric_path_matches_tree_oracle(n, seed):
    g, ids, _ = weighted_graph(n, seed)
    state = establish(build_mst(g))
    edges = [t.endpoint_clouds for t in state.tunnels]
    rng = random.Random(seed)
    a, b = rng.choice(ids), rng.choice(ids)
    path = fabric_path(state, a, b)
    assert len(path) == oracles.tree_path_length(edges, a, b)
    route = fabric_cloud_route(state, a, b)
    assert route[0] == a and route[-1] == b and len(set(route)) == len(route)


def test_fabric_state_json_shape():
    mst, _ = chain()
    d = mst.to_dict()
    assert d["topology"] == "mst" and d["established_count"] == 2 and len(d["tunnels"]) == 2
