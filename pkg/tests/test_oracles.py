from __future__ import annotations

import itertools

import numpy as np
import pytest

from cloudmesh.bench import oracles


@pytest.mark.parametrize("n", range(2, 7))
def test_prufer_enumeration_counts_and_distinct(n):
    trees = oracles.all_spanning_trees(n)
    assert trees.shape == (n ** (n - 2), n - 1, 2)
    assert len({tuple(map(tuple, t)) for t in trees}) == n ** (n - 2)


def test_prufer_known_tree():
    # sequence (3, 3) on 5 nodes: leaves 0, 1, 2 hang off 3, then 3-4
    assert sorted(oracles.prufer_to_edges((3, 3, 3), 5)) == [(0, 3), (1, 3), (2, 3), (3, 4)]


def test_min_spanning_weight_small():
    w = np.array([[0, 1, 5], [1, 0, 2], [5, 2, 0]])
    assert oracles.min_spanning_weight(w) == 3


def test_tree_path_length():
    edges = [("a", "b"), ("b", "c"), ("c", "d"), ("b", "e")]
    assert oracles.tree_path_length(edges, "a", "d") == 3
    assert oracles.tree_path_length(edges, "e", "d") == 3
    assert oracles.tree_path_length(edges, "a", "a") == 0
    with pytest.raises(ValueError):
        oracles.tree_path_length(edges, "a", "z")


def test_all_trees_are_spanning():
    n = 5
    for tree in oracles.all_spanning_trees(n):
        nodes = set(itertools.chain.from_iterable(map(tuple, tree)))
        assert nodes == set(range(n))
