"""Brute-force references used to check the fast implementations."""

from __future__ import annotations

import heapq
import itertools
from functools import lru_cache

import numpy as np


def prufer_to_edges(seq: tuple[int, ...], n: int) -> list[tuple[int, int]]:
    """The labelled tree on ``0..n-1`` whose Prüfer sequence is ``seq``."""
    degree = [1] * n
    for x in seq:
        degree[x] += 1
    leaves = [i for i in range(n) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for x in seq:
        leaf = heapq.heappop(leaves)
        edges.append((min(leaf, x), max(leaf, x)))
        degree[x] -= 1
        if degree[x] == 1:
            heapq.heappush(leaves, x)
    u, v = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((min(u, v), max(u, v)))
    return edges


@lru_cache(maxsize=None)
def all_spanning_trees(n: int) -> np.ndarray:
    """Every labelled spanning tree of K_n as an array of shape (n**(n-2), n-1, 2)."""
    if n < 2:
        return np.zeros((1, 0, 2), dtype=np.int64)
    if n == 2:
        return np.array([[[0, 1]]], dtype=np.int64)
    trees = [prufer_to_edges(seq, n) for seq in itertools.product(range(n), repeat=n - 2)]
    return np.array(trees, dtype=np.int64)


def min_spanning_weight(weights: np.ndarray) -> int:
    """Minimum total weight over all spanning trees of the complete graph ``weights``."""
    n = weights.shape[0]
    trees = all_spanning_trees(n)
    if trees.shape[1] == 0:
        return 0
    totals = weights[trees[:, :, 0], trees[:, :, 1]].sum(axis=1)
    return int(totals.min())


def tree_path_length(edges: list[tuple[str, str]], a: str, b: str) -> int:
    """Edges on the unique path between ``a`` and ``b`` in a tree (depth-first)."""
    adj: dict[str, list[str]] = {}
    for u, v in edges:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    stack = [(a, None, 0)]
    while stack:
        node, parent, depth = stack.pop()
        if node == b:
            return depth
        for nxt in adj.get(node, ()):
            if nxt != parent:
                stack.append((nxt, node, depth + 1))
    raise ValueError(f"{a} and {b} are not connected")
