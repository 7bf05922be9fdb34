"""Small undirected-graph utilities: labeled graphs, union-find, Pruefer codes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

Edge = tuple[int, int]


def normalize_edges(edges: Iterable[Iterable[int]]) -> tuple[Edge, ...]:
    """Sort each edge as (min, max) and the edge list lexicographically."""
    out = set()
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if i == j:
            raise ValueError(f"self-loop on node {i}")
        out.add((min(i, j), max(i, j)))
    return tuple(sorted(out))


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes 0..n_nodes-1."""

    n_nodes: int
    edges: tuple[Edge, ...]

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[Iterable[int]]) -> "Graph":
        norm = normalize_edges(edges)
        if norm and norm[-1][1] >= n_nodes:
            raise ValueError("edge endpoint out of range")
        return cls(n_nodes, norm)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, node: int) -> tuple[int, ...]:
        out = [j if i == node else i for i, j in self.edges if node in (i, j)]
        return tuple(sorted(out))

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in set(self.edges)

    def to_json_dict(self) -> dict:
        return {"n_nodes": self.n_nodes, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Graph":
        return cls.from_edges(int(obj["n_nodes"]), obj["edges"])


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


def prufer_to_edges(seq: Iterable[int], n_nodes: int) -> tuple[Edge, ...]:
    """Decode a Pruefer sequence (length n-2) into the edges of a labeled tree."""
    seq = list(seq)
    if n_nodes < 2 or len(seq) != n_nodes - 2:
        raise ValueError("sequence length must be n_nodes - 2")
    degree = [1] * n_nodes
    for x in seq:
        degree[x] += 1
    edges = []
    for x in seq:
        leaf = min(i for i in range(n_nodes) if degree[i] == 1)
        edges.append((min(leaf, x), max(leaf, x)))
        degree[leaf] -= 1
        degree[x] -= 1
    u, v = [i for i in range(n_nodes) if degree[i] == 1]
    edges.append((u, v))
    return tuple(sorted(edges))


def random_tree_edges(n_nodes: int, rng: np.random.Generator) -> tuple[Edge, ...]:
    """Uniform random labeled tree via a random Pruefer sequence."""
    if n_nodes == 2:
        return ((0, 1),)
    seq = rng.integers(0, n_nodes, size=n_nodes - 2)
    return prufer_to_edges(seq.tolist(), n_nodes)


def is_spanning_tree(edges: Iterable[Edge], n_nodes: int) -> bool:
    edges = list(edges)
    if len(edges) != n_nodes - 1:
        return False
    uf = UnionFind(n_nodes)
    return all(uf.union(i, j) for i, j in edges)
