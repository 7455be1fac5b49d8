"""Undirected graph containers and dataset plumbing.

Covers ingestion of SNAP-style community datasets (``com-*.ungraph.txt`` edge
lists and ``*.all.cmty.txt`` community files), edge holdout for link
prediction, conversion of edges to symmetric relation triples, and
train/val/test partitioning of graph collections.

All containers are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator

import numpy as np

Edge = tuple[int, int]

__all__ = [
    "Edge",
    "EdgeListFormatError",
    "EmptyGraphError",
    "Graph",
    "Triple",
    "EdgeSplit",
    "GraphDataset",
    "load_edge_list",
    "load_communities",
    "adjacency",
    "split_edges",
    "to_triples",
    "split_dataset",
]


class EdgeListFormatError(ValueError):
    """An edge-list or community file could not be parsed."""


class EmptyGraphError(ValueError):
    """An input file contained no usable edges."""


def canonical_edge(u: int, v: int) -> Edge:
    """Store undirected edges once, as (min, max)."""
    return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class Graph:
    """Unweighted undirected graph over contiguous node ids 0..node_count-1.

    Edges are canonical (min, max) pairs with no self-loops or duplicates.
    """

    node_count: int
    edges: frozenset[Edge]
    community_id: int | None = None

    def __post_init__(self) -> None:
        if self.node_count < 0:
            raise ValueError("node_count must be non-negative")
        canon = frozenset(canonical_edge(int(u), int(v)) for u, v in self.edges)
        for u, v in canon:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.node_count and 0 <= v < self.node_count):
                raise ValueError(f"edge ({u}, {v}) outside 0..{self.node_count - 1}")
        object.__setattr__(self, "edges", canon)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def sorted_edges(self) -> tuple[Edge, ...]:
        return tuple(sorted(self.edges))

    @cached_property
    def neighbor_lists(self) -> tuple[np.ndarray, ...]:
        """Sorted neighbor array per node (empty array for isolated nodes)."""
        nbrs: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.sorted_edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(np.array(sorted(a), dtype=np.int64) for a in nbrs)

    def has_edge(self, u: int, v: int) -> bool:
        return canonical_edge(u, v) in self.edges

    def degree(self, u: int) -> int:
        return len(self.neighbor_lists[u])


@dataclass(frozen=True)
class Triple:
    """(head, relation, tail) fact; relation is always 0 in this toolkit."""

    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class EdgeSplit:
    """A graph with a fraction of its edges held out as link-prediction targets."""

    train_graph: Graph
    held_out_edges: tuple[Edge, ...]
    seed: int

    def __post_init__(self) -> None:
        held = tuple(canonical_edge(u, v) for u, v in self.held_out_edges)
        for e in held:
            if e in self.train_graph.edges:
                raise ValueError(f"held-out edge {e} still present in train graph")
        object.__setattr__(self, "held_out_edges", held)


@dataclass(frozen=True)
class GraphDataset:
    """Ordered collection of community graphs within one size bucket."""

    graphs: tuple[Graph, ...]
    size_range: tuple[int, int]
    skipped_members: int = 0

    def __post_init__(self) -> None:
        graphs = tuple(self.graphs)
        lo, hi = self.size_range
        for g in graphs:
            if not (lo <= g.node_count <= hi):
                raise ValueError(
                    f"graph with {g.node_count} nodes outside bucket [{lo}, {hi}]"
                )
        object.__setattr__(self, "graphs", graphs)

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self) -> Iterator[Graph]:
        return iter(self.graphs)

    def __getitem__(self, idx: int) -> Graph:
        return self.graphs[idx]


def _parse_edge_lines(path: Path) -> Iterator[tuple[int, int, int]]:
    """Yield (lineno, u, v) for every data line; '#' lines and blanks skipped."""
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise EdgeListFormatError(
                    f"{path}:{lineno}: expected two node ids, got {line!r}"
                )
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise EdgeListFormatError(
                    f"{path}:{lineno}: non-integer node id in {line!r}"
                ) from exc
            yield lineno, u, v


def load_edge_list(path: str | Path) -> Graph:
    """Read a SNAP-format edge list into a Graph.

    Node ids are relabeled to contiguous 0..n-1 in first-seen order; duplicate
    and reversed edges collapse to one, self-loops are dropped.
    """
    path = Path(path)
    relabel: dict[int, int] = {}
    edges: set[Edge] = set()
    for _, u, v in _parse_edge_lines(path):
        for node in (u, v):
            if node not in relabel:
                relabel[node] = len(relabel)
        if u == v:
            continue
        edges.add(canonical_edge(relabel[u], relabel[v]))
    if not relabel:
        raise EmptyGraphError(f"{path}: no edges found")
    return Graph(node_count=len(relabel), edges=frozenset(edges))


def load_communities(
    edge_path: str | Path,
    community_path: str | Path,
    min_size: int,
    max_size: int,
) -> GraphDataset:
    """Extract induced community subgraphs within a node-count bucket.

    The community file lists one community per line as whitespace-separated
    member ids referring to the edge file's original ids. Members absent from
    the edge file are skipped (counted in ``skipped_members``); communities
    whose member count falls outside [min_size, max_size] or that induce zero
    edges are discarded.
    """
    if min_size < 1 or max_size < min_size:
        raise ValueError("need 1 <= min_size <= max_size")
    edge_path, community_path = Path(edge_path), Path(community_path)

    adjacency_map: dict[int, set[int]] = {}
    for _, u, v in _parse_edge_lines(edge_path):
        if u == v:
            continue
        adjacency_map.setdefault(u, set()).add(v)
        adjacency_map.setdefault(v, set()).add(u)

    graphs: list[Graph] = []
    skipped = 0
    with community_path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                listed = [int(tok) for tok in line.split()]
            except ValueError as exc:
                raise EdgeListFormatError(
                    f"{community_path}:{lineno}: non-integer member id"
                ) from exc
            members: list[int] = []
            seen: set[int] = set()
            for node in listed:
                if node in seen:
                    continue
                seen.add(node)
                if node not in adjacency_map:
                    skipped += 1
                    continue
                members.append(node)
            if not (min_size <= len(members) <= max_size):
                continue
            relabel = {node: i for i, node in enumerate(members)}
            member_set = set(members)
            edges = {
                canonical_edge(relabel[a], relabel[b])
                for a in members
                for b in adjacency_map[a]
                if b in member_set
            }
            if not edges:
                continue
            graphs.append(
                Graph(
                    node_count=len(members),
                    edges=frozenset(edges),
                    community_id=lineno - 1,
                )
            )
    return GraphDataset(
        graphs=tuple(graphs),
        size_range=(min_size, max_size),
        skipped_members=skipped,
    )


def adjacency(g: Graph) -> np.ndarray:
    """Dense 0/1 adjacency matrix: symmetric, zero diagonal."""
    a = np.zeros((g.node_count, g.node_count), dtype=np.float64)
    for u, v in g.edges:
        a[u, v] = 1.0
        a[v, u] = 1.0
    return a


def split_edges(g: Graph, fraction: float, seed: int) -> EdgeSplit:
    """Hold out round(fraction * m) uniformly random edges.

    The node set is unchanged, so the training graph may contain isolated
    nodes. Deterministic for a given seed.
    """
    if not (0.0 <= fraction < 1.0):
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    if g.edge_count < 1:
        raise ValueError("graph has no edges to split")
    m = g.edge_count
    k = int(math.floor(fraction * m + 0.5))
    rng = np.random.default_rng(seed)
    order = rng.permutation(m)
    all_edges = g.sorted_edges
    held = tuple(sorted(all_edges[i] for i in order[:k]))
    train_edges = frozenset(all_edges) - set(held)
    train = Graph(
        node_count=g.node_count, edges=train_edges, community_id=g.community_id
    )
    return EdgeSplit(train_graph=train, held_out_edges=held, seed=seed)


def to_triples(g: Graph) -> list[Triple]:
    """Both orientations of every edge, as facts over the single relation 0."""
    out: list[Triple] = []
    for u, v in g.sorted_edges:
        out.append(Triple(u, 0, v))
        out.append(Triple(v, 0, u))
    return out


def partition_indices(
    count: int, ratios: tuple[float, float, float], seed: int
) -> tuple[list[int], list[int], list[int]]:
    """Random three-way index partition, sized by largest-remainder rounding."""
    if len(ratios) != 3:
        raise ValueError("ratios must have three entries")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    if any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative")
    # Largest-remainder rounding keeps the three sizes summing to count.
    raw = [r * count for r in ratios]
    sizes = [int(math.floor(x + 1e-9)) for x in raw]
    remainders = [x - s for x, s in zip(raw, sizes)]
    for _ in range(count - sum(sizes)):
        i = max(range(3), key=lambda j: (remainders[j], -j))
        sizes[i] += 1
        remainders[i] = -1.0
    rng = np.random.default_rng(seed)
    perm = [int(i) for i in rng.permutation(count)]
    a, b = sizes[0], sizes[0] + sizes[1]
    return perm[:a], perm[a:b], perm[b:]


def split_dataset(
    d: GraphDataset, ratios: tuple[float, float, float], seed: int
) -> tuple[GraphDataset, GraphDataset, GraphDataset]:
    """Randomly partition a dataset into train/val/test collections."""
    if len(d) < 3:
        raise ValueError(f"need at least 3 graphs to split, have {len(d)}")
    idx_train, idx_val, idx_test = partition_indices(len(d), ratios, seed)

    def subset(indices: list[int]) -> GraphDataset:
        return GraphDataset(
            graphs=tuple(d.graphs[i] for i in indices),
            size_range=d.size_range,
        )

    return subset(idx_train), subset(idx_val), subset(idx_test)
