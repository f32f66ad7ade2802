"""Flow-to-graph conversion: endpoints become nodes, flows become weighted edges."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, SchemaError
from .flows import FlowDataset

__all__ = ["TrafficGraph", "build_graph", "node_labels", "write_edge_list", "read_edge_list"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrafficGraph:
    """Directed graph with summed edge weights.

    Node ids are dense integers assigned in order of first appearance of an
    endpoint (source before destination within a flow). ``edges`` holds one
    row per distinct ordered pair, in order of first appearance.
    """

    endpoint_of: tuple[str, ...]
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_weight: np.ndarray
    warnings: tuple[str, ...] = ()
    weight_column: str = ""
    node_of: dict = field(init=False, repr=False)
    out_adj: tuple = field(init=False, repr=False)
    in_adj: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "node_of", {e: i for i, e in enumerate(self.endpoint_of)})
        out_adj = [[] for _ in range(self.n)]
        in_adj = [[] for _ in range(self.n)]
        for i, j, w in zip(self.edge_src.tolist(), self.edge_dst.tolist(), self.edge_weight.tolist()):
            out_adj[i].append((j, w))
            in_adj[j].append((i, w))
        object.__setattr__(self, "out_adj", tuple(tuple(a) for a in out_adj))
        object.__setattr__(self, "in_adj", tuple(tuple(a) for a in in_adj))
        for arr in (self.edge_src, self.edge_dst, self.edge_weight):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.endpoint_of)

    @property
    def total_edges(self) -> int:
        return len(self.edge_src)

    def out_degree(self, i: int) -> int:
        return len(self.out_adj[i])

    def in_degree(self, i: int) -> int:
        return len(self.in_adj[i])

    def weight(self, i: int, j: int) -> float | None:
        for k, w in self.out_adj[i]:
            if k == j:
                return w
        return None

    def out_neighbors(self, i: int) -> list[int]:
        """Out-neighbors of ``i``, self-loops excluded."""
        return [j for j, _ in self.out_adj[i] if j != i]

    def in_neighbors(self, i: int) -> list[int]:
        return [j for j, _ in self.in_adj[i] if j != i]

    def edge_dict(self) -> dict[tuple[str, str], float]:
        """Endpoint-keyed edge weights, for label-independent comparison."""
        ep = self.endpoint_of
        return {
            (ep[i], ep[j]): w
            for i, j, w in zip(self.edge_src.tolist(), self.edge_dst.tolist(), self.edge_weight.tolist())
        }

    @classmethod
    def from_edges(cls, edges, endpoints=None) -> "TrafficGraph":
        """Build from ``(src, dst, weight)`` triples of endpoint strings or ints.

        Repeated pairs are summed.
        """
        node_of: dict = {}
        if endpoints is not None:
            for e in endpoints:
                node_of.setdefault(e, len(node_of))
        pair_index: dict[tuple[int, int], int] = {}
        src, dst, wt = [], [], []
        for a, b, w in edges:
            i = node_of.setdefault(a, len(node_of))
            j = node_of.setdefault(b, len(node_of))
            k = pair_index.get((i, j))
            if k is None:
                pair_index[(i, j)] = len(src)
                src.append(i)
                dst.append(j)
                wt.append(float(w))
            else:
                wt[k] += float(w)
        return cls(
            endpoint_of=tuple(str(e) for e in node_of),
            edge_src=np.asarray(src, dtype=np.int64),
            edge_dst=np.asarray(dst, dtype=np.int64),
            edge_weight=np.asarray(wt, dtype=float),
        )


def build_graph(ds: FlowDataset, weight_column: str | None = None) -> TrafficGraph:
    """Aggregate the flows of ``ds`` into a :class:`TrafficGraph`.

    The weight of edge ``(i, j)`` is the sum of ``weight_column`` over every
    flow from ``i`` to ``j``. Negative aggregate weights are kept and listed in
    ``TrafficGraph.warnings``.
    """
    if weight_column is None:
        weight_column = ds.schema.summable_weight_column
    if weight_column not in ds.schema.numeric_feature_columns:
        raise SchemaError(f"weight column {weight_column!r} is not a numeric feature column")
    w = ds.column(weight_column)

    node_of: dict[str, int] = {}
    for a, b in zip(ds.src, ds.dst):
        if a not in node_of:
            node_of[a] = len(node_of)
        if b not in node_of:
            node_of[b] = len(node_of)
    n = len(node_of)
    si = np.fromiter((node_of[a] for a in ds.src), dtype=np.int64, count=ds.N)
    di = np.fromiter((node_of[b] for b in ds.dst), dtype=np.int64, count=ds.N)

    # pair key in first-appearance order
    key = si * max(n, 1) + di
    uniq, first, inverse = np.unique(key, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    sums = np.zeros(len(uniq))
    # unbuffered, applied in time order: same rounding as a plain loop
    np.add.at(sums, rank[inverse], w)
    edge_key = uniq[order]
    edge_src = edge_key // max(n, 1)
    edge_dst = edge_key % max(n, 1)

    endpoints = tuple(node_of)
    warnings = tuple(
        f"negative aggregate weight {s!r} on edge {endpoints[i]} -> {endpoints[j]}"
        for i, j, s in zip(edge_src.tolist(), edge_dst.tolist(), sums.tolist())
        if s < 0
    )
    for msg in warnings:
        logger.warning(msg)
    return TrafficGraph(
        endpoint_of=endpoints,
        edge_src=np.asarray(edge_src, dtype=np.int64),
        edge_dst=np.asarray(edge_dst, dtype=np.int64),
        edge_weight=sums,
        warnings=warnings,
        weight_column=weight_column,
    )


def node_labels(ds: FlowDataset, g: TrafficGraph, rule: str = "source") -> np.ndarray:
    """Per-node anomaly flags derived from flow labels.

    With ``rule="source"`` a node is anomalous iff it sends at least one
    attack flow; ``rule="either"`` also flags attack destinations.
    """
    if ds.labels is None:
        raise DataError("node labels need a labeled dataset")
    if rule not in ("source", "either"):
        raise ValueError(f"unknown node label rule {rule!r}")
    out = np.zeros(g.n, dtype=bool)
    for t in np.flatnonzero(ds.labels):
        try:
            out[g.node_of[ds.src[t]]] = True
            if rule == "either":
                out[g.node_of[ds.dst[t]]] = True
        except KeyError as exc:
            raise DataError(f"flow {int(ds.index[t])} endpoint {exc} is not in the graph") from None
    return out


def write_edge_list(g: TrafficGraph, path, header_comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        ep = g.endpoint_of
        for i, j, w in zip(g.edge_src.tolist(), g.edge_dst.tolist(), g.edge_weight.tolist()):
            fh.write(f"{ep[i]}\t{ep[j]}\t{w!r}\n")


def read_edge_list(path) -> TrafficGraph:
    edges = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            a, b, w = line.rstrip("\n").split("\t")
            edges.append((a, b, float(w)))
    return TrafficGraph.from_edges(edges)
