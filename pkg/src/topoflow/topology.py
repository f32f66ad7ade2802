"""Per-node topological features from egonets or random walks."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .exceptions import ConfigError
from .graph import TrafficGraph

__all__ = [
    "Egonet",
    "RandomWalk",
    "WalkEnd",
    "NodeFeatureMatrix",
    "CATALOGS",
    "EGONET_BASE_FEATURES",
    "WALK_BASE_FEATURES",
    "extract_egonet",
    "sample_walk",
    "egonet_base_features",
    "walk_base_features",
    "node_features",
    "stack_features",
    "catalog_size",
    "write_node_features",
]

EGONET_BASE_FEATURES = (
    "egonet_node_count",
    "out_links",
    "in_links",
    "egonet_edge_count",
    "center_out_weight",
    "center_in_weight",
    "egonet_total_weight",
    "egonet_mean_weight",
    "egonet_max_weight",
    "egonet_min_weight",
    "reciprocal_pairs",
    "center_edge_ratio",
    "neighbor_edge_count",
    "neighbor_total_weight",
    "neighbor_mean_weight",
    "neighbor_max_weight",
)

WALK_BASE_FEATURES = (
    "first_leg_weight",
    "bottleneck_weight",
    "walk_length",
    "total_walk_weight",
    "mean_step_weight",
    "distinct_nodes",
    "returned_to_start",
)

CATALOGS = ("egonet", "random_walk")


def _expanded_names(base: Sequence[str]) -> tuple[str, ...]:
    return (*base, *(f"log1p_{b}" for b in base), *(f"rank_{b}" for b in base))


def catalog_size(catalog: str) -> int:
    """Number of features a catalog can provide (the upper bound for ``p``)."""
    if catalog == "egonet":
        return 3 * len(EGONET_BASE_FEATURES)
    if catalog == "random_walk":
        return 3 * len(WALK_BASE_FEATURES)
    raise ConfigError(f"unknown feature catalog {catalog!r}; known: {list(CATALOGS)}")


@dataclass(frozen=True)
class Egonet:
    """Induced subgraph on a node and its in/out neighbors.

    Self-loops are not part of an egonet.
    """

    center: int
    members: frozenset[int]
    edges: tuple[tuple[int, int, float], ...]


class WalkEnd(str, Enum):
    RETURNED_TO_START = "returned_to_start"
    LENGTH_REACHED = "length_reached"
    DEAD_END = "dead_end"


@dataclass(frozen=True)
class RandomWalk:
    start: int
    steps: tuple[tuple[int, int, float], ...]
    terminated_by: WalkEnd

    @property
    def nodes(self) -> list[int]:
        return [self.start, *(j for _, j, _ in self.steps)]


@dataclass(frozen=True, eq=False)
class NodeFeatureMatrix:
    """Topological embedding, one row per node (row ``i`` is node id ``i``)."""

    values: np.ndarray
    feature_names: tuple[str, ...]
    mode: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.feature_names):
            raise ValueError("values must be (n, p) with p == len(feature_names)")
        if not np.all(np.isfinite(values)):
            raise ValueError("node features must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.values[i]


def _check_node(g: TrafficGraph, i: int) -> None:
    if not 0 <= int(i) < g.n:
        raise ValueError(f"node id {i} out of range [0, {g.n})")


def _out_dicts(g: TrafficGraph) -> list[dict[int, float]]:
    return [dict(a) for a in g.out_adj]


def extract_egonet(g: TrafficGraph, i: int, _out=None) -> Egonet:
    """Induced subgraph on ``{i}`` and all of its (non-self) neighbors."""
    _check_node(g, i)
    out = _out if _out is not None else _out_dicts(g)
    members = {i}
    members.update(j for j, _ in g.out_adj[i])
    members.update(j for j, _ in g.in_adj[i])
    edges = []
    for u in sorted(members):
        nbrs = out[u]
        if len(nbrs) <= len(members):
            edges.extend((u, v, w) for v, w in nbrs.items() if v in members and v != u)
        else:
            edges.extend((u, v, nbrs[v]) for v in sorted(members) if v != u and v in nbrs)
    edges.sort(key=lambda e: (e[0], e[1]))
    return Egonet(center=i, members=frozenset(members), edges=tuple(edges))


def egonet_base_features(ego: Egonet) -> np.ndarray:
    """The 16 local features of one egonet (see ``EGONET_BASE_FEATURES``)."""
    c = ego.center
    w_all = np.array([w for _, _, w in ego.edges], dtype=float)
    out_w = [w for u, _, w in ego.edges if u == c]
    in_w = [w for _, v, w in ego.edges if v == c]
    nn_w = np.array([w for u, v, w in ego.edges if u != c and v != c], dtype=float)
    pairs = {(u, v) for u, v, _ in ego.edges}
    reciprocal = sum(1 for u, v in pairs if u < v and (v, u) in pairs)
    n_edges = len(ego.edges)
    center_edges = len(out_w) + len(in_w)
    return np.array([
        len(ego.members),
        len(out_w),
        len(in_w),
        n_edges,
        sum(out_w),
        sum(in_w),
        w_all.sum(),
        w_all.mean() if n_edges else 0.0,
        w_all.max() if n_edges else 0.0,
        w_all.min() if n_edges else 0.0,
        reciprocal,
        center_edges / n_edges if n_edges else 0.0,
        len(nn_w),
        nn_w.sum(),
        nn_w.mean() if len(nn_w) else 0.0,
        nn_w.max() if len(nn_w) else 0.0,
    ], dtype=float)


def _as_generator(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_walk(g: TrafficGraph, i: int, length: int, rng_seed) -> RandomWalk:
    """Random walk along out-edges starting at ``i``.

    Each step moves to a uniformly chosen out-neighbor (self-loops excluded).
    The walk stops when it returns to ``i``, after ``length`` steps, or at a
    node without out-neighbors.
    """
    _check_node(g, i)
    if length < 1:
        raise ValueError("walk length must be >= 1")
    rng = _as_generator(rng_seed)
    steps = []
    cur = i
    while True:
        nbrs = [(j, w) for j, w in g.out_adj[cur] if j != cur]
        if not nbrs:
            end = WalkEnd.DEAD_END
            break
        j, w = nbrs[int(rng.integers(len(nbrs)))]
        steps.append((cur, j, w))
        cur = j
        if cur == i:
            end = WalkEnd.RETURNED_TO_START
            break
        if len(steps) >= length:
            end = WalkEnd.LENGTH_REACHED
            break
    return RandomWalk(start=i, steps=tuple(steps), terminated_by=end)


def walk_base_features(walk: RandomWalk) -> np.ndarray:
    """The 7 features of one walk (see ``WALK_BASE_FEATURES``).

    Weight features of an empty walk are 0. The bottleneck is the smallest
    edge weight along the walk.
    """
    w = np.array([s[2] for s in walk.steps], dtype=float)
    k = len(w)
    return np.array([
        w[0] if k else 0.0,
        w.min() if k else 0.0,
        k,
        w.sum(),
        w.mean() if k else 0.0,
        len(set(walk.nodes)),
        float(walk.terminated_by is WalkEnd.RETURNED_TO_START),
    ], dtype=float)


def node_seed(seed: int, node: int) -> np.random.SeedSequence:
    """Per-node RNG stream; independent of extraction order or worker count."""
    return np.random.SeedSequence([int(seed), int(node)])


def _signed_log1p(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.log1p(np.abs(x))


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    if n <= 1:
        return np.zeros_like(x)
    return (rankdata(x, method="average", axis=0) - 1.0) / (n - 1)


def _walk_features_for(g, nodes, length, walks_per_node, seed):
    rows = []
    for i in nodes:
        rng = np.random.default_rng(node_seed(seed, i))
        feats = [walk_base_features(sample_walk(g, i, length, rng)) for _ in range(walks_per_node)]
        rows.append(np.mean(feats, axis=0))
    return rows


def _egonet_features_for(g, nodes):
    out = _out_dicts(g)
    return [egonet_base_features(extract_egonet(g, i, _out=out)) for i in nodes]


def node_features(
    g: TrafficGraph,
    catalog: str = "egonet",
    p: int | None = None,
    walk_length: int = 10,
    walks_per_node: int = 8,
    seed: int = 0,
    n_jobs: int | None = None,
) -> NodeFeatureMatrix:
    """Topological feature vector of every node of ``g``.

    The catalog lists its base features, then their signed ``log1p`` forms,
    then their rank-normalized forms (rank among all nodes, scaled to
    ``[0, 1]``). The first ``p`` of those are kept; ``p=None`` keeps all
    (48 for ``"egonet"``, 21 for ``"random_walk"``).
    """
    size = catalog_size(catalog)
    if p is None:
        p = size
    if not 0 <= p <= size:
        raise ConfigError(f"p={p} outside [0, {size}] for catalog {catalog!r}")
    if g.n == 0:
        raise ValueError("cannot extract node features from an empty graph")
    if walk_length < 1 or walks_per_node < 1:
        raise ConfigError("walk_length and walks_per_node must be >= 1")

    base_names = EGONET_BASE_FEATURES if catalog == "egonet" else WALK_BASE_FEATURES
    names = _expanded_names(base_names)[:p]
    if p == 0:
        return NodeFeatureMatrix(np.zeros((g.n, 0)), (), catalog)

    chunks = [range(a, min(a + 256, g.n)) for a in range(0, g.n, 256)]
    if catalog == "egonet":
        work = [(_egonet_features_for, (g, c)) for c in chunks]
    else:
        work = [(_walk_features_for, (g, c, walk_length, walks_per_node, seed)) for c in chunks]
    if n_jobs in (None, 1) or len(chunks) == 1:
        parts = [fn(*args) for fn, args in work]
    else:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=n_jobs)(delayed(fn)(*args) for fn, args in work)
    base = np.vstack([np.vstack(part) for part in parts])

    blocks = [base]
    if p > len(base_names):
        blocks.append(_signed_log1p(base))
    if p > 2 * len(base_names):
        blocks.append(_rank_normalize(base))
    values = np.hstack(blocks)[:, :p]
    return NodeFeatureMatrix(values, names, catalog)


def stack_features(per_node: Sequence[Sequence[float]], feature_names=None, mode="egonet") -> NodeFeatureMatrix:
    """Stack per-node vectors (in node id order) into a feature matrix."""
    rows = [np.asarray(v, dtype=float).ravel() for v in per_node]
    if not rows:
        raise ValueError("no node feature vectors to stack")
    p = len(rows[0])
    if any(len(r) != p for r in rows):
        raise ValueError("ragged node feature vectors")
    if feature_names is None:
        feature_names = tuple(f"f{k}" for k in range(p))
    return NodeFeatureMatrix(np.vstack(rows), tuple(feature_names), mode)


def write_node_features(Z: NodeFeatureMatrix, g: TrafficGraph, path, header_comment: str | None = None) -> None:
    """Delimited export: ``endpoint`` column, then one column per feature."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["endpoint", *Z.feature_names])
        for i in range(Z.n):
            w.writerow([g.endpoint_of[i], *(repr(float(v)) for v in Z.values[i])])
