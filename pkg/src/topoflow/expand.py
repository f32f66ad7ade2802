"""Regime datasets: plain flows, node embeddings, or flows prolonged with both."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError
from .flows import FlowDataset
from .graph import TrafficGraph, build_graph, node_labels
from .topology import NodeFeatureMatrix, node_features

__all__ = [
    "REGIMES",
    "ExpandedDataset",
    "expand",
    "as_regime",
    "write_expanded",
    "RegimeTransformer",
]

REGIMES = ("standard", "graph", "mixed")


@dataclass(frozen=True, eq=False)
class ExpandedDataset:
    """Detector input for one regime.

    ``values`` is sample-major: one row per flow (standard, mixed) or per
    node (graph). ``index`` holds the original record index of each flow row
    and is empty for the graph regime.
    """

    values: np.ndarray
    regime: str
    feature_names: tuple[str, ...]
    labels: np.ndarray | None = None
    categories: tuple | None = None
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    provenance: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def shape_triple(self) -> tuple[int, int, int]:
        """``(features, samples, outliers)``, the layout used in reports."""
        outliers = int(self.labels.sum()) if self.labels is not None else 0
        return (self.n_features, self.n_samples, outliers)


def _provenance(ds, g, Z, regime):
    return {
        "schema": ds.schema.name,
        "weight_column": g.weight_column if g is not None else ds.schema.summable_weight_column,
        "catalog": Z.mode if Z is not None else None,
        "p": Z.p if Z is not None else 0,
        "m": ds.m,
        "regime": regime,
    }


def expand(ds: FlowDataset, Z: NodeFeatureMatrix, g: TrafficGraph) -> ExpandedDataset:
    """Prolong every flow ``[x_t]`` to ``[x_t, z_src, z_dst]``."""
    if Z.n != g.n:
        raise DataError(f"node feature matrix has {Z.n} nodes, graph has {g.n}")
    try:
        si = np.fromiter((g.node_of[a] for a in ds.src), dtype=np.int64, count=ds.N)
        di = np.fromiter((g.node_of[b] for b in ds.dst), dtype=np.int64, count=ds.N)
    except KeyError as exc:
        raise DataError(f"flow endpoint {exc} is not a node of the graph") from None
    values = np.hstack([ds.X, Z.values[si], Z.values[di]])
    names = (
        *ds.schema.numeric_feature_columns,
        *(f"z_src_{n}" for n in Z.feature_names),
        *(f"z_dst_{n}" for n in Z.feature_names),
    )
    return ExpandedDataset(
        values=values,
        regime="mixed",
        feature_names=names,
        labels=ds.labels,
        categories=ds.categories,
        index=np.asarray(ds.index),
        provenance=_provenance(ds, g, Z, "mixed"),
    )


def as_regime(
    ds: FlowDataset,
    Z: NodeFeatureMatrix | None = None,
    g: TrafficGraph | None = None,
    regime: str = "standard",
    node_label_rule: str = "source",
) -> ExpandedDataset:
    """Detector input for ``regime``; labels follow the rows (flows or nodes)."""
    if regime == "standard":
        return ExpandedDataset(
            values=ds.X,
            regime="standard",
            feature_names=ds.schema.numeric_feature_columns,
            labels=ds.labels,
            categories=ds.categories,
            index=np.asarray(ds.index),
            provenance=_provenance(ds, g, None, "standard"),
        )
    if regime == "graph":
        if Z is None:
            raise ValueError("graph regime needs a node feature matrix")
        labels = None
        if ds.labels is not None:
            if g is None:
                raise ValueError("graph regime labels need the traffic graph")
            labels = node_labels(ds, g, rule=node_label_rule)
        return ExpandedDataset(
            values=Z.values,
            regime="graph",
            feature_names=Z.feature_names,
            labels=labels,
            provenance=_provenance(ds, g, Z, "graph"),
        )
    if regime == "mixed":
        if Z is None or g is None:
            raise ValueError("mixed regime needs both the node features and the graph")
        return expand(ds, Z, g)
    raise ValueError(f"unknown regime {regime!r}; known: {list(REGIMES)}")


def write_expanded(ed: ExpandedDataset, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        has_labels = ed.labels is not None
        w.writerow([*ed.feature_names, *(["label"] if has_labels else [])])
        for r in range(ed.n_samples):
            row = [repr(float(v)) for v in ed.values[r]]
            if has_labels:
                row.append(int(ed.labels[r]))
            w.writerow(row)


class RegimeTransformer(TransformerMixin, BaseEstimator):
    """Turn a :class:`FlowDataset` into a standardized regime matrix.

    Every call to ``transform`` rebuilds the traffic graph from the flows it
    is given, so each time block is embedded from its own traffic only. The
    per-feature standardization is fitted once, in ``fit``.

    Parameters
    ----------
    regime : {"standard", "graph", "mixed"}
    catalog : {"egonet", "random_walk"}
    p : int or None
        Number of topological features kept; None keeps the whole catalog.
    walk_length, walks_per_node : int
        Random-walk catalog settings.
    weight_column : str or None
        Summable column used as edge weight; None uses the schema default.
    standardize : bool
        Zero-mean, unit-variance scaling fitted on the ``fit`` data.
    random_state : int
    n_jobs : int or None
        Workers for node feature extraction.
    """

    def __init__(
        self,
        regime="mixed",
        catalog="egonet",
        p=None,
        walk_length=10,
        walks_per_node=8,
        weight_column=None,
        standardize=True,
        node_label_rule="source",
        random_state=0,
        n_jobs=None,
    ):
        self.regime = regime
        self.catalog = catalog
        self.p = p
        self.walk_length = walk_length
        self.walks_per_node = walks_per_node
        self.weight_column = weight_column
        self.standardize = standardize
        self.node_label_rule = node_label_rule
        self.random_state = random_state
        self.n_jobs = n_jobs

    def build(self, ds: FlowDataset) -> ExpandedDataset:
        """Unscaled regime dataset for ``ds``."""
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.regime == "standard":
            return as_regime(ds, regime="standard")
        g = build_graph(ds, self.weight_column)
        Z = node_features(
            g,
            catalog=self.catalog,
            p=self.p,
            walk_length=self.walk_length,
            walks_per_node=self.walks_per_node,
            seed=self.random_state,
            n_jobs=self.n_jobs,
        )
        return as_regime(ds, Z, g, self.regime, node_label_rule=self.node_label_rule)

    def fit(self, X: FlowDataset, y=None):
        self.fit_transform_dataset(X)
        return self

    def fit_transform_dataset(self, X: FlowDataset) -> ExpandedDataset:
        """Fit on ``X`` and return its scaled regime dataset (one graph build)."""
        ed = self.build(X)
        self.n_features_out_ = ed.n_features
        self.feature_names_out_ = ed.feature_names
        self.scaler_ = StandardScaler().fit(ed.values) if self.standardize and ed.n_features else None
        return self._scaled(ed)

    def fit_transform(self, X: FlowDataset, y=None, **fit_params) -> np.ndarray:
        return self.fit_transform_dataset(X).values

    def transform_dataset(self, X: FlowDataset) -> ExpandedDataset:
        check_is_fitted(self, "n_features_out_")
        ed = self.build(X)
        if ed.n_features != self.n_features_out_:
            raise DataError(f"expected {self.n_features_out_} features, got {ed.n_features}")
        return self._scaled(ed)

    def _scaled(self, ed: ExpandedDataset) -> ExpandedDataset:
        if self.scaler_ is None or ed.n_samples == 0:
            return ed
        return ExpandedDataset(
            values=self.scaler_.transform(ed.values),
            regime=ed.regime,
            feature_names=ed.feature_names,
            labels=ed.labels,
            categories=ed.categories,
            index=ed.index,
            provenance={**ed.provenance, "standardized": True},
        )

    def transform(self, X: FlowDataset) -> np.ndarray:
        return self.transform_dataset(X).values

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return np.asarray(self.feature_names_out_, dtype=object)
