"""Unsupervised flow anomaly detection with topological node features."""

from .detectors import IForestDetector, LOFDetector, OCSVMDetector, make_detector
from .ensemble import VotingEnsemble, fit_ensemble
from .expand import ExpandedDataset, RegimeTransformer, as_regime, expand
from .flows import DatasetSchema, FlowDataset, FlowRecord, get_preset, load_dataset, prefix_split
from .config import PipelineConfig, load_config
from .graph import TrafficGraph, build_graph, node_labels
from .harness import (
    EvalReport,
    GridSpec,
    attack_breakdown,
    balanced_accuracy,
    grid_search,
    rolling_test,
    split_blocks,
    train_and_report,
)
from .persist import load_ensemble, load_model, save_ensemble, save_model
from .topology import NodeFeatureMatrix, extract_egonet, node_features, sample_walk, stack_features

__version__ = "0.1.0"

__all__ = [
    "DatasetSchema",
    "EvalReport",
    "ExpandedDataset",
    "FlowDataset",
    "FlowRecord",
    "GridSpec",
    "IForestDetector",
    "LOFDetector",
    "NodeFeatureMatrix",
    "OCSVMDetector",
    "PipelineConfig",
    "RegimeTransformer",
    "TrafficGraph",
    "VotingEnsemble",
    "as_regime",
    "attack_breakdown",
    "balanced_accuracy",
    "build_graph",
    "expand",
    "extract_egonet",
    "fit_ensemble",
    "get_preset",
    "grid_search",
    "load_config",
    "load_dataset",
    "load_ensemble",
    "load_model",
    "make_detector",
    "node_features",
    "node_labels",
    "prefix_split",
    "rolling_test",
    "sample_walk",
    "save_ensemble",
    "save_model",
    "split_blocks",
    "stack_features",
    "train_and_report",
]
