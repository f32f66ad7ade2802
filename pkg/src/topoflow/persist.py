"""Model files: versioned pickles for detectors and transformers, a JSON
container for ensembles that points at its member files."""

from __future__ import annotations

import json
import pickle
from pathlib import Path

import numpy as np

from .ensemble import VotingEnsemble
from .exceptions import ProvenanceError

__all__ = ["FORMAT_VERSION", "save_model", "load_model", "save_ensemble", "load_ensemble"]

FORMAT_VERSION = 1
_MAGIC = "topoflow-model"


def save_model(model, path, config_hash: str = "") -> None:
    payload = {"format": _MAGIC, "version": FORMAT_VERSION, "config_hash": config_hash, "model": model}
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=4)


def _check_hash(found: str, expected: str | None, path) -> None:
    if expected is not None and found != expected:
        raise ProvenanceError(
            f"{path} was produced under config {found[:12]}, current config is {expected[:12]}"
        )


def load_model(path, config_hash: str | None = None):
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if not isinstance(payload, dict) or payload.get("format") != _MAGIC:
        raise ValueError(f"{path} is not a model file")
    if payload["version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format version {payload['version']}")
    _check_hash(payload["config_hash"], config_hash, path)
    return payload["model"]


def save_ensemble(ens: VotingEnsemble, path, member_files: dict[str, str], config_hash: str = "") -> None:
    """Write the ensemble container; ``member_files`` maps member name to a
    file name relative to ``path``'s directory."""
    doc = {
        "format": "topoflow-ensemble",
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
        "rule": ens.rule,
        "tie_break": ens.tie_break,
        "contamination": ens.contamination,
        "threshold": ens.threshold_,
        "n_features": ens.n_features_in_,
        "members": [
            {"name": name, "file": member_files[name], "score_min": float(lo), "score_max": float(hi)}
            for (name, _), lo, hi in zip(ens.members_, ens.score_min_, ens.score_max_)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_ensemble(path, config_hash: str | None = None) -> VotingEnsemble:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != "topoflow-ensemble":
        raise ValueError(f"{path} is not an ensemble container")
    if doc["version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported ensemble format version {doc['version']}")
    _check_hash(doc["config_hash"], config_hash, path)
    members = [(m["name"], load_model(path.parent / m["file"], config_hash)) for m in doc["members"]]
    ens = VotingEnsemble(
        estimators=members, rule=doc["rule"], tie_break=doc["tie_break"], contamination=doc["contamination"]
    )
    ens.members_ = members
    ens.n_features_in_ = doc["n_features"]
    ens.score_min_ = np.array([m["score_min"] for m in doc["members"]])
    ens.score_max_ = np.array([m["score_max"] for m in doc["members"]])
    ens.threshold_ = doc["threshold"]
    return ens
