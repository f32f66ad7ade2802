"""Pipeline configuration: one YAML file, validated up front, hashed for provenance."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .detectors import DETECTORS
from .exceptions import ConfigError, SchemaError
from .expand import REGIMES
from .flows import DatasetSchema, get_preset
from .harness import DEFAULT_GRID, ENSEMBLE_RULES, GridSpec, expand_grid
from .topology import CATALOGS, catalog_size

__all__ = ["PipelineConfig", "DEFAULTS", "load_config", "parse_override", "config_hash"]

DEFAULTS: dict[str, Any] = {
    "dataset": {
        "path": None,
        "schema": None,
        "node_label_rule": "source",
    },
    "features": {
        "weight_column": None,
        "catalog": "egonet",
        "p": 48,
        "walk_length": 10,
        "walks_per_node": 8,
        "standardize": True,
    },
    "regimes": list(REGIMES),
    "detectors": copy.deepcopy(DEFAULT_GRID),
    "ensemble": {
        "rules": list(ENSEMBLE_RULES),
        "tie_break": "normal",
        "contamination": 0.1,
    },
    "splits": {
        "tune": 0.01,
        "train": 0.10,
        "test": [0.1, 0.3, 0.5, 0.7, 1.0],
    },
    "seed": 0,
    "n_jobs": 1,
    "output_dir": "out",
}

# keys that do not change any result
_UNHASHED = ("n_jobs", "output_dir")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k == "detectors":
            # detector sections replace the defaults wholesale
            out[k] = copy.deepcopy(v)
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b.c=value`` with a YAML-parsed value."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def _apply_override(d: dict, path: list[str], value) -> None:
    cur = d
    for k in path[:-1]:
        if not isinstance(cur.get(k), dict):
            cur[k] = {}
        cur = cur[k]
    cur[path[-1]] = value


def config_hash(raw: dict) -> str:
    """SHA-256 over the canonical JSON of the result-affecting settings."""
    doc = {k: v for k, v in raw.items() if k not in _UNHASHED}
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    schema: DatasetSchema

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def dataset_path(self) -> Path:
        return (self.base_dir / self.raw["dataset"]["path"]).resolve()

    @property
    def output_dir(self) -> Path:
        return (self.base_dir / self.raw["output_dir"]).resolve()

    @property
    def regimes(self) -> tuple[str, ...]:
        return tuple(self.raw["regimes"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def n_jobs(self) -> int:
        return int(self.raw["n_jobs"])

    @property
    def splits(self) -> dict:
        return self.raw["splits"]

    @property
    def node_label_rule(self) -> str:
        return self.raw["dataset"]["node_label_rule"]

    def feature_params(self) -> dict:
        f = self.raw["features"]
        return {
            "catalog": f["catalog"],
            "p": f["p"],
            "walk_length": f["walk_length"],
            "walks_per_node": f["walks_per_node"],
            "weight_column": f["weight_column"],
            "standardize": f["standardize"],
            "node_label_rule": self.node_label_rule,
            "random_state": self.seed,
            "n_jobs": self.n_jobs,
        }

    def grid(self) -> GridSpec:
        cands = {}
        for det, spec in self.raw["detectors"].items():
            spec = dict(spec or {})
            fixed = spec.pop("params", None)
            cands[det] = [dict(fixed)] if fixed is not None else expand_grid(spec)
        e = self.raw["ensemble"]
        return GridSpec(
            candidates=cands,
            regimes=self.regimes,
            ensemble_rules=tuple(e["rules"]),
            ensemble_contamination=float(e["contamination"]),
            tie_break=e["tie_break"],
            seed=self.seed,
        )


def _validate(raw: dict, base_dir: Path) -> tuple[list[str], DatasetSchema | None]:
    errors: list[str] = []
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        errors.append(f"unknown top-level keys: {sorted(unknown)}")

    ds = raw.get("dataset") or {}
    schema = None
    if not ds.get("path"):
        errors.append("dataset.path is required")
    sch = ds.get("schema")
    if sch is None:
        errors.append("dataset.schema is required (preset name or mapping)")
    else:
        try:
            schema = get_preset(sch) if isinstance(sch, str) else DatasetSchema.from_dict(dict(sch))
        except (SchemaError, TypeError) as exc:
            errors.append(f"dataset.schema: {exc}")
    if ds.get("node_label_rule") not in ("source", "either"):
        errors.append("dataset.node_label_rule must be 'source' or 'either'")

    f = raw.get("features") or {}
    if f.get("catalog") not in CATALOGS:
        errors.append(f"features.catalog must be one of {list(CATALOGS)}")
    else:
        size = catalog_size(f["catalog"])
        p = f.get("p")
        if p is not None and (not isinstance(p, int) or not 0 <= p <= size):
            errors.append(f"features.p must be an integer in [0, {size}] for catalog {f['catalog']!r}")
    for key in ("walk_length", "walks_per_node"):
        if not isinstance(f.get(key), int) or f[key] < 1:
            errors.append(f"features.{key} must be a positive integer")
    if schema is not None and f.get("weight_column") is not None and f["weight_column"] not in schema.numeric_feature_columns:
        errors.append(f"features.weight_column {f['weight_column']!r} is not a numeric feature column")

    regimes = raw.get("regimes")
    if not isinstance(regimes, list) or not regimes or any(r not in REGIMES for r in regimes):
        errors.append(f"regimes must be a non-empty subset of {list(REGIMES)}")
    elif len(set(regimes)) != len(regimes):
        errors.append("regimes has duplicates")

    dets = raw.get("detectors")
    if not isinstance(dets, dict) or not dets:
        errors.append("detectors must map at least one detector to a grid or fixed params")
    else:
        for name, spec in dets.items():
            if name not in DETECTORS:
                errors.append(f"detectors.{name}: unknown detector (known: {list(DETECTORS)})")
                continue
            spec = spec or {}
            if not isinstance(spec, dict):
                errors.append(f"detectors.{name} must be a mapping")
                continue
            valid = set(DETECTORS[name]().get_params())
            grid = {k: v for k, v in spec.items() if k != "params"}
            if "params" in spec:
                if grid:
                    errors.append(f"detectors.{name}: give either params or a grid, not both")
                if not isinstance(spec["params"], dict):
                    errors.append(f"detectors.{name}.params must be a mapping")
                    continue
                grid = {k: [v] for k, v in spec["params"].items()}
            for k, v in grid.items():
                if k not in valid:
                    errors.append(f"detectors.{name}.{k}: unknown parameter (valid: {sorted(valid)})")
                elif not isinstance(v, list) or not v:
                    errors.append(f"detectors.{name}.{k} must be a non-empty list")

    e = raw.get("ensemble") or {}
    rules = e.get("rules")
    if not isinstance(rules, list) or any(r not in ENSEMBLE_RULES for r in rules):
        errors.append(f"ensemble.rules must be a list drawn from {list(ENSEMBLE_RULES)}")
    if e.get("tie_break") not in ("normal", "anomalous"):
        errors.append("ensemble.tie_break must be 'normal' or 'anomalous'")
    c = e.get("contamination")
    if not isinstance(c, (int, float)) or not 0 < c <= 0.5:
        errors.append("ensemble.contamination must be in (0, 0.5]")

    s = raw.get("splits") or {}
    tune, train, test = s.get("tune"), s.get("train"), s.get("test")
    for key, v in (("tune", tune), ("train", train)):
        if not isinstance(v, (int, float)) or not 0 < v <= 1:
            errors.append(f"splits.{key} must be in (0, 1]")
    if isinstance(tune, (int, float)) and isinstance(train, (int, float)) and tune + train > 1:
        errors.append("splits.tune + splits.train must not exceed 1")
    if (
        not isinstance(test, list) or not test
        or any(not isinstance(v, (int, float)) or not 0 < v <= 1 for v in test)
        or any(b <= a for a, b in zip(test, test[1:]))
    ):
        errors.append("splits.test must be a strictly increasing list of fractions in (0, 1]")

    if not isinstance(raw.get("seed"), int):
        errors.append("seed must be an integer")
    if not isinstance(raw.get("n_jobs"), int) or raw["n_jobs"] == 0:
        errors.append("n_jobs must be a non-zero integer")
    out = raw.get("output_dir")
    if not isinstance(out, str) or not out:
        errors.append("output_dir must be a path")
    else:
        target = (base_dir / out).resolve()
        probe = target
        while not probe.exists() and probe != probe.parent:
            probe = probe.parent
        if probe.exists() and not (probe.is_dir() and _writable(probe)):
            errors.append(f"output_dir {target} is not writable")
    return errors, schema


def _writable(path: Path) -> bool:
    import os

    return os.access(path, os.W_OK)


def load_config(path, overrides=()) -> PipelineConfig:
    """Read, merge with defaults, apply ``key=value`` overrides and validate.

    All problems are reported together in one :class:`ConfigError`.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        user = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for ov in overrides:
        keys, value = parse_override(ov)
        _apply_override(user, keys, value)
    raw = _merge(DEFAULTS, user)
    base_dir = path.resolve().parent
    errors, schema = _validate(raw, base_dir)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return PipelineConfig(raw=raw, base_dir=base_dir, schema=schema)
