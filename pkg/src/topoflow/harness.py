"""Time-ordered evaluation protocol: tune on a labeled head, train on the next
block, then score growing test windows that follow it."""

from __future__ import annotations

import itertools
import json
import logging
import time
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .detectors import DETECTORS, BaseDetector, make_detector
from .ensemble import fit_ensemble
from .exceptions import DataError, FitError
from .expand import REGIMES, ExpandedDataset, RegimeTransformer
from .flows import FlowDataset, prefix_length

__all__ = [
    "DEFAULT_GRID",
    "ENSEMBLE_RULES",
    "GridSpec",
    "CellResult",
    "EvalReport",
    "Blocks",
    "balanced_accuracy",
    "confusion",
    "derive_seed",
    "expand_grid",
    "split_blocks",
    "prepare_regimes",
    "grid_search",
    "train_and_report",
    "attack_breakdown",
    "rolling_test",
    "render_table",
]

logger = logging.getLogger(__name__)

DETECTOR_ORDER = ("ocsvm", "lof", "iforest")
ENSEMBLE_RULES = ("majority_vote", "average_score")

DEFAULT_GRID = {
    "ocsvm": {"nu": [0.01, 0.05, 0.1, 0.2], "gamma": ["auto", 0.1, 1.0]},
    "lof": {"n_neighbors": [5, 10, 20, 35], "contamination": [0.01, 0.05, 0.1]},
    "iforest": {"n_trees": [50, 100, 200], "max_samples": [64, 256], "contamination": [0.01, 0.05, 0.1]},
}


def derive_seed(base: int, *keys) -> int:
    """Stable 32-bit seed from a base seed and string-able keys."""
    words = [int(base) & 0xFFFFFFFF] + [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def expand_grid(spec: Mapping[str, Sequence]) -> list[dict]:
    """Cartesian product of a ``{param: [values]}`` mapping, in listed order."""
    if not spec:
        return [{}]
    keys = list(spec)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(spec[k] for k in keys))]


@dataclass
class GridSpec:
    """Candidate parameters per detector and the regimes they are tried on."""

    candidates: dict[str, list[dict]] = field(
        default_factory=lambda: {d: expand_grid(g) for d, g in DEFAULT_GRID.items()}
    )
    regimes: tuple[str, ...] = REGIMES
    ensemble_rules: tuple[str, ...] = ENSEMBLE_RULES
    ensemble_contamination: float = 0.1
    tie_break: str = "normal"
    seed: int = 0

    def __post_init__(self):
        for det, cands in self.candidates.items():
            if det not in DETECTORS:
                raise ValueError(f"unknown detector {det!r}")
            if not cands:
                raise ValueError(f"empty candidate list for {det}")
        for r in self.regimes:
            if r not in REGIMES:
                raise ValueError(f"unknown regime {r!r}")

    @property
    def detectors(self) -> list[str]:
        return [d for d in DETECTOR_ORDER if d in self.candidates]


# ---------------------------------------------------------------- metrics


def confusion(pred, truth) -> dict:
    """Confusion counts and rates; single-class truth is flagged."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    tp = int(np.sum(pred & truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    tpr = tp / (tp + fn) if tp + fn else None
    tnr = tn / (tn + fp) if tn + fp else None
    if tpr is not None and tnr is not None:
        ba, flag = (tpr + tnr) / 2.0, None
    elif tpr is not None:
        ba, flag = tpr, "no_negatives"
    elif tnr is not None:
        ba, flag = tnr, "no_positives"
    else:
        ba, flag = float("nan"), "empty"
    return {"tp": tp, "fn": fn, "tn": tn, "fp": fp, "tpr": tpr, "tnr": tnr, "ba": ba, "flag": flag}


def balanced_accuracy(pred, truth) -> float:
    """Mean of true-positive and true-negative rates.

    With single-class truth only one rate exists and it is returned alone;
    :func:`confusion` reports which case applied.
    """
    return confusion(pred, truth)["ba"]


def attack_breakdown(pred, truth, categories, index=None) -> dict[str, tuple[int, int]]:
    """Per attack category ``(detected, total)`` over the truth-positive rows."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if categories is None:
        categories = [None] * len(truth)
    out: dict[str, list[int]] = {}
    for r in np.flatnonzero(truth):
        cat = categories[r]
        if not cat:
            rec = int(index[r]) if index is not None else int(r)
            raise DataError(f"attack record {rec} has no attack category")
        cell = out.setdefault(cat, [0, 0])
        cell[1] += 1
        cell[0] += int(pred[r])
    return {c: (d, t) for c, (d, t) in sorted(out.items())}


# ---------------------------------------------------------------- reports


@dataclass
class CellResult:
    regime: str
    detector: str
    ba: float
    tpr: float | None
    tnr: float | None
    tp: int
    fn: int
    tn: int
    fp: int
    fit_seconds: float
    params: dict
    flag: str | None = None

    def key(self) -> tuple[str, str]:
        return (self.regime, self.detector)


@dataclass
class EvalReport:
    """Results of one protocol stage (``tune`` or ``train``).

    ``fit_seconds`` values are kept out of :meth:`to_dict` so that the
    machine-readable report is identical across reruns; they are written
    separately by :meth:`timings`.
    """

    stage: str
    cells: list[CellResult] = field(default_factory=list)
    shapes: dict[str, tuple[int, int, int]] = field(default_factory=dict)
    index_ranges: dict[str, tuple[int, int]] = field(default_factory=dict)
    breakdown: dict[str, dict[str, dict[str, tuple[int, int]]]] = field(default_factory=dict)
    best_params: dict[str, dict[str, dict]] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    holdout: list[CellResult] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def cell(self, regime, detector) -> CellResult | None:
        for c in self.cells:
            if c.regime == regime and c.detector == detector:
                return c
        return None

    def to_dict(self) -> dict:
        def cell_dict(c):
            d = asdict(c)
            d.pop("fit_seconds")
            return d

        return {
            "stage": self.stage,
            "shapes": {r: list(t) for r, t in self.shapes.items()},
            "index_ranges": {k: list(v) for k, v in self.index_ranges.items()},
            "cells": [cell_dict(c) for c in self.cells],
            "holdout": [cell_dict(c) for c in self.holdout],
            "breakdown": {
                r: {d: {c: list(v) for c, v in cats.items()} for d, cats in dets.items()}
                for r, dets in self.breakdown.items()
            },
            "best_params": self.best_params,
            "failures": self.failures,
            "notes": self.notes,
        }

    def timings(self) -> dict:
        return {f"{c.regime}/{c.detector}": c.fit_seconds for c in self.cells}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict, timings: dict | None = None) -> "EvalReport":
        timings = timings or {}

        def cell(c):
            return CellResult(fit_seconds=timings.get(f"{c['regime']}/{c['detector']}", float("nan")), **c)

        return cls(
            stage=d["stage"],
            cells=[cell(c) for c in d["cells"]],
            shapes={r: tuple(t) for r, t in d["shapes"].items()},
            index_ranges={k: tuple(v) for k, v in d["index_ranges"].items()},
            breakdown={
                r: {det: {c: tuple(v) for c, v in cats.items()} for det, cats in dets.items()}
                for r, dets in d.get("breakdown", {}).items()
            },
            best_params=d.get("best_params", {}),
            failures=d.get("failures", []),
            holdout=[CellResult(fit_seconds=float("nan"), **c) for c in d.get("holdout", [])],
            notes=d.get("notes", []),
        )


def _fmt_ba(c: CellResult | None) -> str:
    if c is None or c.ba is None or c.ba != c.ba:
        return "-"
    return f"{c.ba:.4f}" + ("*" if c.flag else "")


def render_table(report: EvalReport, with_times: bool = True) -> str:
    """Aligned text table: one row per regime, BA (and fit time) per detector."""
    regimes = [r for r in REGIMES if r in report.shapes]
    dets = [d for d in DETECTOR_ORDER if any(c.detector == d for c in report.cells)]
    ens = [d for d in (f"ensemble_{r}" for r in ENSEMBLE_RULES) if any(c.detector == d for c in report.cells)]
    header = ["regime", "(features, samples, outliers)"]
    for d in dets:
        header += [d, "time"] if with_times else [d]
    header += ens
    rows = [header]
    for r in regimes:
        row = [r, str(tuple(report.shapes[r]))]
        for d in dets:
            c = report.cell(r, d)
            row.append(_fmt_ba(c))
            if with_times:
                row.append("-" if c is None or c.fit_seconds != c.fit_seconds else f"{c.fit_seconds:.2f}s")
        row += [_fmt_ba(report.cell(r, e)) for e in ens]
        rows.append(row)
    widths = [max(len(row[k]) for row in rows) for k in range(len(header))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    out = [f"stage: {report.stage}", *lines]
    if report.index_ranges:
        out.append("")
        spans = sorted(report.index_ranges.items(), key=lambda kv: tuple(kv[1]))
        out += [f"records {k}: [{a}, {b})" for k, (a, b) in spans]
    if report.holdout:
        out.append("")
        out.append("balanced accuracy on the next block:")
        for c in report.holdout:
            out.append(f"  {c.regime:<9} {c.detector:<24} {_fmt_ba(c)}")
    for r, dets_ in report.breakdown.items():
        for d, cats in dets_.items():
            out.append("")
            out.append(f"attack breakdown ({r}, {d}):")
            for cat, (det, tot) in cats.items():
                out.append(f"  {cat:<16} {det:>7} / {tot}")
    if any(c.flag for c in report.cells):
        out.append("")
        out.append("* single-class truth: only the defined rate is shown")
    if report.failures:
        out.append("")
        out += [f"failed: {f}" for f in report.failures]
    return "\n".join(out) + "\n"


# --------------------------------------------------------------- protocol


class GridSearchError(FitError):
    """Some (regime, detector) pair had no candidate that could be fitted.

    ``report`` and ``best`` hold the partial results.
    """



@dataclass(frozen=True)
class Blocks:
    tune: FlowDataset
    train: FlowDataset
    rest: FlowDataset

    def ranges(self) -> dict[str, tuple[int, int]]:
        return {"tune": self.tune.index_range, "train": self.train.index_range}


def split_blocks(ds: FlowDataset, tune_fraction: float = 0.01, train_fraction: float = 0.10) -> Blocks:
    """Consecutive tune / train / remaining blocks, sized against the full N."""
    if not (0 < tune_fraction <= 1 and 0 < train_fraction <= 1):
        raise ValueError("block fractions must be in (0, 1]")
    a = prefix_length(ds.N, tune_fraction)
    b = min(ds.N, a + prefix_length(ds.N, train_fraction))
    return Blocks(ds.slice(0, a), ds.slice(a, b), ds.slice(b, ds.N))


def prepare_regimes(
    ds: FlowDataset, regimes: Sequence[str], feature_params: Mapping | None = None
) -> dict[str, tuple[RegimeTransformer, ExpandedDataset]]:
    """Fit a :class:`RegimeTransformer` per regime on ``ds`` and transform it."""
    out = {}
    for r in regimes:
        tr = RegimeTransformer(regime=r, **(feature_params or {}))
        ed = tr.fit_transform_dataset(ds)
        out[r] = (tr, ed)
    return out


def _with_seed(det: str, params: dict, seed: int) -> dict:
    params = dict(params)
    if "random_state" in DETECTORS[det]().get_params() and "random_state" not in params:
        params["random_state"] = seed
    return params


def _evaluate(det: str, params: dict, ed: ExpandedDataset):
    model = make_detector(det, params)
    t0 = time.perf_counter()
    model.fit(ed.values)
    elapsed = time.perf_counter() - t0
    return model, elapsed, confusion(model.labels_, ed.labels)


def _cell(regime, det, conf, elapsed, params) -> CellResult:
    return CellResult(
        regime=regime, detector=det, ba=conf["ba"], tpr=conf["tpr"], tnr=conf["tnr"],
        tp=conf["tp"], fn=conf["fn"], tn=conf["tn"], fp=conf["fp"],
        fit_seconds=elapsed, params=params, flag=conf["flag"],
    )


def _run_candidate(det, params, ed):
    try:
        model, elapsed, conf = _evaluate(det, params, ed)
        return model, elapsed, conf, None
    except (ValueError, FitError, np.linalg.LinAlgError) as exc:
        return None, 0.0, None, f"{type(exc).__name__}: {exc}"


def _ensemble_cells(regime, members, ed, grid, report):
    for rule in grid.ensemble_rules:
        t0 = time.perf_counter()
        ens = fit_ensemble(
            [(d, m) for d, m in members], ed.values, rule=rule,
            contamination=grid.ensemble_contamination, tie_break=grid.tie_break,
        )
        elapsed = time.perf_counter() - t0
        conf = confusion(ens.labels_, ed.labels)
        params = {"rule": rule, "tie_break": grid.tie_break, "members": [d for d, _ in members]}
        if rule == "average_score":
            params["contamination"] = grid.ensemble_contamination
        report.cells.append(_cell(regime, f"ensemble_{rule}", conf, elapsed, params))
        yield rule, ens


def grid_search(
    tune_data: Mapping[str, ExpandedDataset], grid: GridSpec, n_jobs: int | None = None
) -> tuple[dict[str, dict[str, dict]], EvalReport]:
    """Pick, per regime and detector, the candidate with the highest balanced
    accuracy when fitted and scored on the same labeled tuning block.

    Ties go to the first-listed candidate. Returns the best parameters and a
    report with the best cell per detector plus both ensemble rules over the
    best members.
    """
    report = EvalReport(stage="tune")
    best: dict[str, dict[str, dict]] = {}
    missing: list[str] = []
    for regime in grid.regimes:
        if regime not in tune_data:
            continue
        ed = tune_data[regime]
        if ed.labels is None:
            raise DataError(f"tuning data for regime {regime!r} has no labels")
        report.shapes[regime] = ed.shape_triple
        members = []
        for det in grid.detectors:
            seed = derive_seed(grid.seed, "tune", regime, det)
            cands = [_with_seed(det, p, seed) for p in grid.candidates[det]]
            if n_jobs in (None, 1):
                results = [_run_candidate(det, p, ed) for p in cands]
            else:
                from joblib import Parallel, delayed

                results = Parallel(n_jobs=n_jobs)(delayed(_run_candidate)(det, p, ed) for p in cands)
            chosen = None
            for params, (model, elapsed, conf, err) in zip(cands, results):
                if err is not None:
                    report.failures.append(f"{regime}/{det} {params}: {err}")
                    continue
                if chosen is None or conf["ba"] > chosen[3]["ba"]:
                    chosen = (params, model, elapsed, conf)
            if chosen is None:
                missing.append(f"{regime}/{det}")
                continue
            params, model, elapsed, conf = chosen
            best.setdefault(regime, {})[det] = params
            report.cells.append(_cell(regime, det, conf, elapsed, params))
            members.append((det, model))
        if not members:
            continue
        for rule, _ in _ensemble_cells(regime, members, ed, grid, report):
            best[regime][f"ensemble_{rule}"] = {"rule": rule}
    report.best_params = best
    if missing:
        err = GridSearchError(
            f"no candidate could be fitted for {', '.join(missing)}:\n  " + "\n  ".join(report.failures)
        )
        err.report = report
        err.best = best
        raise err
    return best, report


def train_and_report(
    train_data: Mapping[str, ExpandedDataset],
    params: Mapping[str, Mapping[str, dict]],
    grid: GridSpec,
    holdout_data: Mapping[str, ExpandedDataset] | None = None,
) -> tuple[dict[str, dict[str, BaseDetector]], EvalReport]:
    """Fit every detector and ensemble with fixed parameters on the training
    block and score that same block.

    When ``holdout_data`` is given the fitted models are also scored on it
    and reported under ``EvalReport.holdout``.
    """
    report = EvalReport(stage="train")
    models: dict[str, dict[str, BaseDetector]] = {}
    for regime in grid.regimes:
        if regime not in train_data:
            continue
        ed = train_data[regime]
        report.shapes[regime] = ed.shape_triple
        members = []
        for det in grid.detectors:
            if det not in params.get(regime, {}):
                continue
            p = dict(params[regime][det])
            try:
                model = make_detector(det, p)
                t0 = time.perf_counter()
                model.fit(ed.values)
                elapsed = time.perf_counter() - t0
            except (ValueError, FitError, np.linalg.LinAlgError) as exc:
                report.failures.append(f"{regime}/{det}: {type(exc).__name__}: {exc}")
                continue
            models.setdefault(regime, {})[det] = model
            members.append((det, model))
            if ed.labels is not None:
                report.cells.append(_cell(regime, det, confusion(model.labels_, ed.labels), elapsed, p))
        if not members:
            continue
        if ed.labels is not None:
            ens_iter = _ensemble_cells(regime, members, ed, grid, report)
        else:
            ens_iter = (
                (rule, fit_ensemble(members, ed.values, rule=rule,
                                    contamination=grid.ensemble_contamination, tie_break=grid.tie_break))
                for rule in grid.ensemble_rules
            )
        for rule, ens in ens_iter:
            models[regime][f"ensemble_{rule}"] = ens
            if ed.labels is not None and ed.categories is not None and ed.labels.any():
                report.breakdown.setdefault(regime, {})[f"ensemble_{rule}"] = attack_breakdown(
                    ens.labels_, ed.labels, ed.categories, ed.index
                )
        if holdout_data is not None and regime in holdout_data:
            ho = holdout_data[regime]
            if ho.n_samples and ho.labels is not None:
                for name, model in models[regime].items():
                    conf = confusion(model.predict(ho.values), ho.labels)
                    report.holdout.append(_cell(regime, name, conf, float("nan"), {}))
    report.best_params = {r: {d: dict(params[r][d]) for d in params[r]} for r in params if r in train_data}
    return models, report


def rolling_test(
    models: Mapping[str, Mapping[str, BaseDetector]],
    transformers: Mapping[str, RegimeTransformer],
    rest: FlowDataset,
    test_fractions: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 1.0),
) -> list[dict]:
    """Score growing windows of the data that follows the training block.

    Window ``f`` covers the first ``ceil(f * len(rest))`` records of ``rest``.
    Graph and mixed windows are embedded from their own traffic and scaled
    with the training-block statistics. Every row carries raw FP counts and
    ``fp_scaled``, the FP count min-max scaled over all rows of the same
    regime. Flow regimes with attack categories also get a per-category
    ``breakdown``.
    """
    rows = []
    for f in test_fractions:
        if not 0 < f <= 1:
            warnings.warn(f"test fraction {f} clipped to (0, 1]")
            f = min(max(f, 0.0), 1.0)
        size = prefix_length(rest.N, f)
        window = rest.slice(0, size)
        base = {"fraction": f, "start": window.index_range[0], "stop": window.index_range[1]}
        for regime, dets in models.items():
            if size == 0:
                warnings.warn(f"test window {f} holds no records after the training block")
                for name in dets:
                    rows.append({**base, "regime": regime, "detector": name, "samples": 0, "tp": 0,
                                 "fn": 0, "tn": 0, "fp": 0, "tpr": None, "tnr": None, "empty": True})
                continue
            ed = transformers[regime].transform_dataset(window)
            for name, model in dets.items():
                pred = model.predict(ed.values)
                truth = ed.labels if ed.labels is not None else np.zeros(ed.n_samples, dtype=bool)
                conf = confusion(pred, truth)
                row = {**base, "regime": regime, "detector": name, "samples": ed.n_samples,
                       "tp": conf["tp"], "fn": conf["fn"], "tn": conf["tn"], "fp": conf["fp"],
                       "tpr": conf["tpr"], "tnr": conf["tnr"], "empty": False}
                if ed.categories is not None and ed.labels is not None and ed.labels.any():
                    row["breakdown"] = attack_breakdown(pred, ed.labels, ed.categories, ed.index)
                rows.append(row)
    for regime in {r["regime"] for r in rows}:
        sel = [r for r in rows if r["regime"] == regime]
        fps = np.array([r["fp"] for r in sel], dtype=float)
        lo, hi = fps.min(), fps.max()
        for r, v in zip(sel, fps):
            r["fp_scaled"] = (v - lo) / (hi - lo) if hi > lo else (1.0 if hi > 0 else 0.0)
    return rows
