"""Command-line front end: featurize, tune, train, predict and report.

Every command reads one YAML config (see ``examples/pipeline.yaml`` in the
repository README). Outputs land in ``output_dir`` and carry the config hash.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .config import PipelineConfig, load_config
from .exceptions import DataError, FitError, ProvenanceError, TopoflowError
from .expand import expand, write_expanded
from .flows import load_dataset
from .graph import build_graph, write_edge_list
from .harness import (
    EvalReport,
    GridSearchError,
    prepare_regimes,
    render_table,
    rolling_test,
    split_blocks,
    grid_search,
    train_and_report,
)
from .persist import load_ensemble, load_model, save_ensemble, save_model
from .topology import node_features, write_node_features

logger = logging.getLogger("topoflow")

EXIT_OK = 0
_RATES = ("tpr", "tnr", "fp_scaled")


def _stamp(cfg: PipelineConfig) -> str:
    return f"config_hash: {cfg.hash}"


def _write_json(path: Path, doc: dict, cfg: PipelineConfig) -> None:
    doc = {"config_hash": cfg.hash, **doc}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_text(path: Path, text: str, cfg: PipelineConfig) -> None:
    path.write_text(f"# {_stamp(cfg)}\n{text}", encoding="utf-8")


def _read_json(path: Path, cfg: PipelineConfig | None = None) -> dict:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{path} not found; run the earlier pipeline stage first") from None
    if cfg is not None and doc.get("config_hash") != cfg.hash:
        raise ProvenanceError(f"{path} was produced under a different configuration")
    return doc


def _load(cfg: PipelineConfig):
    ds = load_dataset(cfg.dataset_path, cfg.schema)
    logger.info("loaded %d flows with %d features from %s", ds.N, ds.m, cfg.dataset_path)
    return ds


def _outdir(cfg: PipelineConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_featurize(cfg: PipelineConfig) -> int:
    """Graph edge list, node feature matrix and expanded flow matrix of the
    whole dataset (unscaled)."""
    ds = _load(cfg)
    out = _outdir(cfg) / "features"
    out.mkdir(exist_ok=True)
    fp = cfg.feature_params()
    g = build_graph(ds, fp["weight_column"])
    Z = node_features(
        g, catalog=fp["catalog"], p=fp["p"], walk_length=fp["walk_length"],
        walks_per_node=fp["walks_per_node"], seed=cfg.seed, n_jobs=cfg.n_jobs,
    )
    stamp = _stamp(cfg)
    write_edge_list(g, out / "graph.tsv", stamp)
    write_node_features(Z, g, out / "node_features.csv", stamp)
    ed = expand(ds, Z, g)
    write_expanded(ed, out / "expanded.csv", stamp)
    _write_json(out / "manifest.json", {
        "flows": [ds.m, ds.N],
        "node_features": [Z.p, Z.n],
        "expanded": [ed.n_features, ed.n_samples],
        "edges": g.total_edges,
        "graph_warnings": list(g.warnings),
        "files": ["graph.tsv", "node_features.csv", "expanded.csv"],
    }, cfg)
    print(f"flows (m, N) = ({ds.m}, {ds.N}); node features (p, n) = ({Z.p}, {Z.n}); "
          f"expanded (m+2p, N) = ({ed.n_features}, {ed.n_samples}) -> {out}")
    return EXIT_OK


def cmd_tune(cfg: PipelineConfig) -> int:
    ds = _load(cfg)
    blocks = split_blocks(ds, cfg.splits["tune"], cfg.splits["train"])
    if blocks.tune.labels is None:
        raise DataError("the tuning block has no labels; grid search needs them")
    data = {r: ed for r, (_, ed) in prepare_regimes(blocks.tune, cfg.regimes, cfg.feature_params()).items()}
    grid = cfg.grid()
    out = _outdir(cfg)
    code = EXIT_OK
    try:
        best, report = grid_search(data, grid, n_jobs=cfg.n_jobs)
    except GridSearchError as exc:
        best, report = exc.best, exc.report
        logger.error("%s", exc)
        code = exc.exit_code
    report.index_ranges = {"tune": blocks.tune.index_range}
    report.notes.append("balanced accuracy measured on the tuning block the models were fitted on")
    _write_json(out / "best_params.json", {"params": best}, cfg)
    _write_report(out, report, cfg)
    print(render_table(report), end="")
    return code


def _write_report(out: Path, report: EvalReport, cfg: PipelineConfig) -> None:
    _write_json(out / f"{report.stage}_report.json", report.to_dict(), cfg)
    _write_json(out / f"{report.stage}_timings.json", {"fit_seconds": report.timings()}, cfg)
    _write_text(out / f"{report.stage}_table.txt", render_table(report, with_times=False), cfg)


def _model_name(regime: str, name: str) -> str:
    return f"{regime}__{name}"


def cmd_train(cfg: PipelineConfig, params_file: Path | None = None) -> int:
    out = _outdir(cfg)
    params_file = params_file or out / "best_params.json"
    params = _read_json(Path(params_file))["params"]
    ds = _load(cfg)
    blocks = split_blocks(ds, cfg.splits["tune"], cfg.splits["train"])
    if blocks.train.N == 0:
        raise DataError("the training block is empty")
    fitted = prepare_regimes(blocks.train, cfg.regimes, cfg.feature_params())
    data = {r: ed for r, (_, ed) in fitted.items()}
    holdout_ds = blocks.rest.slice(0, blocks.train.N)
    holdout = {}
    if holdout_ds.N:
        holdout = {r: tr.transform_dataset(holdout_ds) for r, (tr, _) in fitted.items()}
    grid = cfg.grid()
    det_params = {r: {d: p for d, p in ps.items() if not d.startswith("ensemble_")} for r, ps in params.items()}
    models, report = train_and_report(data, det_params, grid, holdout_data=holdout)
    report.index_ranges = {"tune": blocks.tune.index_range, "train": blocks.train.index_range}
    if holdout_ds.N:
        report.index_ranges["holdout"] = holdout_ds.index_range
        report.notes.append("holdout rows: models scored on the block that follows the training block")
    report.notes.append("balanced accuracy measured on the training block the models were fitted on")

    mdir = out / "models"
    mdir.mkdir(exist_ok=True)
    manifest = {"models": [], "transformers": {}}
    for regime, (tr, _) in fitted.items():
        fname = f"{_model_name(regime, 'transformer')}.pkl"
        save_model(tr, mdir / fname, cfg.hash)
        manifest["transformers"][regime] = fname
    for regime, dets in models.items():
        member_files = {}
        for name, model in dets.items():
            if name.startswith("ensemble_"):
                continue
            fname = f"{_model_name(regime, name)}.pkl"
            save_model(model, mdir / fname, cfg.hash)
            member_files[name] = fname
            manifest["models"].append([regime, name, fname])
        for name, model in dets.items():
            if name.startswith("ensemble_"):
                fname = f"{_model_name(regime, name)}.json"
                save_ensemble(model, mdir / fname, member_files, cfg.hash)
                manifest["models"].append([regime, name, fname])
    manifest["index_ranges"] = {k: list(v) for k, v in report.index_ranges.items()}
    _write_json(mdir / "manifest.json", manifest, cfg)
    _write_report(out, report, cfg)
    print(render_table(report), end="")
    return FitError.exit_code if report.failures else EXIT_OK


def cmd_predict(cfg: PipelineConfig, models_dir: Path | None = None) -> int:
    out = _outdir(cfg)
    mdir = Path(models_dir) if models_dir else out / "models"
    manifest = _read_json(mdir / "manifest.json", cfg)
    transformers = {r: load_model(mdir / f, cfg.hash) for r, f in manifest["transformers"].items()}
    models: dict[str, dict] = {}
    for regime, name, fname in manifest["models"]:
        path = mdir / fname
        models.setdefault(regime, {})[name] = (
            load_ensemble(path, cfg.hash) if fname.endswith(".json") else load_model(path, cfg.hash)
        )

    ds = _load(cfg)
    blocks = split_blocks(ds, cfg.splits["tune"], cfg.splits["train"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = rolling_test(models, transformers, blocks.rest, cfg.splits["test"])
    notes = sorted({str(w.message) for w in caught})
    for n in notes:
        logger.warning(n)

    ranges = {"tune": list(blocks.tune.index_range), "train": list(blocks.train.index_range)}
    for r in rows:
        ranges[f"test@{r['fraction']}"] = [r["start"], r["stop"]]
    series_cols = ["regime", "detector", "fraction", "start", "stop", "samples",
                   "tp", "fn", "tn", "fp", "tpr", "tnr", "fp_scaled"]
    with open(out / "rolling.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_stamp(cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series_cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (f"{r[c]:.6f}" if c in _RATES else r[c])
                        for c in series_cols])
    with open(out / "attack_breakdown.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_stamp(cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regime", "detector", "fraction", "category", "detected", "total"])
        for r in rows:
            for cat, (det, tot) in (r.get("breakdown") or {}).items():
                w.writerow([r["regime"], r["detector"], r["fraction"], cat, det, tot])
    _write_json(out / "predict_report.json", {
        "stage": "predict",
        "index_ranges": ranges,
        "rows": rows,
        "warnings": notes,
    }, cfg)
    print(f"{len(rows)} rows -> {out / 'rolling.csv'}, {out / 'attack_breakdown.csv'}")
    return EXIT_OK


def cmd_report(cfg: PipelineConfig) -> int:
    """Re-render the stage tables, with fit times, from the JSON outputs."""
    out = cfg.output_dir
    parts = []
    for stage in ("tune", "train"):
        path = out / f"{stage}_report.json"
        if not path.exists():
            continue
        doc = _read_json(path, cfg)
        tpath = out / f"{stage}_timings.json"
        timings = _read_json(tpath, cfg)["fit_seconds"] if tpath.exists() else {}
        doc.pop("config_hash", None)
        parts.append(render_table(EvalReport.from_dict(doc, timings)))
    ppath = out / "predict_report.json"
    if ppath.exists():
        doc = _read_json(ppath, cfg)
        lines = ["stage: predict", f"{'regime':<9} {'detector':<24} {'fraction':>8} {'TPR':>7} {'TNR':>7} {'FP':>7} {'FP(scaled)':>10}"]
        for r in doc["rows"]:
            tpr = "-" if r["tpr"] is None else f"{r['tpr']:.4f}"
            tnr = "-" if r["tnr"] is None else f"{r['tnr']:.4f}"
            lines.append(f"{r['regime']:<9} {r['detector']:<24} {r['fraction']:>8} {tpr:>7} {tnr:>7} "
                         f"{r['fp']:>7} {r['fp_scaled']:>10.3f}")
        parts.append("\n".join(lines) + "\n")
    if not parts:
        raise DataError(f"no reports found in {out}")
    text = "\n".join(parts)
    _write_text(out / "report.txt", text, cfg)
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topoflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", type=Path, help="pipeline YAML file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. features.p=16 (repeatable)")
        p.add_argument("--n-jobs", type=int, help="worker count (does not change results)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("featurize", help="write graph, node features and expanded flows"))
    common(sub.add_parser("tune", help="grid search on the labeled head of the data"))
    p = common(sub.add_parser("train", help="fit tuned models on the training block"))
    p.add_argument("--params", type=Path, help="best-params file (default: <output_dir>/best_params.json)")
    p = common(sub.add_parser("predict", help="score growing test windows after the training block"))
    p.add_argument("--models", type=Path, help="models directory (default: <output_dir>/models)")
    common(sub.add_parser("report", help="re-render tables from the JSON outputs"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = list(args.overrides)
    if args.n_jobs is not None:
        overrides.append(f"n_jobs={args.n_jobs}")
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "featurize":
            return cmd_featurize(cfg)
        if args.command == "tune":
            return cmd_tune(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.params)
        if args.command == "predict":
            return cmd_predict(cfg, args.models)
        return cmd_report(cfg)
    except TopoflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
