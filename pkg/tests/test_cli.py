import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from topoflow.cli import main
from topoflow.flows import FlowDataset, write_dataset
from topoflow.synthetic import lateral_movement_traffic, synthetic_schema

FAST_DETECTORS = {
    "ocsvm": {"nu": [0.05, 0.1]},
    "lof": {"n_neighbors": [10], "contamination": [0.05, 0.1]},
    "iforest": {"n_trees": [30], "max_samples": [64]},
}


def setup(tmp_path, ds=None, **extra):
    ds = ds if ds is not None else lateral_movement_traffic(n_flows=1500, seed=2)
    write_dataset(ds, tmp_path / "flows.csv")
    doc = {
        "dataset": {"path": "flows.csv", "schema": ds.schema.to_dict()},
        "features": {"p": 16},
        "detectors": FAST_DETECTORS,
        "splits": {"tune": 0.1, "train": 0.3, "test": [0.1, 0.5, 1.0]},
        "output_dir": "out",
    }
    for key, value in extra.items():
        doc[key] = {**doc.get(key, {}), **value} if isinstance(value, dict) else value
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
        assert first.startswith("# config_hash: ")
        return list(csv.reader(fh))


def test_featurize_shapes_cic_width(tmp_path, capsys):
    # CIC-IDS2017-shaped width: 87 numeric columns
    cfg = setup(tmp_path, lateral_movement_traffic(n_flows=400, m=87, seed=0), features={"p": 48})
    assert main(["featurize", str(cfg)]) == 0
    out = tmp_path / "out" / "features"
    manifest = json.loads((out / "manifest.json").read_text())
    n = manifest["node_features"][1]
    assert manifest["flows"] == [87, 400]
    assert manifest["node_features"] == [48, n]
    assert manifest["expanded"] == [183, 400]
    rows = read_csv(out / "expanded.csv")
    assert len(rows[0]) == 183 + 1 and len(rows) == 401
    assert len(read_csv(out / "node_features.csv")) == n + 1


def test_featurize_p0_identity_and_rerun_bytes(tmp_path):
    ds = lateral_movement_traffic(n_flows=200, m=4, seed=1)
    cfg = setup(tmp_path, ds, features={"p": 0})
    assert main(["featurize", str(cfg)]) == 0
    out = tmp_path / "out" / "features"
    rows = read_csv(out / "expanded.csv")
    X = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
    assert X.tobytes() == ds.X.tobytes()
    first = {f: (out / f).read_bytes() for f in ("graph.tsv", "node_features.csv", "expanded.csv", "manifest.json")}
    assert main(["featurize", str(cfg)]) == 0
    assert first == {f: (out / f).read_bytes() for f in first}


def test_full_pipeline(tmp_path):
    cfg = setup(tmp_path)
    out = tmp_path / "out"
    assert main(["tune", str(cfg)]) == 0
    tune = json.loads((out / "tune_report.json").read_text())
    assert set(tune["best_params"]) == {"standard", "graph", "mixed"}
    assert all(c["ba"] is not None for c in tune["cells"])
    assert json.loads((out / "tune_timings.json").read_text())["fit_seconds"]

    assert main(["train", str(cfg)]) == 0
    models = out / "models"
    for regime in ("standard", "graph", "mixed"):
        for det in ("ocsvm", "lof", "iforest"):
            assert (models / f"{regime}__{det}.pkl").exists()
        assert (models / f"{regime}__ensemble_majority_vote.json").exists()

    assert main(["predict", str(cfg)]) == 0
    rows = read_csv(out / "rolling.csv")
    assert len(rows) - 1 == 3 * 3 * 5  # fractions x regimes x (3 detectors + 2 ensembles)
    for r in read_csv(out / "attack_breakdown.csv")[1:]:
        assert int(r[4]) <= int(r[5])
    assert main(["report", str(cfg)]) == 0
    assert "time" in (out / "report.txt").read_text()


def test_reports_byte_identical_and_leak_free(tmp_path):
    cfg = setup(tmp_path)
    out = tmp_path / "out"
    names = ["tune_report.json", "tune_table.txt", "best_params.json", "train_report.json",
             "train_table.txt", "rolling.csv", "attack_breakdown.csv", "predict_report.json"]
    runs = []
    for _ in range(2):
        for cmd in ("tune", "train", "predict"):
            assert main([cmd, str(cfg)]) == 0
        runs.append({n: (out / n).read_bytes() for n in names})
    assert runs[0] == runs[1]
    ranges = json.loads((out / "predict_report.json").read_text())["index_ranges"]
    tune, train = ranges.pop("tune"), ranges.pop("train")
    assert tune[1] <= train[0]
    assert all(train[1] <= a for a, _ in ranges.values())


def test_n_jobs_does_not_change_results(tmp_path):
    cfg = setup(tmp_path)
    out = tmp_path / "out"
    assert main(["tune", str(cfg)]) == 0
    one = (out / "tune_report.json").read_bytes()
    assert main(["tune", str(cfg), "--n-jobs", "2"]) == 0
    assert (out / "tune_report.json").read_bytes() == one


def test_exit_codes(tmp_path, capsys):
    cfg = setup(tmp_path)
    assert main(["tune", str(cfg), "--set", "features.p=500", "--set", "regimes=[]"]) == 3
    err = capsys.readouterr().err
    assert "features.p" in err and "regimes" in err
    assert main(["tune", str(cfg), "--set", "dataset.path=missing.csv"]) == 4
    assert main(["train", str(cfg)]) == 4  # no best_params yet
    assert main(["tune", str(cfg)]) == 0
    assert main(["train", str(cfg)]) == 0
    assert main(["predict", str(cfg), "--set", "seed=9"]) == 6


def test_tune_without_labels_is_data_error(tmp_path):
    ds = lateral_movement_traffic(n_flows=300, seed=0)
    schema = synthetic_schema(ds.m)
    from dataclasses import replace

    unlabeled = FlowDataset.from_arrays(replace(schema, label_column=None, attack_category_column=None),
                                        ds.X, ds.src, ds.dst)
    cfg = setup(tmp_path, unlabeled)
    assert main(["tune", str(cfg)]) == 4


def test_fit_failure_exit_code(tmp_path):
    cfg = setup(tmp_path, detectors={"lof": {"n_neighbors": [100000]}})
    assert main(["tune", str(cfg)]) == 5
    assert (tmp_path / "out" / "tune_report.json").exists()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "topoflow", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "topoflow" in res.stdout
    res = subprocess.run([sys.executable, "-m", "topoflow", "tune", str(tmp_path / "none.yaml")],
                         capture_output=True, text=True)
    assert res.returncode == 3
