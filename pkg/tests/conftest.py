import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from topoflow.flows import DatasetSchema, FlowDataset  # noqa: E402


@pytest.fixture
def tiny_schema():
    return DatasetSchema(
        name="tiny",
        source_ip_column="src",
        dest_ip_column="dst",
        numeric_feature_columns=("bytes",),
        summable_weight_column="bytes",
        label_column="label",
        positive_label_values=frozenset({"1"}),
    )


def make_flows(edges, weights=None, labels=None, m=1):
    """FlowDataset from ``[(src, dst), ...]``; column 0 carries the weight."""
    n = len(edges)
    weights = [1.0] * n if weights is None else weights
    X = np.zeros((n, m))
    X[:, 0] = weights
    cols = ("w", *(f"c{k}" for k in range(1, m)))
    schema = DatasetSchema(
        name="edges",
        source_ip_column="src",
        dest_ip_column="dst",
        numeric_feature_columns=cols,
        summable_weight_column="w",
        label_column="label",
        attack_category_column="attack_cat",
        positive_label_values=frozenset({"1"}),
    )
    return FlowDataset.from_arrays(
        schema, X, [str(a) for a, _ in edges], [str(b) for _, b in edges],
        labels=None if labels is None else np.asarray(labels, dtype=bool),
    )


# ------------------------------------------------------ acceptance summary

_ACCEPTANCE: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): one acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _ACCEPTANCE[item.nodeid] = {"label": mark.args[0], "outcome": None, "detail": ""}


def pytest_runtest_logreport(report):
    entry = _ACCEPTANCE.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or report.outcome != "passed":
        if entry["outcome"] in (None, "passed"):
            entry["outcome"] = report.outcome
        for name, value in report.user_properties:
            if name == "measured":
                entry["detail"] = str(value)
        if report.skipped and isinstance(report.longrepr, tuple):
            entry["detail"] = report.longrepr[2]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    word = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP", None: "NOT RUN"}
    for entry in _ACCEPTANCE.values():
        line = f"{word[entry['outcome']]:<5} {entry['label']}"
        if entry["detail"]:
            line += f"  [{entry['detail']}]"
        tr.write_line(line)


def pytest_deselected(items):
    for item in items:
        _ACCEPTANCE.pop(item.nodeid, None)
