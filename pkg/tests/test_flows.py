import math

import numpy as np
import pytest

from topoflow.exceptions import DataError, SchemaError
from topoflow.flows import (
    PRESETS,
    DatasetSchema,
    FlowDataset,
    get_preset,
    impute_features,
    load_dataset,
    prefix_length,
    prefix_split,
    write_dataset,
)
from topoflow.synthetic import lateral_movement_traffic


def test_three_row_file(tmp_path, tiny_schema):
    path = tmp_path / "f.csv"
    path.write_text("src,dst,bytes,label\na,b,10,0\nb,c,20,1\na,c,5,0\n")
    ds = load_dataset(path, tiny_schema)
    assert (ds.N, ds.m) == (3, 1)
    assert ds.labels.tolist() == [False, True, False]
    assert ds.src == ("a", "b", "a")
    assert [r.index for r in ds.records] == [0, 1, 2]


def test_infinity_imputed_to_column_max(tmp_path, tiny_schema):
    # hand-worked: finite values of the column are 3, -1, 7 -> Infinity -> 7
    path = tmp_path / "f.csv"
    path.write_text("src,dst,bytes,label\na,b,3,0\na,b,Infinity,0\na,b,-1,0\na,b,7,0\n")
    assert load_dataset(path, tiny_schema).X[:, 0].tolist() == [3.0, 7.0, -1.0, 7.0]


def test_imputation_rules():
    X = np.array([[np.nan, -np.inf], [2.0, 5.0], [np.inf, -3.0], [-4.0, np.nan]])
    out = impute_features(X)
    assert out.tolist() == [[0.0, -3.0], [2.0, 5.0], [2.0, -3.0], [-4.0, 0.0]]
    assert impute_features(np.array([[np.inf], [np.nan]])).tolist() == [[0.0], [0.0]]


def test_non_numeric_cell_becomes_zero(tmp_path, tiny_schema):
    path = tmp_path / "f.csv"
    path.write_text("src,dst,bytes,label\na,b,abc,0\na,b,,1\n")
    assert load_dataset(path, tiny_schema).X[:, 0].tolist() == [0.0, 0.0]


def test_missing_column_named(tmp_path, tiny_schema):
    path = tmp_path / "f.csv"
    path.write_text("src,dst,label\na,b,0\n")
    with pytest.raises(SchemaError, match="bytes"):
        load_dataset(path, tiny_schema)


def test_empty_and_missing_files(tmp_path, tiny_schema):
    path = tmp_path / "f.csv"
    path.write_text("src,dst,bytes,label\n")
    with pytest.raises(DataError):
        load_dataset(path, tiny_schema)
    with pytest.raises(OSError):
        load_dataset(tmp_path / "nope.csv", tiny_schema)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dest_ip_column": "src"},
        {"summable_weight_column": "packets"},
        {"numeric_feature_columns": ()},
        {"numeric_feature_columns": ("bytes", "bytes")},
    ],
)
def test_schema_invariants(kwargs):
    base = dict(name="x", source_ip_column="src", dest_ip_column="dst",
                numeric_feature_columns=("bytes",), summable_weight_column="bytes")
    with pytest.raises(SchemaError):
        DatasetSchema(**{**base, **kwargs})


def test_presets():
    unsw = get_preset("unsw-nb15")
    assert len(unsw.column_names) == 49
    assert unsw.m == 45
    assert unsw.summable_weight_column in unsw.numeric_feature_columns
    cic = get_preset("cic-ids2017")
    assert cic.m == 80
    assert cic.label_of("BENIGN") is False and cic.label_of("DDoS") is True
    with pytest.raises(SchemaError):
        get_preset("kdd99")
    assert set(PRESETS) == {"cic-ids2017", "unsw-nb15"}


def test_round_trip_bit_exact(tmp_path):
    ds = lateral_movement_traffic(n_flows=300, seed=3)
    path = tmp_path / "flows.csv"
    write_dataset(ds, path, header_comment="config_hash: abc")
    back = load_dataset(path, ds.schema)
    assert back.X.tobytes() == ds.X.tobytes()
    assert back.src == ds.src and back.dst == ds.dst
    assert np.array_equal(back.labels, ds.labels)
    assert back.categories == ds.categories


def test_headerless_round_trip(tmp_path):
    schema = get_preset("unsw-nb15")
    rng = np.random.default_rng(0)
    X = rng.integers(0, 100, size=(20, schema.m)).astype(float)
    labels = rng.random(20) < 0.3
    cats = ["Worms" if lab else None for lab in labels]
    ds = FlowDataset.from_arrays(schema, X, ["10.0.0.1"] * 20, ["10.0.0.2"] * 20, labels, cats)
    path = tmp_path / "unsw.csv"
    write_dataset(ds, path)
    assert len(path.read_text().splitlines()[0].split(",")) == 49
    back = load_dataset(path, schema)
    assert back.X.tobytes() == X.tobytes()
    assert np.array_equal(back.labels, labels)
    assert int(back.labels.sum()) == int(labels.sum())


def test_category_alias(tmp_path):
    schema = get_preset("unsw-nb15")
    row = ["1.1.1.1", "1", "2.2.2.2"] + ["0"] * 44 + ["Backdoors", "1"]
    path = tmp_path / "u.csv"
    path.write_text(",".join(row) + "\n")
    assert load_dataset(path, schema).categories == ("Backdoor",)


def test_prefix_split_lengths():
    ds = lateral_movement_traffic(n_flows=100, seed=0)
    a, b = prefix_split(ds, [0.01, 0.10])
    assert (a.N, b.N) == (1, 10)
    assert np.array_equal(b.X[:1], a.X)
    (full,) = prefix_split(ds, [1.0])
    assert full.N == 100 and full.X.tobytes() == ds.X.tobytes()
    with pytest.raises(ValueError):
        prefix_split(ds, [])
    with pytest.raises(ValueError):
        prefix_split(ds, [0.5, 0.2])


def test_prefix_length_ceiling():
    assert prefix_length(45883, 0.1) == 4589 == math.ceil(0.1 * 45883)
    assert prefix_length(4400, 1.0) == 4400
    assert prefix_length(100, 0.1) == 10


def test_slices_keep_original_index():
    ds = lateral_movement_traffic(n_flows=50, seed=0)
    part = ds.slice(10, 20)
    assert part.index_range == (10, 20)
    assert [r.index for r in part.records] == list(range(10, 20))
    assert np.array_equal(part.X, ds.X[10:20])
