"""Flow table ingestion: schemas, typed records and time-ordered prefixes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .exceptions import DataError, SchemaError

__all__ = [
    "DatasetSchema",
    "FlowRecord",
    "FlowDataset",
    "PRESETS",
    "get_preset",
    "load_dataset",
    "write_dataset",
    "prefix_split",
    "impute_features",
]


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout of a delimited flow table.

    ``negative_label_values`` is an alternative to ``positive_label_values``
    for datasets whose attack labels are open-ended (every label that is not
    listed as benign counts as an attack). When both are empty every row is
    treated as normal.

    ``column_names`` is used for headerless files (``has_header=False``).
    """

    name: str
    source_ip_column: str
    dest_ip_column: str
    numeric_feature_columns: tuple[str, ...]
    summable_weight_column: str
    label_column: str | None = None
    attack_category_column: str | None = None
    positive_label_values: frozenset[str] = frozenset()
    negative_label_values: frozenset[str] = frozenset()
    delimiter: str = ","
    has_header: bool = True
    column_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "numeric_feature_columns", tuple(self.numeric_feature_columns))
        object.__setattr__(self, "positive_label_values", frozenset(self.positive_label_values))
        object.__setattr__(self, "negative_label_values", frozenset(self.negative_label_values))
        if self.column_names is not None:
            object.__setattr__(self, "column_names", tuple(self.column_names))
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.source_ip_column == self.dest_ip_column:
            problems.append("source_ip_column and dest_ip_column must differ")
        cols = self.numeric_feature_columns
        if not cols:
            problems.append("numeric_feature_columns is empty")
        if len(set(cols)) != len(cols):
            dup = sorted({c for c in cols if cols.count(c) > 1})
            problems.append(f"numeric_feature_columns has duplicates: {dup}")
        if self.summable_weight_column not in cols:
            problems.append(
                f"summable_weight_column {self.summable_weight_column!r} "
                "is not a numeric feature column"
            )
        if not self.has_header and not self.column_names:
            problems.append("headerless schema needs column_names")
        if problems:
            raise SchemaError("; ".join(problems))

    @property
    def m(self) -> int:
        return len(self.numeric_feature_columns)

    def with_weight(self, column: str) -> "DatasetSchema":
        """Copy of the schema with another summable weight column."""
        from dataclasses import replace

        return replace(self, summable_weight_column=column)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source_ip_column": self.source_ip_column,
            "dest_ip_column": self.dest_ip_column,
            "numeric_feature_columns": list(self.numeric_feature_columns),
            "summable_weight_column": self.summable_weight_column,
            "label_column": self.label_column,
            "attack_category_column": self.attack_category_column,
            "positive_label_values": sorted(self.positive_label_values),
            "negative_label_values": sorted(self.negative_label_values),
            "delimiter": self.delimiter,
            "has_header": self.has_header,
            "column_names": None if self.column_names is None else list(self.column_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        missing = [k for k in ("name", "source_ip_column", "dest_ip_column",
                               "numeric_feature_columns", "summable_weight_column")
                   if k not in d]
        if missing:
            raise SchemaError(f"schema is missing keys: {missing}")
        return cls(**d)

    def label_of(self, raw: str) -> bool:
        value = raw.strip()
        if self.positive_label_values:
            return value in self.positive_label_values
        if self.negative_label_values:
            return value not in self.negative_label_values
        return False


@dataclass(frozen=True)
class FlowRecord:
    index: int
    src: str
    dst: str
    features: np.ndarray
    label: bool | None = None
    attack_category: str | None = None


@dataclass(frozen=True, eq=False)
class FlowDataset:
    """Immutable, time-ordered flow table.

    Stored column-wise: ``X`` has one row per flow (shape ``(N, m)``), which
    is the sample-major layout expected by the detectors.
    """

    schema: DatasetSchema
    X: np.ndarray
    src: tuple[str, ...]
    dst: tuple[str, ...]
    index: np.ndarray
    labels: np.ndarray | None = None
    categories: tuple[str | None, ...] | None = None
    source: str = field(default="", compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise DataError("flow feature matrix must be 2-D")
        n = X.shape[0]
        if len(self.src) != n or len(self.dst) != n or len(self.index) != n:
            raise DataError("inconsistent flow column lengths")
        if X.shape[1] != self.schema.m:
            raise DataError(f"expected {self.schema.m} features, got {X.shape[1]}")
        if self.labels is not None and len(self.labels) != n:
            raise DataError("label vector length does not match flow count")
        if self.categories is not None and len(self.categories) != n:
            raise DataError("category vector length does not match flow count")
        if X.flags.writeable:
            X = X.copy()
            X.setflags(write=False)
        object.__setattr__(self, "X", X)
        index = np.array(self.index, dtype=np.int64)
        index.setflags(write=False)
        object.__setattr__(self, "index", index)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=bool)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.N

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @property
    def records(self) -> list[FlowRecord]:
        return list(self.iter_records())

    def iter_records(self) -> Iterator[FlowRecord]:
        for t in range(self.N):
            yield FlowRecord(
                index=int(self.index[t]),
                src=self.src[t],
                dst=self.dst[t],
                features=self.X[t],
                label=None if self.labels is None else bool(self.labels[t]),
                attack_category=None if self.categories is None else self.categories[t],
            )

    def slice(self, start: int, stop: int) -> "FlowDataset":
        """Contiguous block ``[start, stop)`` in time order."""
        start = max(0, min(start, self.N))
        stop = max(start, min(stop, self.N))
        return FlowDataset(
            schema=self.schema,
            X=self.X[start:stop],
            src=self.src[start:stop],
            dst=self.dst[start:stop],
            index=self.index[start:stop],
            labels=None if self.labels is None else self.labels[start:stop],
            categories=None if self.categories is None else self.categories[start:stop],
            source=self.source,
        )

    def take(self, idx: Sequence[int]) -> "FlowDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return FlowDataset(
            schema=self.schema,
            X=self.X[idx],
            src=tuple(self.src[i] for i in idx),
            dst=tuple(self.dst[i] for i in idx),
            index=self.index[idx],
            labels=None if self.labels is None else self.labels[idx],
            categories=None if self.categories is None else tuple(self.categories[i] for i in idx),
            source=self.source,
        )

    @property
    def index_range(self) -> tuple[int, int]:
        """Half-open range of original record indices, ``(0, 0)`` if empty."""
        if self.N == 0:
            return (0, 0)
        return (int(self.index[0]), int(self.index[-1]) + 1)

    @property
    def weights(self) -> np.ndarray:
        return self.column(self.schema.summable_weight_column)

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.schema.numeric_feature_columns.index(name)
        except ValueError:
            raise SchemaError(f"{name!r} is not a numeric feature column") from None
        return self.X[:, j]

    @classmethod
    def from_arrays(cls, schema, X, src, dst, labels=None, categories=None) -> "FlowDataset":
        """Build a dataset from in-memory columns (records indexed 0..N-1)."""
        X = np.asarray(X, dtype=float)
        return cls(
            schema=schema,
            X=X,
            src=tuple(str(s) for s in src),
            dst=tuple(str(s) for s in dst),
            index=np.arange(X.shape[0]),
            labels=None if labels is None else np.asarray(labels, dtype=bool),
            categories=None if categories is None else tuple(categories),
        )


def impute_features(X: np.ndarray) -> np.ndarray:
    """Replace NaN by 0 and +/-inf by the column's finite max/min.

    Columns without any finite value map infinities to 0.
    """
    X = np.array(X, dtype=float, copy=True)
    if X.size == 0:
        return X
    X[np.isnan(X)] = 0.0
    finite = np.isfinite(X)
    for j in np.flatnonzero(~finite.all(axis=0)):
        col = X[:, j]
        ok = finite[:, j]
        hi = col[ok].max() if ok.any() else 0.0
        lo = col[ok].min() if ok.any() else 0.0
        col[col == np.inf] = hi
        col[col == -np.inf] = lo
    return X


def _skip_comment_lines(path: Path) -> int:
    n = 0
    with open(path, newline="", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            if line.startswith("#"):
                n += 1
            else:
                break
    return n


_CATEGORY_ALIASES = {"Backdoors": "Backdoor"}


def _normalize_category(raw: str) -> str | None:
    value = raw.strip()
    return _CATEGORY_ALIASES.get(value, value) or None


def _safe_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def _parse_column(col: pd.Series) -> np.ndarray:
    # Python's float() is correctly rounded, so written reprs reload bit-exactly
    values = col.str.strip().to_numpy(dtype=object)
    try:
        return values.astype(float)
    except ValueError:
        return np.array([_safe_float(v) for v in values], dtype=float)


def load_dataset(path, schema: DatasetSchema) -> FlowDataset:
    """Parse a delimited flow file into a :class:`FlowDataset`.

    Header names are matched after stripping surrounding whitespace. Leading
    ``#`` lines (provenance stamps written by this package) are skipped.
    Non-numeric or missing feature cells become NaN and are then imputed by
    :func:`impute_features`.
    """
    path = Path(path)
    try:
        skip = _skip_comment_lines(path)
        df = pd.read_csv(
            path,
            sep=schema.delimiter,
            header=0 if schema.has_header else None,
            names=None if schema.has_header else list(schema.column_names),
            skiprows=skip,
            dtype=str,
            keep_default_na=False,
            skipinitialspace=False,
            encoding_errors="replace",
            low_memory=False,
        )
    except FileNotFoundError:
        raise
    except (OSError, UnicodeError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: file has no header or data") from None

    df.columns = [str(c).strip() for c in df.columns]
    needed = [schema.source_ip_column, schema.dest_ip_column, *schema.numeric_feature_columns]
    for opt in (schema.label_column, schema.attack_category_column):
        if opt is not None:
            needed.append(opt)
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")
    if len(df) == 0:
        raise DataError(f"{path}: no data rows")

    X = impute_features(
        np.column_stack([_parse_column(df[c]) for c in schema.numeric_feature_columns])
    )

    labels = None
    if schema.label_column is not None:
        labels = np.array([schema.label_of(v) for v in df[schema.label_column]], dtype=bool)
    categories = None
    if schema.attack_category_column is not None:
        categories = tuple(
            _normalize_category(v) for v in df[schema.attack_category_column]
        )

    return FlowDataset(
        schema=schema,
        X=X,
        src=tuple(s.strip() for s in df[schema.source_ip_column]),
        dst=tuple(s.strip() for s in df[schema.dest_ip_column]),
        index=np.arange(len(df)),
        labels=labels,
        categories=categories,
        source=str(path),
    )


def write_dataset(ds: FlowDataset, path, header_comment: str | None = None) -> None:
    """Write ``ds`` as delimited text readable by :func:`load_dataset`.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    schema = ds.schema
    cols = [schema.source_ip_column, schema.dest_ip_column, *schema.numeric_feature_columns]
    if schema.label_column is not None:
        cols.append(schema.label_column)
    if schema.attack_category_column is not None:
        cols.append(schema.attack_category_column)
    pos = sorted(schema.positive_label_values)
    neg = sorted(schema.negative_label_values)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        if schema.has_header:
            w.writerow(schema.column_names or cols)
        for t in range(ds.N):
            row = [ds.src[t], ds.dst[t], *(repr(float(v)) for v in ds.X[t])]
            if schema.label_column is not None:
                lab = bool(ds.labels[t]) if ds.labels is not None else False
                if pos:
                    row.append(pos[0] if lab else ("0" if "0" not in pos else "normal"))
                elif neg:
                    row.append("attack" if lab else neg[0])
                else:
                    row.append("0")
            if schema.attack_category_column is not None:
                cat = ds.categories[t] if ds.categories is not None else None
                row.append(cat or "")
            if schema.column_names is not None:
                cells = dict(zip(cols, row))
                row = [cells.get(c, "") for c in schema.column_names]
            w.writerow(row)


def prefix_split(ds: FlowDataset, fractions: Sequence[float]) -> list[FlowDataset]:
    """Time-ordered head fractions of ``ds``, of lengths ``ceil(f * N)``."""
    fractions = list(fractions)
    if not fractions:
        raise ValueError("fractions must be non-empty")
    prev = 0.0
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"fraction {f} outside (0, 1]")
        if f <= prev:
            raise ValueError("fractions must be strictly increasing")
        prev = f
    return [ds.slice(0, prefix_length(ds.N, f)) for f in fractions]


def prefix_length(n: int, fraction: float) -> int:
    # round before ceil so 0.1 * 100 stays 10, not 11
    return min(n, math.ceil(round(fraction * n, 9)))


# Published column layouts. Names are whitespace-stripped versions of the
# header cells found in the public CSV distributions.

_CIC_COLUMNS = (
    "Flow ID", "Source IP", "Source Port", "Destination IP", "Destination Port",
    "Protocol", "Timestamp", "Flow Duration", "Total Fwd Packets",
    "Total Backward Packets", "Total Length of Fwd Packets",
    "Total Length of Bwd Packets", "Fwd Packet Length Max",
    "Fwd Packet Length Min", "Fwd Packet Length Mean", "Fwd Packet Length Std",
    "Bwd Packet Length Max", "Bwd Packet Length Min", "Bwd Packet Length Mean",
    "Bwd Packet Length Std", "Flow Bytes/s", "Flow Packets/s", "Flow IAT Mean",
    "Flow IAT Std", "Flow IAT Max", "Flow IAT Min", "Fwd IAT Total",
    "Fwd IAT Mean", "Fwd IAT Std", "Fwd IAT Max", "Fwd IAT Min",
    "Bwd IAT Total", "Bwd IAT Mean", "Bwd IAT Std", "Bwd IAT Max",
    "Bwd IAT Min", "Fwd PSH Flags", "Bwd PSH Flags", "Fwd URG Flags",
    "Bwd URG Flags", "Fwd Header Length", "Bwd Header Length", "Fwd Packets/s",
    "Bwd Packets/s", "Min Packet Length", "Max Packet Length",
    "Packet Length Mean", "Packet Length Std", "Packet Length Variance",
    "FIN Flag Count", "SYN Flag Count", "RST Flag Count", "PSH Flag Count",
    "ACK Flag Count", "URG Flag Count", "CWE Flag Count", "ECE Flag Count",
    "Down/Up Ratio", "Average Packet Size", "Avg Fwd Segment Size",
    "Avg Bwd Segment Size", "Fwd Header Length.1", "Fwd Avg Bytes/Bulk",
    "Fwd Avg Packets/Bulk", "Fwd Avg Bulk Rate", "Bwd Avg Bytes/Bulk",
    "Bwd Avg Packets/Bulk", "Bwd Avg Bulk Rate", "Subflow Fwd Packets",
    "Subflow Fwd Bytes", "Subflow Bwd Packets", "Subflow Bwd Bytes",
    "Init_Win_bytes_forward", "Init_Win_bytes_backward", "act_data_pkt_fwd",
    "min_seg_size_forward", "Active Mean", "Active Std", "Active Max",
    "Active Min", "Idle Mean", "Idle Std", "Idle Max", "Idle Min", "Label",
)

_UNSW_COLUMNS = (
    "srcip", "sport", "dstip", "dsport", "proto", "state", "dur", "sbytes",
    "dbytes", "sttl", "dttl", "sloss", "dloss", "service", "Sload", "Dload",
    "Spkts", "Dpkts", "swin", "dwin", "stcpb", "dtcpb", "smeansz", "dmeansz",
    "trans_depth", "res_bdy_len", "Sjit", "Djit", "Stime", "Ltime", "Sintpkt",
    "Dintpkt", "tcprtt", "synack", "ackdat", "is_sm_ips_ports", "ct_state_ttl",
    "ct_flw_http_mthd", "is_ftp_login", "ct_ftp_cmd", "ct_srv_src",
    "ct_srv_dst", "ct_dst_ltm", "ct_src_ltm", "ct_src_dport_ltm",
    "ct_dst_sport_ltm", "ct_dst_src_ltm", "attack_cat", "Label",
)

UNSW_ATTACK_CATEGORIES = (
    "Exploits", "DoS", "Fuzzers", "Worms", "Backdoor", "Analysis",
    "Shellcode", "Reconnaissance", "Generic",
)

PRESETS: dict[str, DatasetSchema] = {
    "cic-ids2017": DatasetSchema(
        name="cic-ids2017",
        source_ip_column="Source IP",
        dest_ip_column="Destination IP",
        numeric_feature_columns=tuple(
            c for c in _CIC_COLUMNS
            if c not in ("Flow ID", "Source IP", "Destination IP", "Timestamp", "Label")
        ),
        summable_weight_column="Total Fwd Packets",
        label_column="Label",
        negative_label_values=frozenset({"BENIGN"}),
    ),
    "unsw-nb15": DatasetSchema(
        name="unsw-nb15",
        source_ip_column="srcip",
        dest_ip_column="dstip",
        numeric_feature_columns=tuple(
            c for c in _UNSW_COLUMNS if c not in ("srcip", "dstip", "attack_cat", "Label")
        ),
        summable_weight_column="Spkts",
        label_column="Label",
        attack_category_column="attack_cat",
        positive_label_values=frozenset({"1"}),
        has_header=False,
        column_names=_UNSW_COLUMNS,
    ),
}


def get_preset(name: str) -> DatasetSchema:
    try:
        return PRESETS[name]
    except KeyError:
        raise SchemaError(f"unknown schema preset {name!r}; known: {sorted(PRESETS)}") from None
