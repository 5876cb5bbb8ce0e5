"""Dataset ingestion: schema-aware CSV tables and small raster images.

Tabular data is encoded for modelling as [standardized numerics |
one-hot categorical blocks], with per-column statistics kept on the schema
so synthetic outputs can be decoded back to the original value space.
Images use a simple documented binary container (see `load_images`) with
pixels scaled to [0, 1].
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from ntksynth.tensor import Rng

__all__ = [
    "SchemaError", "NumericColumn", "CategoricalColumn", "DatasetSchema",
    "LabeledDataset", "load_csv", "write_csv", "load_images", "write_images",
    "split", "schema_to_dict", "schema_from_dict",
]

_IMG_MAGIC = b"NTKI"
_IMG_VERSION = 1
_IMG_HEADER = struct.Struct("<4sIIIII")  # magic, version, count, rows, cols, n_classes


class SchemaError(ValueError):
    """Data does not match the declared or derived schema."""


@dataclass(frozen=True)
class NumericColumn:
    name: str
    mean: float
    std: float
    round_on_decode: bool = False

    @property
    def width(self) -> int:
        return 1


@dataclass(frozen=True)
class CategoricalColumn:
    name: str
    categories: tuple[str, ...]

    @property
    def width(self) -> int:
        return len(self.categories)


@dataclass(frozen=True)
class DatasetSchema:
    """Column layout of the encoded feature matrix plus the label classes."""

    columns: tuple
    label_name: str
    classes: tuple[str, ...]
    image_shape: tuple[int, int] | None = None

    @property
    def feature_dim(self) -> int:
        return sum(c.width for c in self.columns)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def block_spans(self) -> list[tuple[int, int]]:
        """[start, end) column span of each source column in encoded space."""
        spans, pos = [], 0
        for c in self.columns:
            spans.append((pos, pos + c.width))
            pos += c.width
        return spans


@dataclass
class LabeledDataset:
    """Encoded feature matrix with one-hot labels and the schema that made it."""

    features: np.ndarray
    labels: np.ndarray
    schema: DatasetSchema
    split: str = "full"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise SchemaError("features and labels must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise SchemaError("features and labels disagree on row count")
        if self.features.shape[1] != self.schema.feature_dim:
            raise SchemaError(f"feature dim {self.features.shape[1]} != "
                              f"schema dim {self.schema.feature_dim}")
        if self.labels.shape[1] != self.schema.n_classes:
            raise SchemaError("label width != class count")
        if not np.all((self.labels == 0.0) | (self.labels == 1.0)):
            raise SchemaError("labels must be one-hot")
        if self.n and not np.all(self.labels.sum(axis=1) == 1.0):
            raise SchemaError("each label row must sum to 1")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def label_indices(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def class_counts(self) -> np.ndarray:
        return self.labels.sum(axis=0)

    def subset(self, idx: np.ndarray, split: str) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.schema, split)

    def decode_rows(self) -> list[dict]:
        """Back to original column values (categories exact, numerics unscaled)."""
        rows = []
        spans = self.schema.block_spans()
        for i in range(self.n):
            row = {}
            for col, (a, b) in zip(self.schema.columns, spans):
                if isinstance(col, NumericColumn):
                    val = self.features[i, a] * col.std + col.mean
                    row[col.name] = float(np.rint(val)) if col.round_on_decode else float(val)
                else:
                    row[col.name] = col.categories[int(self.features[i, a:b].argmax())]
            row[self.schema.label_name] = self.schema.classes[int(self.label_indices[i])]
            rows.append(row)
        return rows


def _parse_schema_spec(spec: dict) -> tuple[dict[str, str], str, bool, set[str]]:
    cols = spec.get("columns")
    if not isinstance(cols, dict) or not cols:
        raise SchemaError("schema spec needs a non-empty 'columns' mapping")
    label = None
    kinds = {}
    for name, kind in cols.items():
        if kind == "label":
            if label is not None:
                raise SchemaError("schema spec declares two label columns")
            label = name
        elif kind in ("numeric", "categorical"):
            kinds[name] = kind
        else:
            raise SchemaError(f"column {name!r} has unknown kind {kind!r}")
    if label is None:
        raise SchemaError("schema spec must mark one column as the label")
    impute = bool(spec.get("impute", False))
    round_cols = set(spec.get("round_on_decode", []))
    return kinds, label, impute, round_cols


def load_csv(path, schema_spec: dict, schema: DatasetSchema | None = None) -> LabeledDataset:
    """Read a header-row CSV into an encoded LabeledDataset.

    ``schema_spec`` maps each column name to numeric | categorical | label.
    Numerics are standardized (stats recorded on the schema), categoricals
    one-hot expanded over the values seen. Pass an existing ``schema`` to
    encode against it instead (unknown categories then raise).

    Missing values (empty cells) raise unless the schema spec sets
    "impute": true, in which case numerics take the column mean and
    categoricals the mode.
    """
    kinds, label_name, impute, round_cols = _parse_schema_spec(schema_spec)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        raw_rows = list(reader)
        header = reader.fieldnames or []
    missing = [c for c in list(kinds) + [label_name] if c not in header]
    if missing:
        raise SchemaError(f"CSV is missing declared column(s) {missing}")
    if not raw_rows:
        raise SchemaError("CSV has no data rows")

    ordered = [c for c in header if c in kinds]
    n = len(raw_rows)

    # resolve missing cells
    for name in ordered + [label_name]:
        blanks = [i for i, r in enumerate(raw_rows) if r[name] == ""]
        if not blanks:
            continue
        if not impute or name == label_name:
            raise SchemaError(f"column {name!r} has missing values (row {blanks[0]}); "
                              "set impute in the schema spec to fill them")
        present = [r[name] for r in raw_rows if r[name] != ""]
        if kinds[name] == "numeric":
            fill = str(np.mean([float(v) for v in present]))
        else:
            vals, counts = np.unique(present, return_counts=True)
            fill = str(vals[counts.argmax()])
        for i in blanks:
            raw_rows[i][name] = fill

    if schema is None:
        columns = []
        for name in ordered:
            if kinds[name] == "numeric":
                vals = np.array([float(r[name]) for r in raw_rows])
                std = float(vals.std())
                columns.append(NumericColumn(name, float(vals.mean()),
                                             std if std > 0 else 1.0,
                                             round_on_decode=name in round_cols))
            else:
                cats = tuple(sorted(set(r[name] for r in raw_rows)))
                columns.append(CategoricalColumn(name, cats))
        classes = tuple(sorted(set(r[label_name] for r in raw_rows)))
        schema = DatasetSchema(tuple(columns), label_name, classes)
    else:
        if tuple(c.name for c in schema.columns) != tuple(ordered):
            raise SchemaError("existing schema and CSV disagree on feature columns")

    feats = np.zeros((n, schema.feature_dim))
    labels = np.zeros((n, schema.n_classes))
    spans = schema.block_spans()
    for i, r in enumerate(raw_rows):
        for col, (a, b) in zip(schema.columns, spans):
            cell = r[col.name]
            if isinstance(col, NumericColumn):
                feats[i, a] = (float(cell) - col.mean) / col.std
            else:
                if cell not in col.categories:
                    raise SchemaError(f"column {col.name!r}: unknown category {cell!r} "
                                      f"(row {i}); known: {list(col.categories)}")
                feats[i, a + col.categories.index(cell)] = 1.0
        cls = r[label_name]
        if cls not in schema.classes:
            raise SchemaError(f"unknown label value {cls!r} (row {i})")
        labels[i, schema.classes.index(cls)] = 1.0
    return LabeledDataset(feats, labels, schema)


def write_csv(dataset: LabeledDataset, path):
    """Decode to original values and write with a header row."""
    names = [c.name for c in dataset.schema.columns] + [dataset.schema.label_name]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for row in dataset.decode_rows():
            writer.writerow(row)


def _image_schema(rows: int, cols: int, n_classes: int) -> DatasetSchema:
    columns = tuple(NumericColumn(f"px{r}_{c}", 0.0, 1.0)
                    for r in range(rows) for c in range(cols))
    return DatasetSchema(columns, "digit", tuple(str(k) for k in range(n_classes)),
                         image_shape=(rows, cols))


def load_images(path) -> LabeledDataset:
    """Read the binary image container into pixels scaled to [0, 1].

    Layout (little endian): magic "NTKI", u32 version, u32 count, u32 rows,
    u32 cols, u32 n_classes, then count u8 labels, then count*rows*cols u8
    pixels in row-major image order.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _IMG_HEADER.size or blob[:4] != _IMG_MAGIC:
        raise SchemaError("not an image container (bad magic)")
    _, version, count, rows, cols, n_classes = _IMG_HEADER.unpack_from(blob)
    if version != _IMG_VERSION:
        raise SchemaError(f"unsupported image container version {version}")
    want = _IMG_HEADER.size + count + count * rows * cols
    if len(blob) != want:
        raise SchemaError(f"image container truncated at byte {len(blob)}, expected {want}")
    labels_raw = np.frombuffer(blob, dtype=np.uint8, count=count, offset=_IMG_HEADER.size)
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=_IMG_HEADER.size + count)
    if labels_raw.size and labels_raw.max() >= n_classes:
        raise SchemaError(f"label {labels_raw.max()} out of range for {n_classes} classes")

    feats = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = np.zeros((count, n_classes))
    labels[np.arange(count), labels_raw] = 1.0
    return LabeledDataset(feats, labels, _image_schema(rows, cols, n_classes))


def write_images(path, pixels: np.ndarray, labels: np.ndarray, n_classes: int):
    """Write the binary image container; pixels in [0,1] floats or uint8."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3:
        raise SchemaError("pixels must have shape (count, rows, cols)")
    if pixels.dtype != np.uint8:
        pixels = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = pixels.shape
    if labels.shape != (count,):
        raise SchemaError("labels must be one integer per image")
    with open(path, "wb") as fh:
        fh.write(_IMG_HEADER.pack(_IMG_MAGIC, _IMG_VERSION, count, rows, cols, n_classes))
        fh.write(labels.tobytes())
        fh.write(pixels.tobytes())


def schema_to_dict(schema: DatasetSchema) -> dict:
    """JSON-serializable form of a schema (column stats, categories, classes)."""
    cols = []
    for c in schema.columns:
        if isinstance(c, NumericColumn):
            cols.append({"kind": "numeric", "name": c.name, "mean": c.mean,
                         "std": c.std, "round_on_decode": c.round_on_decode})
        else:
            cols.append({"kind": "categorical", "name": c.name,
                         "categories": list(c.categories)})
    return {"columns": cols, "label_name": schema.label_name,
            "classes": list(schema.classes),
            "image_shape": list(schema.image_shape) if schema.image_shape else None}


def schema_from_dict(d: dict) -> DatasetSchema:
    cols = []
    for c in d["columns"]:
        if c["kind"] == "numeric":
            cols.append(NumericColumn(c["name"], c["mean"], c["std"],
                                      c.get("round_on_decode", False)))
        else:
            cols.append(CategoricalColumn(c["name"], tuple(c["categories"])))
    shape = d.get("image_shape")
    return DatasetSchema(tuple(cols), d["label_name"], tuple(d["classes"]),
                         image_shape=tuple(shape) if shape else None)


def split(dataset: LabeledDataset, fraction: float, seed: int,
          stratify: bool = False) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffle-and-split into (train, test); train gets ``fraction``."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = Rng(seed)
    n = dataset.n
    if stratify:
        train_idx, test_idx = [], []
        for k in range(dataset.schema.n_classes):
            members = np.flatnonzero(dataset.label_indices == k)
            members = members[rng.permutation(members.size)]
            cut = int(round(fraction * members.size))
            if cut == 0 or cut == members.size:
                raise SchemaError(f"class {k} would be absent from one side "
                                  "of a stratified split")
            train_idx.append(members[:cut])
            test_idx.append(members[cut:])
        train_idx = np.sort(np.concatenate(train_idx))
        test_idx = np.sort(np.concatenate(test_idx))
    else:
        perm = rng.permutation(n)
        cut = int(round(fraction * n))
        train_idx, test_idx = np.sort(perm[:cut]), np.sort(perm[cut:])
    return dataset.subset(train_idx, "train"), dataset.subset(test_idx, "test")
