"""Dataset ingestion, preprocessing, chronological splitting, synthetic data.

Samples are stored column-first: each categorical field is a ragged
``FieldColumn`` (flat value indices + offsets), which keeps multi-hot fields
cheap and lets training gather rows without per-sample Python objects.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core.checkpoint import read_container, write_container
from .core.rng import RngStream
from .errors import ConfigError, DataError


# -- schema and columnar storage ------------------------------------------


@dataclass(frozen=True)
class FieldSchema:
    name: str
    cardinality: int
    multi_valued: bool = False

    def __post_init__(self):
        if self.cardinality < 1:
            raise ConfigError(f"field {self.name!r}: cardinality must be >= 1")


def validate_schemas(schemas: list[FieldSchema]) -> None:
    names = [s.name for s in schemas]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate field names in schema: {sorted(names)}")


def schema_hash(schemas: list[FieldSchema]) -> str:
    """Stable digest of the field layout; artifacts carry it to detect mismatches."""
    payload = json.dumps(
        [{"name": s.name, "cardinality": s.cardinality, "multi_valued": s.multi_valued}
         for s in schemas],
        sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class FieldColumn:
    """Ragged per-sample index lists for one field."""

    values: np.ndarray   # int64, flat
    offsets: np.ndarray  # int64, length n_samples + 1, offsets[0] == 0

    @classmethod
    def from_lists(cls, lists: list[list[int]]) -> "FieldColumn":
        offsets = np.zeros(len(lists) + 1, dtype=np.int64)
        np.cumsum([len(x) for x in lists], out=offsets[1:])
        values = np.fromiter((v for xs in lists for v in xs), dtype=np.int64,
                             count=int(offsets[-1]))
        return cls(values, offsets)

    @property
    def n_samples(self) -> int:
        return len(self.offsets) - 1

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def sample(self, i: int) -> tuple[int, ...]:
        return tuple(self.values[self.offsets[i]:self.offsets[i + 1]])

    def take(self, idx: np.ndarray) -> "FieldColumn":
        if len(self.values) == self.n_samples and self.offsets[-1] == self.n_samples \
                and np.all(np.diff(self.offsets) == 1):  # all singleton: plain gather
            return FieldColumn(self.values[idx],
                               np.arange(len(idx) + 1, dtype=np.int64))
        counts = np.diff(self.offsets)[idx]
        new_offsets = np.zeros(len(idx) + 1, dtype=np.int64)
        np.cumsum(counts, out=new_offsets[1:])
        out = np.empty(int(new_offsets[-1]), dtype=np.int64)
        for k, i in enumerate(idx):
            out[new_offsets[k]:new_offsets[k + 1]] = \
                self.values[self.offsets[i]:self.offsets[i + 1]]
        return FieldColumn(out, new_offsets)


@dataclass(frozen=True)
class Sample:
    indices: tuple[tuple[int, ...], ...]
    label: int
    timestamp: int | None = None


@dataclass
class SampleBlock:
    """All samples of one split, column-first."""

    columns: list[FieldColumn]
    labels: np.ndarray               # uint8
    timestamps: np.ndarray | None    # int64

    @property
    def n_samples(self) -> int:
        return len(self.labels)

    def sample(self, i: int) -> Sample:
        ts = None if self.timestamps is None else int(self.timestamps[i])
        return Sample(tuple(c.sample(i) for c in self.columns), int(self.labels[i]), ts)

    def take(self, idx: np.ndarray) -> "SampleBlock":
        ts = None if self.timestamps is None else self.timestamps[idx]
        return SampleBlock([c.take(idx) for c in self.columns], self.labels[idx], ts)


@dataclass
class DatasetSplit:
    schemas: list[FieldSchema]
    train: SampleBlock
    valid: SampleBlock
    test: SampleBlock
    vocabularies: list[dict[str, int]] | None = None
    ground_truth: dict | None = None

    def __post_init__(self):
        validate_schemas(self.schemas)
        for block in (self.train, self.valid, self.test):
            if len(block.columns) != len(self.schemas):
                raise ConfigError("split block has wrong field count")
            for s, col in zip(self.schemas, block.columns):
                if col.values.size and int(col.values.max()) >= s.cardinality:
                    raise DataError(f"field {s.name!r}: index out of range")
                if col.values.size and int(col.values.min()) < 0:
                    raise DataError(f"field {s.name!r}: negative index")
                counts = col.counts()
                if np.any(counts < 1):
                    raise DataError(f"field {s.name!r}: sample with no value")
                if not s.multi_valued and np.any(counts != 1):
                    raise DataError(f"field {s.name!r}: one-hot field with multiple values")

    def schema_hash(self) -> str:
        return schema_hash(self.schemas)


# -- label and timestamp transforms ---------------------------------------


def mlens_labelize(rating) -> int:
    """Binary label from a 1..5 star rating: positive iff rating > 3."""
    try:
        r = float(rating)
    except (TypeError, ValueError):
        raise DataError(f"bad rating {rating!r}") from None
    if not r.is_integer() or not 1 <= r <= 5:
        raise DataError(f"rating {rating!r} outside 1..5")
    return 1 if r > 3 else 0


def timestamp_expand(ts: int) -> tuple[int, int]:
    """(weekend flag, hour of day) for a POSIX timestamp, in UTC."""
    dt = datetime.fromtimestamp(int(ts), tz=timezone.utc)
    return (1 if dt.weekday() >= 5 else 0, dt.hour)


class QuantileBucketizer:
    """Equal-frequency bucketing with boundaries fitted on training values only.

    Values outside the fitted range clamp to the end buckets; transform is
    monotone in the input.
    """

    def __init__(self, num_buckets: int = 32):
        if num_buckets < 1:
            raise ConfigError("num_buckets must be >= 1")
        self.num_buckets = num_buckets
        self.boundaries: np.ndarray | None = None

    def fit(self, values) -> "QuantileBucketizer":
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            raise DataError("cannot fit bucketizer on empty training values")
        qs = np.arange(1, self.num_buckets) / self.num_buckets
        self.boundaries = np.quantile(v, qs)
        return self

    def transform(self, values) -> np.ndarray:
        if self.boundaries is None:
            raise ConfigError("bucketizer used before fit")
        v = np.asarray(values, dtype=np.float64)
        return np.searchsorted(self.boundaries, v, side="right").astype(np.int64)

    def bucket(self, v: float) -> int:
        return int(self.transform([v])[0])


# -- splitting -------------------------------------------------------------


def split_order(timestamps: np.ndarray | None, n: int) -> np.ndarray:
    """Deterministic sample order: stable sort by timestamp, ties by position."""
    if timestamps is None:
        return np.arange(n)
    return np.argsort(timestamps, kind="stable")


def split_boundaries(n: int, ratios: tuple[int, int, int]) -> tuple[int, int]:
    total = sum(ratios)
    if total <= 0 or any(r < 0 for r in ratios):
        raise ConfigError(f"bad split ratios {ratios}")
    i1 = n * ratios[0] // total
    i2 = n * (ratios[0] + ratios[1]) // total
    return i1, i2


# -- CSV loading -----------------------------------------------------------


def load_csv(path: str | Path, schema_config: dict) -> DatasetSplit:
    """Load a header-first CSV into a chronological 3-way split.

    ``schema_config`` keys:
      label            name of the binary label column (required)
      fields           [{"name": ..., "multi_valued": bool}] categorical columns
      numeric_fields   [{"name": ..., "buckets": int}] quantile-bucketed columns
      timestamp        column name used for chronological ordering (optional)
      derive_time_fields  add weekend/hour fields from the timestamp column
      label_rule       "binary" (default) or "mlens_rating"
      split            [train, valid, test] ratio integers, default [8, 1, 1]
    """
    cfg_fields = schema_config.get("fields", [])
    numeric_fields = schema_config.get("numeric_fields", [])
    if not cfg_fields and not numeric_fields:
        raise ConfigError("schema config declares no fields")
    label_col = schema_config.get("label")
    if not label_col:
        raise ConfigError("schema config missing label column name")
    ts_col = schema_config.get("timestamp")
    derive_time = bool(schema_config.get("derive_time_fields", False))
    if derive_time and not ts_col:
        raise ConfigError("derive_time_fields requires a timestamp column")
    label_rule = schema_config.get("label_rule", "binary")
    if label_rule not in ("binary", "mlens_rating"):
        raise ConfigError(f"unknown label_rule {label_rule!r}")
    ratios = tuple(schema_config.get("split", (8, 1, 1)))
    if len(ratios) != 3:
        raise ConfigError(f"split must have three entries, got {ratios}")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file", line=1) from None
        col_pos: dict[str, int] = {name: i for i, name in enumerate(header)}
        needed = [label_col] + [f["name"] for f in cfg_fields] \
            + [f["name"] for f in numeric_fields] + ([ts_col] if ts_col else [])
        for name in needed:
            if name not in col_pos:
                raise DataError(f"missing column {name!r}", line=1)

        cat_names = [f["name"] for f in cfg_fields]
        cat_multi = [bool(f.get("multi_valued", False)) for f in cfg_fields]
        num_names = [f["name"] for f in numeric_fields]
        num_buckets = [int(f.get("buckets", 32)) for f in numeric_fields]

        labels: list[int] = []
        timestamps: list[int] = []
        raw_cat: list[list[list[str]]] = [[] for _ in cat_names]
        raw_num: list[list[float]] = [[] for _ in num_names]

        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataError(f"expected {width} columns, got {len(row)}", line=line_no)
            raw_label = row[col_pos[label_col]]
            if label_rule == "mlens_rating":
                try:
                    labels.append(mlens_labelize(raw_label))
                except DataError as e:
                    raise DataError(str(e), line=line_no) from None
            else:
                if raw_label not in ("0", "1"):
                    raise DataError(f"non-binary label {raw_label!r}", line=line_no)
                labels.append(int(raw_label))
            if ts_col:
                try:
                    timestamps.append(int(float(row[col_pos[ts_col]])))
                except ValueError:
                    raise DataError(
                        f"bad timestamp {row[col_pos[ts_col]]!r}", line=line_no) from None
            for k, name in enumerate(cat_names):
                cell = row[col_pos[name]]
                parts = cell.split("|") if cat_multi[k] else [cell]
                if any(p == "" for p in parts):
                    raise DataError(f"empty value in field {name!r}", line=line_no)
                raw_cat[k].append(parts)
            for k, name in enumerate(num_names):
                cell = row[col_pos[name]]
                try:
                    raw_num[k].append(float(cell))
                except ValueError:
                    raise DataError(
                        f"bad numeric value {cell!r} in field {name!r}", line=line_no) from None

    n = len(labels)
    ts_arr = np.asarray(timestamps, dtype=np.int64) if ts_col else None
    order = split_order(ts_arr, n)
    i1, i2 = split_boundaries(n, ratios)
    part_idx = (order[:i1], order[i1:i2], order[i2:])

    # vocabularies from training rows only; index 0 stays reserved for unseen values
    vocabs: list[dict[str, int]] = []
    for k in range(len(cat_names)):
        vocab: dict[str, int] = {}
        for i in part_idx[0]:
            for tok in raw_cat[k][i]:
                if tok not in vocab:
                    vocab[tok] = len(vocab) + 1
        vocabs.append(vocab)

    bucketizers = []
    for k in range(len(num_names)):
        train_vals = [raw_num[k][i] for i in part_idx[0]]
        bucketizers.append(QuantileBucketizer(num_buckets[k]).fit(train_vals))

    schemas = [FieldSchema(name, len(vocabs[k]) + 1, cat_multi[k])
               for k, name in enumerate(cat_names)]
    schemas += [FieldSchema(name, num_buckets[k]) for k, name in enumerate(num_names)]
    if derive_time:
        schemas += [FieldSchema(f"{ts_col}_weekend", 2), FieldSchema(f"{ts_col}_hour", 24)]
    validate_schemas(schemas)

    blocks = []
    for idx in part_idx:
        cols: list[FieldColumn] = []
        for k in range(len(cat_names)):
            vocab = vocabs[k]
            cols.append(FieldColumn.from_lists(
                [[vocab.get(tok, 0) for tok in raw_cat[k][i]] for i in idx]))
        for k in range(len(num_names)):
            vals = bucketizers[k].transform([raw_num[k][i] for i in idx])
            cols.append(FieldColumn(vals, np.arange(len(idx) + 1, dtype=np.int64)))
        if derive_time:
            wk = np.empty(len(idx), dtype=np.int64)
            hr = np.empty(len(idx), dtype=np.int64)
            for j, i in enumerate(idx):
                wk[j], hr[j] = timestamp_expand(ts_arr[i])
            rng_off = np.arange(len(idx) + 1, dtype=np.int64)
            cols.append(FieldColumn(wk, rng_off))
            cols.append(FieldColumn(hr, rng_off.copy()))
        blocks.append(SampleBlock(
            cols,
            np.asarray([labels[i] for i in idx], dtype=np.uint8),
            None if ts_arr is None else ts_arr[idx]))

    return DatasetSplit(schemas, *blocks, vocabularies=vocabs)


# -- synthetic data with known ground truth --------------------------------


@dataclass(frozen=True)
class SyntheticFieldSpec:
    name: str
    cardinality: int
    weight: float = 0.0          # informativeness in [0, 1]
    multi_valued: bool = False

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ConfigError(f"field {self.name!r}: weight must be in [0, 1]")
        if self.cardinality < 1:
            raise ConfigError(f"field {self.name!r}: cardinality must be >= 1")


@dataclass(frozen=True)
class SyntheticSpec:
    fields: tuple[SyntheticFieldSpec, ...]
    n_samples: int
    noise: float = 1.0
    seed: int = 0
    first_order_scale: float = 3.0
    interaction_scale: float = 0.0
    interaction_rank: int = 4
    base_rate: float = 0.5
    split: tuple[int, int, int] = (8, 1, 1)

    def __post_init__(self):
        if not self.fields:
            raise ConfigError("synthetic spec needs at least one field")
        if self.n_samples < 3:
            raise ConfigError("synthetic spec needs at least 3 samples")
        if not 0.0 < self.base_rate < 1.0:
            raise ConfigError("base_rate must be strictly inside (0, 1)")


def _value_effects(cardinality: int) -> np.ndarray:
    """Deterministic zero-mean, roughly unit-variance effect per value index."""
    k = np.arange(cardinality, dtype=np.float64)
    return np.sqrt(3.0) * (2.0 * (k + 0.5) / cardinality - 1.0)


def generate_synthetic(spec: SyntheticSpec) -> DatasetSplit:
    """Sample a labeled dataset from a logistic model with known field importance.

    Each field contributes a per-value first-order effect scaled by its
    informativeness weight; optional low-rank pairwise interactions between
    weighted fields give higher-capacity models something to gain. The
    generative weights are returned as ground truth.
    """
    rng = RngStream(spec.seed)
    struct = rng.child("struct")
    vals_rng = rng.child("values")
    label_rng = rng.child("labels")

    M = len(spec.fields)
    n = spec.n_samples
    effects = [spec.first_order_scale * f.weight * _value_effects(f.cardinality)
               for f in spec.fields]
    r = spec.interaction_rank
    latents = [struct.child(f"latent/{i}").normal(size=(f.cardinality, r)) * f.weight
               for i, f in enumerate(spec.fields)]

    columns: list[FieldColumn] = []
    first_order = np.zeros(n)
    pair_vecs = np.zeros((n, r))
    pair_sq = np.zeros(n)
    for i, f in enumerate(spec.fields):
        frng = vals_rng.child(f"field/{i}")
        if f.multi_valued:
            counts = frng.integers(1, 4, size=n)
            total = int(counts.sum())
            values = frng.integers(0, f.cardinality, size=total)
            offsets = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(counts, out=offsets[1:])
            col = FieldColumn(values.astype(np.int64), offsets)
            pooled_eff = np.add.reduceat(effects[i][values], offsets[:-1]) / counts
            pooled_lat = np.add.reduceat(latents[i][values], offsets[:-1], axis=0) \
                / counts[:, None]
        else:
            values = frng.integers(0, f.cardinality, size=n).astype(np.int64)
            col = FieldColumn(values, np.arange(n + 1, dtype=np.int64))
            pooled_eff = effects[i][values]
            pooled_lat = latents[i][values]
        columns.append(col)
        first_order += pooled_eff
        pair_vecs += pooled_lat
        pair_sq += (pooled_lat * pooled_lat).sum(axis=1)

    # sum over unordered field pairs of <z_i, z_j>
    interactions = 0.5 * ((pair_vecs * pair_vecs).sum(axis=1) - pair_sq)
    # a plain logit offset washes toward 0.5 once the latent terms are added;
    # the standard logistic-normal correction keeps the label rate on target
    latent_var = spec.noise ** 2 + sum(
        (spec.first_order_scale * f.weight) ** 2 * (1.0 - 1.0 / f.cardinality ** 2)
        for f in spec.fields)
    bias = np.log(spec.base_rate / (1.0 - spec.base_rate)) \
        * np.sqrt(1.0 + np.pi * latent_var / 8.0)
    logits = bias + first_order \
        + (spec.interaction_scale / np.sqrt(r)) * interactions \
        + spec.noise * label_rng.normal(size=n)
    labels = (label_rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.uint8)
    timestamps = np.arange(n, dtype=np.int64)

    order = split_order(timestamps, n)
    i1, i2 = split_boundaries(n, spec.split)
    blocks = []
    full = SampleBlock(columns, labels, timestamps)
    for idx in (order[:i1], order[i1:i2], order[i2:]):
        blocks.append(full.take(idx))

    schemas = [FieldSchema(f.name, f.cardinality, f.multi_valued) for f in spec.fields]
    ground_truth = {
        "weights": [f.weight for f in spec.fields],
        "first_order_scale": spec.first_order_scale,
        "interaction_scale": spec.interaction_scale,
        "noise": spec.noise,
    }
    return DatasetSplit(schemas, *blocks, ground_truth=ground_truth)


# -- batching --------------------------------------------------------------


def iter_batches(n: int, batch_size: int, rng: RngStream | None = None,
                 drop_last: bool = False):
    """Yield index arrays covering 0..n-1, shuffled when an rng is given."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        batch = order[start:start + batch_size]
        if drop_last and len(batch) < batch_size:
            return
        yield batch


def gather_batch(block: SampleBlock, idx: np.ndarray) -> SampleBlock:
    return block.take(idx)


# -- cache round trip ------------------------------------------------------

_SPLIT_NAMES = ("train", "valid", "test")


def save_split(path: str | Path, split: DatasetSplit) -> None:
    meta = {
        "schemas": [{"name": s.name, "cardinality": s.cardinality,
                     "multi_valued": s.multi_valued} for s in split.schemas],
        "has_timestamps": split.train.timestamps is not None,
        "vocabularies": split.vocabularies,
        "ground_truth": split.ground_truth,
    }
    records: dict[str, np.ndarray] = {
        "meta": np.frombuffer(
            json.dumps(meta, sort_keys=True, separators=(",", ":")).encode(),
            dtype=np.uint8).copy(),
    }
    for name, block in zip(_SPLIT_NAMES, (split.train, split.valid, split.test)):
        records[f"{name}/labels"] = block.labels
        if block.timestamps is not None:
            records[f"{name}/timestamps"] = block.timestamps
        for i, col in enumerate(block.columns):
            records[f"{name}/field/{i}/values"] = col.values
            records[f"{name}/field/{i}/offsets"] = col.offsets
    write_container(path, records, version=2)


def load_split(path: str | Path) -> DatasetSplit:
    version, records = read_container(path)
    if version != 2 or "meta" not in records:
        raise DataError(f"{path}: not a dataset cache")
    meta = json.loads(records["meta"].tobytes().decode())
    schemas = [FieldSchema(s["name"], s["cardinality"], s["multi_valued"])
               for s in meta["schemas"]]
    blocks = []
    for name in _SPLIT_NAMES:
        cols = [FieldColumn(records[f"{name}/field/{i}/values"],
                            records[f"{name}/field/{i}/offsets"])
                for i in range(len(schemas))]
        ts = records.get(f"{name}/timestamps") if meta["has_timestamps"] else None
        blocks.append(SampleBlock(cols, records[f"{name}/labels"], ts))
    return DatasetSplit(schemas, *blocks, vocabularies=meta.get("vocabularies"),
                        ground_truth=meta.get("ground_truth"))
