"""Semantic tables, feature stores, the on-disk dataset format and a
synthetic generator whose prediction errors grow with label value.

Dataset directory layout::

    attributes.csv   class_id,<semantic names>   (one row per class)
    features.bin     b"ZSLF" | u32 version | u32 N | u32 d_v | N*d_v float64, all little-endian
    manifest.json    seen/unseen ids, labels, splits, value_range, missing_marker
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import DTYPE, row_norms

MAGIC = b"ZSLF"
FORMAT_VERSION = 1
SPLITS = ("train", "test_seen", "test_unseen")


class DataError(ValueError):
    """Base class for dataset problems."""


class MissingFileError(DataError):
    pass


class DatasetShapeError(DataError):
    pass


class LabelRangeError(DataError):
    pass


class SplitViolationError(DataError):
    pass


class DegenerateClassError(DataError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class SemanticTable:
    raw: np.ndarray
    value_range: tuple[float, float] = (0.0, 1.0)
    missing_marker: float | None = None
    names: list[str] | None = None

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=DTYPE)
        if self.raw.ndim != 2:
            raise DatasetShapeError(f"semantic table must be 2-D, got {self.raw.shape}")
        self.value_range = (float(self.value_range[0]), float(self.value_range[1]))
        if self.names is None:
            self.names = [f"a{j}" for j in range(self.raw.shape[1])]
        if len(self.names) != self.raw.shape[1]:
            raise DatasetShapeError("semantic names do not match column count")
        lo, hi = self.value_range
        vals = self.raw[~self.mask]
        if vals.size and (vals.min() < lo or vals.max() > hi):
            raise DataError(f"semantic values outside declared range [{lo}, {hi}]")

    @property
    def class_count(self) -> int:
        return self.raw.shape[0]

    @property
    def semantic_dim(self) -> int:
        return self.raw.shape[1]

    @property
    def mask(self) -> np.ndarray:
        """True where the entry is the missing-value marker."""
        if self.missing_marker is None:
            return np.zeros(self.raw.shape, dtype=bool)
        return self.raw == self.missing_marker

    @property
    def masked(self) -> np.ndarray:
        return np.where(self.mask, 0.0, self.raw)


@dataclass
class FeatureStore:
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray  # per-instance index into SPLITS

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=np.int64)
        if self.features.ndim != 2:
            raise DatasetShapeError(f"features must be 2-D, got {self.features.shape}")
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.splits.shape != (n,):
            raise DatasetShapeError("labels/splits length does not match feature count")

    @property
    def instance_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == SPLITS.index(split))


@dataclass
class SplitManifest:
    seen_class_ids: list[int]
    unseen_class_ids: list[int]
    split_indices: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.seen_class_ids = [int(c) for c in self.seen_class_ids]
        self.unseen_class_ids = [int(c) for c in self.unseen_class_ids]
        for s in SPLITS:
            self.split_indices[s] = [int(i) for i in self.split_indices.get(s, [])]
        if set(self.seen_class_ids) & set(self.unseen_class_ids):
            raise SplitViolationError("seen and unseen class sets overlap")


@dataclass
class Dataset:
    table: SemanticTable
    store: FeatureStore
    manifest: SplitManifest

    def __iter__(self):
        return iter((self.table, self.store, self.manifest))

    @property
    def seen_mask(self) -> np.ndarray:
        m = np.zeros(self.table.class_count, dtype=bool)
        m[self.manifest.seen_class_ids] = True
        return m

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(features, labels) for one split; ``test`` means both test splits."""
        if name == "test":
            idx = np.concatenate([self.store.indices("test_seen"), self.store.indices("test_unseen")])
        elif name == "all":
            idx = np.arange(self.store.instance_count)
        else:
            idx = self.store.indices(name)
        return self.store.features[idx], self.store.labels[idx]


def normalize_semantics(table: SemanticTable | np.ndarray) -> np.ndarray:
    raw = table.masked if isinstance(table, SemanticTable) else np.asarray(table, dtype=DTYPE)
    norms = row_norms(raw)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DegenerateClassError(f"class {int(bad[0])} has a zero semantic vector after masking")
    return raw / norms[:, None]


def validate(table: SemanticTable, store: FeatureStore, manifest: SplitManifest) -> None:
    C = table.class_count
    n = store.instance_count
    ids = manifest.seen_class_ids + manifest.unseen_class_ids
    if any(c < 0 or c >= C for c in ids):
        raise LabelRangeError(f"class id outside [0, {C})")
    if n and (store.labels.min() < 0 or store.labels.max() >= C):
        raise LabelRangeError(f"instance label outside [0, {C})")
    seen = set(manifest.seen_class_ids)
    unseen = set(manifest.unseen_class_ids)
    covered = np.zeros(n, dtype=int)
    for k, s in enumerate(SPLITS):
        idx = np.asarray(manifest.split_indices[s], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise LabelRangeError(f"split {s!r} references an invalid instance index")
        covered[idx] += 1
        if np.any(store.splits[idx] != k):
            raise SplitViolationError(f"split {s!r} disagrees with per-instance split tags")
        allowed = unseen if s == "test_unseen" else seen
        for i in idx:
            if int(store.labels[i]) not in allowed:
                raise SplitViolationError(
                    f"instance {int(i)} in {s!r} has label {int(store.labels[i])} outside its class set"
                )
    if np.any(covered > 1):
        raise SplitViolationError("split index lists overlap")


def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(table: SemanticTable, store: FeatureStore, manifest: SplitManifest, path) -> None:
    validate(table, store, manifest)
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "attributes.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["class_id", *table.names])
        for c, row in enumerate(table.raw):
            w.writerow([c, *(_fmt(x) for x in row)])
    n, dv = store.features.shape
    with open(path / "features.bin", "wb") as f:
        f.write(MAGIC + struct.pack("<III", FORMAT_VERSION, n, dv))
        f.write(np.ascontiguousarray(store.features, dtype="<f8").tobytes())
    doc = {
        "seen_class_ids": manifest.seen_class_ids,
        "unseen_class_ids": manifest.unseen_class_ids,
        "labels": [int(y) for y in store.labels],
        "splits": {s: manifest.split_indices[s] for s in SPLITS},
        "value_range": list(table.value_range),
        "missing_marker": table.missing_marker,
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def _read_attributes(p: Path) -> tuple[list[str], np.ndarray]:
    with open(p, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:1] != ["class_id"]:
        raise DatasetShapeError(f"{p.name}: header must start with 'class_id'")
    names = rows[0][1:]
    body = rows[1:]
    for k, r in enumerate(body):
        if len(r) != len(names) + 1:
            raise DatasetShapeError(f"{p.name}: row {k + 1} has {len(r) - 1} values, expected {len(names)}")
        if int(r[0]) != k:
            raise DatasetShapeError(f"{p.name}: row {k + 1} has class_id {r[0]}, expected {k}")
    raw = np.array([[float(x) for x in r[1:]] for r in body], dtype=DTYPE).reshape(len(body), len(names))
    return names, raw


def _read_features(p: Path) -> np.ndarray:
    blob = p.read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise DatasetShapeError(f"{p.name}: bad magic or truncated header")
    version, n, dv = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise DatasetShapeError(f"{p.name}: unsupported version {version}")
    if len(blob) - 16 != 8 * n * dv:
        raise DatasetShapeError(f"{p.name}: header declares {n}x{dv} but payload holds {(len(blob) - 16) // 8} values")
    return np.frombuffer(blob, dtype="<f8", offset=16).astype(DTYPE).reshape(n, dv)


def load_dataset(path) -> Dataset:
    path = Path(path)
    for name in ("attributes.csv", "features.bin", "manifest.json"):
        if not (path / name).is_file():
            raise MissingFileError(f"missing {name} in {path}")
    names, raw = _read_attributes(path / "attributes.csv")
    features = _read_features(path / "features.bin")
    with open(path / "manifest.json", encoding="utf-8") as f:
        doc = json.load(f)
    try:
        labels = np.asarray(doc["labels"], dtype=np.int64)
        split_indices = {s: doc["splits"][s] for s in SPLITS}
        seen, unseen = doc["seen_class_ids"], doc["unseen_class_ids"]
        value_range = tuple(doc["value_range"])
        missing = doc.get("missing_marker")
    except KeyError as e:
        raise DatasetShapeError(f"manifest.json: missing key {e}") from None
    if labels.shape[0] != features.shape[0]:
        raise DatasetShapeError(f"manifest has {labels.shape[0]} labels but features.bin has {features.shape[0]} rows")
    n_classes = len(seen) + len(unseen)
    if raw.shape[0] != n_classes:
        raise DatasetShapeError(f"attributes.csv has {raw.shape[0]} rows but manifest declares {n_classes} classes")
    tags = np.full(labels.shape[0], -1, dtype=np.int64)
    for k, s in enumerate(SPLITS):
        idx = np.asarray(split_indices[s], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= labels.shape[0]):
            raise LabelRangeError(f"split {s!r} references an invalid instance index")
        tags[idx] = k
    table = SemanticTable(raw, value_range, None if missing is None else float(missing), names)
    store = FeatureStore(features, labels, tags)
    manifest = SplitManifest(seen, unseen, split_indices)
    validate(table, store, manifest)
    return Dataset(table, store, manifest)


@dataclass
class SynthConfig:
    classes: int = 20
    seen: int = 15
    ds: int = 16
    dv: int = 32
    n_per_class: int | Sequence[int] = 30
    noise: float = 0.1
    gamma: float = 1.0
    value_range: tuple[float, float] = (0.0, 100.0)
    test_fraction: float = 0.2

    def counts(self) -> list[int]:
        if isinstance(self.n_per_class, (int, np.integer)):
            return [int(self.n_per_class)] * self.classes
        return [int(n) for n in self.n_per_class]

    def check(self) -> None:
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        if not 1 <= self.seen < self.classes:
            raise ConfigError(f"seen must be in [1, classes), got seen={self.seen}, classes={self.classes}")
        if self.ds < 2:
            raise ConfigError("semantic dimension must be >= 2")
        if self.dv < self.ds:
            raise ConfigError(f"feature dimension {self.dv} is smaller than semantic dimension {self.ds}")
        counts = self.counts()
        if len(counts) != self.classes or min(counts) < 2:
            raise ConfigError("need one count per class, each >= 2")
        if self.noise < 0 or self.gamma < 0:
            raise ConfigError("noise and gamma must be non-negative")
        lo, hi = self.value_range
        if not 0 <= lo < hi:
            raise ConfigError("value_range must satisfy 0 <= lo < hi")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")


def generate_synthetic(cfg: SynthConfig, rng: np.random.Generator) -> Dataset:
    """Draw a dataset where per-semantic noise grows as ``value ** gamma``.

    Class vectors are log-uniform per entry over the declared range (the lower
    end is clipped to 1% of the upper bound so the log is defined). Features are
    ``A @ (s_y + eta)`` for a random full-rank lift ``A`` of shape (dv, ds),
    with ``eta_j ~ N(0, (noise * width * (s_yj / width) ** gamma) ** 2)``.
    """
    cfg.check()
    lo, hi = cfg.value_range
    width = hi - lo
    log_lo = np.log(max(lo, 0.01 * hi))
    S = np.exp(rng.uniform(log_lo, np.log(hi), size=(cfg.classes, cfg.ds)))
    S = np.clip(S, lo, hi)

    lift = rng.standard_normal((cfg.dv, cfg.ds)) / np.sqrt(cfg.ds)
    while np.linalg.matrix_rank(lift) < cfg.ds:
        lift = rng.standard_normal((cfg.dv, cfg.ds)) / np.sqrt(cfg.ds)

    perm = rng.permutation(cfg.classes)
    seen = sorted(int(c) for c in perm[: cfg.seen])
    unseen = sorted(int(c) for c in perm[cfg.seen :])
    seen_set = set(seen)

    counts = cfg.counts()
    labels = np.repeat(np.arange(cfg.classes), counts)
    clean = S[labels]
    scale = cfg.noise * width * (clean / width) ** cfg.gamma
    noisy = clean + scale * rng.standard_normal(clean.shape)
    features = (noisy / width) @ lift.T

    tags = np.empty(labels.shape[0], dtype=np.int64)
    start = 0
    for c, n in enumerate(counts):
        idx = np.arange(start, start + n)
        if c in seen_set:
            n_test = max(1, int(round(cfg.test_fraction * n)))
            order = rng.permutation(n)
            tags[idx] = 0
            tags[idx[order[:n_test]]] = 1
        else:
            tags[idx] = 2
        start += n

    table = SemanticTable(S, (lo, hi), None)
    store = FeatureStore(features, labels, tags)
    manifest = SplitManifest(
        seen, unseen, {s: [int(i) for i in np.flatnonzero(tags == k)] for k, s in enumerate(SPLITS)}
    )
    validate(table, store, manifest)
    return Dataset(table, store, manifest)
