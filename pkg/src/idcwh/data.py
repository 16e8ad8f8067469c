"""Datasets: synthetic Gaussian blobs, the native ``IDCW`` binary file, CSV import
and per-class query/train/database splits.

Labels are held sample-major, ``labels[i]`` being the multi-hot vector of
sample ``i`` (shape ``(N, C)``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAIN, QUERY, DATABASE = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "query": QUERY, "database": DATABASE}

MAGIC = b"IDCW"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class DataError(ValueError):
    pass


class MalformedHeaderError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class InsufficientSamplesError(DataError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.splits is None:
            self.splits = np.full(len(self.features), TRAIN, np.uint8)
        self.splits = np.asarray(self.splits, dtype=np.uint8)
        check_dataset(self)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    def indices(self, split: str, train_in_database: bool = False) -> np.ndarray:
        """Sample ids of a split; ``"all"`` returns every sample.

        With ``train_in_database`` the database split also contains the
        training samples.
        """
        if split == "all":
            return np.arange(self.n_samples)
        if split not in SPLIT_NAMES:
            raise DataError(f"unknown split {split!r}")
        mask = self.splits == SPLIT_NAMES[split]
        if split == "database" and train_in_database:
            mask |= self.splits == TRAIN
        return np.flatnonzero(mask)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.splits[idx])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.splits, other.splits)
        )


def check_dataset(ds: Dataset) -> None:
    if ds.features.ndim != 2 or ds.labels.ndim != 2:
        raise DimensionMismatchError("features and labels must be 2-D")
    n = ds.features.shape[0]
    if ds.labels.shape[0] != n or ds.splits.shape != (n,):
        raise DimensionMismatchError(
            f"{n} feature rows but {ds.labels.shape[0]} label rows / {ds.splits.shape[0]} split tags"
        )
    if ds.labels.size and ds.labels.max() > 1:
        raise DataError("label entries must be 0 or 1")
    if n and ds.labels.shape[1] and not ds.labels.any(axis=1).all():
        raise DataError("every sample needs at least one label")
    if n and ds.splits.max() > DATABASE:
        raise DataError("unknown split tag")


def _sphere_points(k: int, dim: int, radius: float, rng) -> np.ndarray:
    v = rng.standard_normal((k, dim))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def synth_gaussian(classes, dim, per_class, spread, separation, rng):
    """Isotropic Gaussian blobs around class means drawn uniformly on a sphere.

    Returns ``(dataset, means)``; samples are grouped by class.
    """
    if separation <= 0:
        raise ValueError("separation must be positive")
    means = _sphere_points(classes, dim, separation, rng)
    y = np.repeat(np.arange(classes), per_class)
    x = means[y] + spread * rng.standard_normal((len(y), dim))
    labels = np.zeros((len(y), classes), np.uint8)
    labels[np.arange(len(y)), y] = 1
    return Dataset(x, labels), means


def synth_multilabel(classes, dim, samples, max_labels, spread, separation, rng):
    """Each sample carries k ~ U{1..max_labels} distinct classes; its feature is the
    mean of the chosen class means plus Gaussian noise.  Returns ``(dataset, means)``."""
    if not 1 <= max_labels <= classes:
        raise ValueError("need 1 <= max_labels <= classes")
    means = _sphere_points(classes, dim, separation, rng)
    labels = np.zeros((samples, classes), np.uint8)
    x = np.empty((samples, dim))
    for i in range(samples):
        k = rng.integers(1, max_labels + 1)
        chosen = rng.choice(classes, size=k, replace=False)
        labels[i, chosen] = 1
        x[i] = means[chosen].mean(axis=0) + spread * rng.standard_normal(dim)
    return Dataset(x, labels), means


def make_splits(ds: Dataset, query_per_class: int, train_per_class: int, rng) -> Dataset:
    """Per class, draw ``query_per_class`` queries then ``train_per_class`` training
    samples; everything else becomes database.

    A sample is assigned through its lowest class id, so multi-label samples are
    counted once.
    """
    primary = np.argmax(ds.labels, axis=1)
    splits = np.full(ds.n_samples, DATABASE, np.uint8)
    for c in range(ds.n_classes):
        members = np.flatnonzero(primary == c)
        need = query_per_class + train_per_class
        if len(members) < need:
            raise InsufficientSamplesError(
                f"class {c} has {len(members)} samples, needs {need}"
            )
        picked = rng.permutation(members)
        splits[picked[:query_per_class]] = QUERY
        splits[picked[query_per_class:need]] = TRAIN
    return Dataset(ds.features, ds.labels, splits)


def save_features(ds: Dataset, path) -> None:
    n, d = ds.features.shape
    c = ds.n_classes
    label_bits = np.packbits(ds.labels.T.reshape(-1), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, d, c))
        fh.write(ds.features.astype("<f8").tobytes())
        fh.write(label_bits.tobytes())
        fh.write(ds.splits.astype(np.uint8).tobytes())


def load_features(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: file shorter than header")
    magic, version, n, d, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeaderError(f"{path}: unsupported version {version}")
    if n and (d == 0 or c == 0):
        raise DimensionMismatchError(f"{path}: N={n} with d={d}, C={c}")
    n_feat = 8 * n * d
    n_lab = (n * c + 7) // 8
    expected = _HEADER.size + n_feat + n_lab + n
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise DimensionMismatchError(
            f"{path}: {len(raw) - expected} trailing bytes beyond declared N={n}, d={d}, C={c}"
        )
    off = _HEADER.size
    x = np.frombuffer(raw, "<f8", n * d, off).reshape(n, d).astype(np.float64)
    off += n_feat
    bits = np.unpackbits(np.frombuffer(raw, np.uint8, n_lab, off), bitorder="little")
    labels = bits[: n * c].reshape(c, n).T.copy()
    off += n_lab
    splits = np.frombuffer(raw, np.uint8, n, off).copy()
    return Dataset(x, labels, splits)


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Rows ``f1,...,fd,ids`` with ``ids`` a ``;``-separated class id list.
    All rows are tagged as training samples."""
    rows, ids = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            rows.append([float(v) for v in parts[:-1]])
            ids.append([int(v) for v in parts[-1].split(";") if v.strip()])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if rows and len(rows[-1]) != len(rows[0]):
            raise DimensionMismatchError(
                f"{path}:{lineno}: {len(rows[-1])} features, expected {len(rows[0])}"
            )
    c = n_classes if n_classes is not None else max(max(i) for i in ids) + 1
    labels = np.zeros((len(rows), c), np.uint8)
    for r, cls in enumerate(ids):
        if max(cls) >= c:
            raise DimensionMismatchError(f"{path}: class id {max(cls)} >= {c}")
        labels[r, cls] = 1
    return Dataset(np.array(rows, dtype=np.float64), labels)


def load_any(path) -> Dataset:
    if str(path).lower().endswith(".csv"):
        return load_csv(path)
    return load_features(path)
