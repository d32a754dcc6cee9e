"""Dataset synthesis, file loaders, and deterministic splitting.

All loaders emit features scaled to [0, 1]. Splits are drawn from a
seeded generator; the probe split is disjoint from training data and is
used only for reward measurement.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import BlobsDataset, CsvDataset, IdxDataset


@dataclass
class InstanceSet:
    features: np.ndarray            # [n, d] float64 in [0, 1]
    labels: np.ndarray              # [n] int64
    num_classes: int
    soft_labels: np.ndarray | None = None  # [n, k] when instances are mixed

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "InstanceSet":
        soft = self.soft_labels[idx] if self.soft_labels is not None else None
        return InstanceSet(self.features[idx], self.labels[idx], self.num_classes, soft)

    def target_distributions(self) -> np.ndarray:
        """Soft labels when present, one-hot labels otherwise."""
        if self.soft_labels is not None:
            return self.soft_labels
        out = np.zeros((len(self), self.num_classes))
        out[np.arange(len(self)), self.labels] = 1.0
        return out


class DatasetSplits(NamedTuple):
    train: InstanceSet
    val: InstanceSet
    probe: InstanceSet


def scale_unit(features: np.ndarray) -> np.ndarray:
    """Min-max scale each column to [0, 1]; constant columns become 0."""
    x = np.asarray(features, dtype=np.float64)
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return (x - lo) / span


def make_blobs(spec: BlobsDataset, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    centers = rng.uniform(-1.0, 1.0, size=(spec.classes, spec.dim))
    labels = rng.integers(0, spec.classes, size=spec.size)
    features = centers[labels] + rng.normal(0.0, spec.spread, size=(spec.size, spec.dim))
    return scale_unit(features), labels.astype(np.int64)


def load_csv(path: str) -> tuple[np.ndarray, np.ndarray, int]:
    """Parse a ``f0,...,fm,label`` CSV into scaled features and labels."""
    file = Path(path)
    if not file.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with file.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if not header or header[-1].strip() != "label":
            raise ValueError(f"{path}: line 1: final header column must be 'label'")
        width = len(header) - 1
        if width < 1:
            raise ValueError(f"{path}: line 1: need at least one feature column")
        rows = []
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise ValueError(f"{path}: line {lineno}: expected {width + 1} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:-1]])
                labels.append(int(row[-1]))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise ValueError(f"{path}: negative class labels are not allowed")
    return scale_unit(np.asarray(rows)), labels_arr, int(labels_arr.max()) + 1


def _read_idx(path: str, expected_dims: int) -> np.ndarray:
    """Read an IDX file of unsigned bytes (big-endian magic and dims)."""
    file = Path(path)
    if not file.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    blob = file.read_bytes()
    if len(blob) < 4:
        raise ValueError(f"{path}: truncated header at byte {len(blob)}")
    zeros, dtype_code, ndims = blob[0] << 8 | blob[1], blob[2], blob[3]
    if zeros != 0:
        raise ValueError(f"{path}: bad magic number at byte 0")
    if dtype_code != 0x08:
        raise ValueError(f"{path}: unsupported element type 0x{dtype_code:02x} at byte 2")
    if ndims != expected_dims:
        raise ValueError(f"{path}: expected {expected_dims} dimensions at byte 3, found {ndims}")
    header_end = 4 + 4 * ndims
    if len(blob) < header_end:
        raise ValueError(f"{path}: truncated dimension header at byte {len(blob)}")
    dims = struct.unpack(f">{ndims}I", blob[4:header_end])
    count = int(np.prod(dims))
    if len(blob) != header_end + count:
        raise ValueError(f"{path}: payload length {len(blob) - header_end} does not match dims {dims}")
    return np.frombuffer(blob, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(spec: IdxDataset, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, int]:
    images = _read_idx(spec.images_path, expected_dims=3)
    labels = _read_idx(spec.labels_path, expected_dims=1)
    if len(images) != len(labels):
        raise ValueError(f"image count {len(images)} does not match label count {len(labels)}")
    take = min(spec.subsample, len(images))
    picked = rng.permutation(len(images))[:take]
    features = images[picked].reshape(take, -1).astype(np.float64) / 255.0
    labels_arr = labels[picked].astype(np.int64)
    return features, labels_arr, int(labels_arr.max()) + 1


def split_instances(features, labels, num_classes: int, probe_size: int,
                    val_fraction: float, rng: np.random.Generator) -> DatasetSplits:
    n = len(labels)
    n_val = int(val_fraction * n)
    if probe_size + n_val >= n:
        raise ValueError(f"dataset of {n} instances is too small for probe {probe_size} + val {n_val}")
    order = rng.permutation(n)
    probe_idx = order[:probe_size]
    val_idx = order[probe_size:probe_size + n_val]
    train_idx = order[probe_size + n_val:]
    make = lambda idx: InstanceSet(np.asarray(features)[idx], np.asarray(labels)[idx], num_classes)
    return DatasetSplits(train=make(train_idx), val=make(val_idx), probe=make(probe_idx))


def load_dataset(spec, probe_size: int, val_fraction: float, rng: np.random.Generator) -> DatasetSplits:
    if spec.kind == "blobs":
        features, labels = make_blobs(spec, rng)
        num_classes = spec.classes
    elif spec.kind == "csv":
        features, labels, num_classes = load_csv(spec.path)
    elif spec.kind == "idx":
        features, labels, num_classes = load_idx(spec, rng)
    else:  # pragma: no cover - pydantic restricts the union
        raise ValueError(f"unknown dataset kind {spec.kind!r}")
    return split_instances(features, labels, num_classes, probe_size, val_fraction, rng)
