"""Dataset construction, ingestion, normalization and splits.

Datasets are immutable value objects: every transformation returns a new
``Dataset``. Synthetic blob datasets keep their generating sub-cluster ids
as metadata so clustering quality can be scored against ground truth.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Floor applied to per-column train-set std before normalizing, so constant
# columns map to zeros instead of NaNs.
STD_FLOOR = 1e-8


class DatasetError(ValueError):
    """Base class for dataset ingestion failures."""


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Immutable sample store: features (N x D), integer labels in [0, C)."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str
    # Generating sub-cluster id per sample, when known (synthetic data only).
    subcluster_ids: np.ndarray | None = None
    # Generating sub-cluster centers, row k for sub-cluster id k.
    subcluster_centers: np.ndarray | None = None
    # (height, width) when features are flattened images; enables flips.
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if feats.ndim != 2:
            raise DatasetError(f"features must be 2-D, got {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise DatasetError(
                f"labels shape {labels.shape} does not match {feats.shape[0]} samples"
            )
        if labels.size == 0:
            raise DatasetError("dataset is empty")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise DatasetError(
                f"labels must lie in [0, {self.class_count}), "
                f"found range [{labels.min()}, {labels.max()}]"
            )
        present = np.unique(labels)
        if present.size != self.class_count:
            missing = sorted(set(range(self.class_count)) - set(present.tolist()))
            raise DatasetError(f"classes without samples: {missing}")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Split:
    """Disjoint train/test index partition of [0, N)."""

    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        train = np.asarray(self.train, dtype=np.int64)
        test = np.asarray(self.test, dtype=np.int64)
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)
        if train.size == 0 or test.size == 0:
            raise DatasetError("both split parts must be non-empty")
        if np.intersect1d(train, test).size > 0:
            raise DatasetError("train and test indices overlap")


def gen_gaussian_blobs(
    classes: int,
    subclusters_per_class: int,
    samples_per_subcluster: int,
    dim: int,
    center_spread: float,
    cluster_std: float,
    rng: np.random.Generator,
    name: str = "blobs",
) -> Dataset:
    """Isotropic Gaussian blobs with per-class sub-cluster structure.

    Sub-cluster centers are drawn uniformly from a hypercube of side
    `center_spread` centered at the origin; each sub-cluster then gets
    `samples_per_subcluster` draws from N(center, cluster_std^2 * I).
    """
    if min(classes, subclusters_per_class, samples_per_subcluster, dim) < 1:
        raise ValueError("all counts must be >= 1")
    if cluster_std <= 0:
        raise ValueError("cluster_std must be positive")

    half = center_spread / 2.0
    total_clusters = classes * subclusters_per_class
    centers = rng.uniform(-half, half, size=(total_clusters, dim))

    features = np.empty((total_clusters * samples_per_subcluster, dim))
    labels = np.empty(total_clusters * samples_per_subcluster, dtype=np.int64)
    sub_ids = np.empty_like(labels)
    row = 0
    for c in range(classes):
        for s in range(subclusters_per_class):
            k = c * subclusters_per_class + s
            block = slice(row, row + samples_per_subcluster)
            features[block] = centers[k] + rng.normal(
                0.0, cluster_std, size=(samples_per_subcluster, dim)
            )
            labels[block] = c
            sub_ids[block] = k
            row += samples_per_subcluster
    return Dataset(
        features,
        labels,
        classes,
        name,
        subcluster_ids=sub_ids,
        subcluster_centers=centers,
    )


def _read_exact(fh, nbytes: int, path, what: str) -> bytes:
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise TruncatedFileError(
            f"{path}: expected {nbytes} bytes for {what}, got {len(buf)}"
        )
    return buf


def load_idx(images_path, labels_path, name: str = "idx") -> Dataset:
    """Load an IDX image/label file pair (big-endian MNIST convention).

    Raw bytes are scaled to [0, 1] by dividing by 255; images are flattened
    row-major into H*W feature columns.
    """
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    with open(images_path, "rb") as fh:
        magic, count, height, width = struct.unpack(
            ">iiii", _read_exact(fh, 16, images_path, "image header")
        )
        if magic != IDX_IMAGES_MAGIC:
            raise BadMagicError(
                f"{images_path}: bad image magic 0x{magic:08x}"
            )
        raw = _read_exact(
            fh, count * height * width, images_path, f"{count} images"
        )
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(
            ">ii", _read_exact(fh, 8, labels_path, "label header")
        )
        if magic != IDX_LABELS_MAGIC:
            raise BadMagicError(
                f"{labels_path}: bad label magic 0x{magic:08x}"
            )
        label_raw = _read_exact(fh, label_count, labels_path, f"{label_count} labels")
    if label_count != count:
        raise CountMismatchError(
            f"{count} images but {label_count} labels"
        )

    features = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    features = features.reshape(count, height * width)
    labels = np.frombuffer(label_raw, dtype=np.uint8).astype(np.int64)
    return Dataset(
        features,
        labels,
        int(labels.max()) + 1,
        name,
        image_shape=(height, width),
    )


def load_csv(path, label_column: str, name: str | None = None) -> Dataset:
    """Load a header-row CSV; `label_column` holds the class, rest are floats.

    Label values are mapped to ids 0..C-1 in sorted order of their distinct
    string values.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if label_column not in header:
            raise DatasetError(
                f"{path}: no column named {label_column!r} in header {header}"
            )
        label_idx = header.index(label_column)
        rows, raw_labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            raw_labels.append(row[label_idx])
            try:
                rows.append(
                    [float(v) for i, v in enumerate(row) if i != label_idx]
                )
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    classes = sorted(set(raw_labels))
    mapping = {v: i for i, v in enumerate(classes)}
    labels = np.array([mapping[v] for v in raw_labels], dtype=np.int64)
    return Dataset(np.array(rows), labels, len(classes), name or path.stem)


def split_dataset(ds: Dataset, test_fraction: float, rng: np.random.Generator) -> Split:
    """Random disjoint train/test partition covering every index once."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    n = ds.n_samples
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    perm = rng.permutation(n)
    return Split(train=np.sort(perm[n_test:]), test=np.sort(perm[:n_test]))


def standardize(ds: Dataset, split: Split) -> Dataset:
    """Normalize all features with the train split's per-column mean/std."""
    train_feats = ds.features[split.train]
    mean = train_feats.mean(axis=0)
    std = np.maximum(train_feats.std(axis=0), STD_FLOOR)
    return replace(ds, features=(ds.features - mean) / std)


def hflip_batch(X: np.ndarray, image_shape: tuple[int, int], rng: np.random.Generator, prob: float = 0.5) -> np.ndarray:
    """Horizontally flip each flattened image row with probability `prob`."""
    h, w = image_shape
    if X.shape[1] != h * w:
        raise ValueError(f"features have {X.shape[1]} columns, expected {h * w}")
    out = X.copy()
    flip = rng.random(X.shape[0]) < prob
    if flip.any():
        imgs = out[flip].reshape(-1, h, w)
        out[flip] = imgs[:, :, ::-1].reshape(-1, h * w)
    return out
