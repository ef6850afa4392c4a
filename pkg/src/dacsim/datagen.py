"""Synthetic non-iid classification tasks and client partitioning.

The base task is a Gaussian mixture with one spherical component per class,
class means placed on a circle in the first two feature coordinates and pure
noise in the remaining ones. Two kinds of distribution shift turn it into a
clustered multi-client problem:

* covariate shift — rotating the first two feature coordinates, so clients in
  different clusters see the same labels under rotated inputs;
* label shift — restricting each cluster to a subset of the classes while
  keeping the global label indices (all clients share one output head).

``partition_clients`` carves disjoint per-client train/val/test shards out of
each cluster's shifted distribution. ``load_idx`` ingests externally supplied
image data in the big-endian IDX binary format.

All functions are pure and deterministic given their seed arguments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, IngestionError

# Per-class spherical standard deviation of the base task. The circle radius
# is chosen so adjacent class means stay >= 4 sigma apart, which keeps the
# task solvable by a linear model while a 180-degree rotation maps each class
# mean onto another class's region.
CLASS_STD = 0.5

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """A labeled dataset: ``features`` is (n, d) float64, ``labels`` (n,) int64."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be 1-d with one entry per sample")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class ClusterSpec:
    """One cluster of a layout: a shift (rotation or label subset) plus a client count."""

    count: int
    rotation: float | None = None
    labels: frozenset[int] | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ConfigurationError("cluster client count must be >= 1")
        if (self.rotation is None) == (self.labels is None):
            raise ConfigurationError("cluster must set exactly one of rotation or labels")
        if self.rotation is not None and not 0.0 <= self.rotation < 360.0:
            raise ConfigurationError(f"rotation {self.rotation} outside [0, 360)")
        if self.labels is not None and len(self.labels) == 0:
            raise ConfigurationError("label subset must be non-empty")


@dataclass(frozen=True)
class ClusterLayout:
    """Ordered cluster specs; client ids are assigned contiguously in this order."""

    clusters: tuple[ClusterSpec, ...]

    def __post_init__(self):
        if not self.clusters:
            raise ConfigurationError("layout needs at least one cluster")
        kinds = {spec.rotation is None for spec in self.clusters}
        if len(kinds) > 1:
            raise ConfigurationError("layout mixes rotation and label clusters")

    @property
    def total_clients(self) -> int:
        return sum(spec.count for spec in self.clusters)

    @property
    def kind(self) -> str:
        return "label" if self.clusters[0].labels is not None else "rotation"

    def cluster_of_client(self, client_id: int) -> int:
        offset = 0
        for idx, spec in enumerate(self.clusters):
            offset += spec.count
            if client_id < offset:
                return idx
        raise ValueError(f"client id {client_id} outside layout of {offset} clients")


@dataclass(frozen=True)
class ClientShard:
    """One client's private data splits plus its ground-truth cluster id.

    ``cluster_id`` is metadata for the oracle baseline and for metrics; the
    adaptive protocols never read it.
    """

    client_id: int
    train: Dataset
    val: Dataset
    test: Dataset
    cluster_id: int


def generate_base_task(n_classes: int, dim: int, n_samples: int, rng_seed: int) -> Dataset:
    """Generate the Gaussian-mixture classification pool.

    Class means sit on a circle of radius >= 2*CLASS_STD/sin(pi/C) in the
    first two coordinates (adjacent means at least 4 sigma apart); all other
    coordinates are zero-mean noise. Labels are balanced within +-1 sample.
    """
    if n_classes < 2:
        raise ConfigurationError("n_classes must be >= 2")
    if dim < 2:
        raise ConfigurationError("dim must be >= 2")
    if n_samples < n_classes:
        raise ConfigurationError("n_samples must be >= n_classes")

    rng = np.random.default_rng(rng_seed)
    radius = max(2.0, 2.0 * CLASS_STD / np.sin(np.pi / n_classes))
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)

    base = n_samples // n_classes
    counts = np.full(n_classes, base)
    counts[: n_samples - base * n_classes] += 1

    labels = np.repeat(np.arange(n_classes, dtype=np.int64), counts)
    features = means[labels] + CLASS_STD * rng.standard_normal((n_samples, dim))

    order = rng.permutation(n_samples)
    return Dataset(features[order], labels[order])


def apply_rotation(dataset: Dataset, degrees: float) -> Dataset:
    """Rotate the first two feature coordinates counter-clockwise by ``degrees``."""
    if dataset.dim < 2:
        raise ConfigurationError("rotation requires feature dimension >= 2")
    if degrees == 0.0:
        return dataset
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    features = dataset.features.copy()
    x, y = dataset.features[:, 0], dataset.features[:, 1]
    features[:, 0] = cos * x - sin * y
    features[:, 1] = sin * x + cos * y
    return Dataset(features, dataset.labels)


def apply_label_shift(dataset: Dataset, label_subset: frozenset[int] | set[int]) -> Dataset:
    """Keep only samples whose label lies in ``label_subset`` (global indices kept)."""
    if not label_subset:
        raise ConfigurationError("label subset must be non-empty")
    mask = np.isin(dataset.labels, sorted(label_subset))
    if not mask.any():
        raise ConfigurationError(f"label subset {sorted(label_subset)} matches no samples")
    return Dataset(dataset.features[mask], dataset.labels[mask])


def _shift_for(dataset: Dataset, spec: ClusterSpec) -> Dataset:
    if spec.rotation is not None:
        return apply_rotation(dataset, spec.rotation)
    return apply_label_shift(dataset, spec.labels)


def partition_clients(
    dataset: Dataset,
    layout: ClusterLayout,
    train_n: int,
    val_n: int,
    test_n: int,
    rng_seed: int,
) -> list[ClientShard]:
    """Split the pool into per-client shards, one cluster at a time.

    Each cluster's shifted distribution is shuffled once and carved into
    disjoint (train, val, test) chunks per client, so shards within a cluster
    never share a sample. Client ids are contiguous in layout order.
    """
    if min(train_n, val_n, test_n) < 1:
        raise ConfigurationError("train_n, val_n and test_n must all be >= 1")
    per_client = train_n + val_n + test_n
    cluster_seeds = np.random.SeedSequence(rng_seed).spawn(len(layout.clusters))

    shards: list[ClientShard] = []
    client_id = 0
    for cluster_id, spec in enumerate(layout.clusters):
        shifted = _shift_for(dataset, spec)
        needed = spec.count * per_client
        if len(shifted) < needed:
            raise ConfigurationError(
                f"cluster {cluster_id}: needs {needed} samples "
                f"({spec.count} clients x {per_client}), pool provides {len(shifted)}"
            )
        order = np.random.default_rng(cluster_seeds[cluster_id]).permutation(len(shifted))
        for j in range(spec.count):
            start = j * per_client
            train = shifted.subset(order[start : start + train_n])
            val = shifted.subset(order[start + train_n : start + train_n + val_n])
            test = shifted.subset(order[start + train_n + val_n : start + per_client])
            shards.append(ClientShard(client_id, train, val, test, cluster_id))
            client_id += 1
    return shards


def _read_idx(path: str, expected_magic: int) -> np.ndarray:
    try:
        with open(path, "rb") as handle:
            raw = handle.read()
    except OSError as exc:
        raise IngestionError(f"{path}: {exc}") from exc

    if len(raw) < 4:
        raise IngestionError(f"{path}: truncated magic, file ends at byte {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IngestionError(
            f"{path}: bad magic 0x{magic:08x} at byte 0, expected 0x{expected_magic:08x}"
        )

    n_dims = magic & 0xFF
    header_end = 4 + 4 * n_dims
    if len(raw) < header_end:
        raise IngestionError(f"{path}: truncated dimension header, file ends at byte {len(raw)}")
    dims = struct.unpack(f">{n_dims}I", raw[4:header_end])

    n_bytes = int(np.prod(dims))
    if len(raw) < header_end + n_bytes:
        raise IngestionError(
            f"{path}: truncated payload, expected {header_end + n_bytes} bytes, "
            f"file ends at byte {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, count=n_bytes, offset=header_end)
    return data.reshape(dims)


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair into a flat-feature dataset.

    Pixels are scaled to [0, 1] (byte 255 maps to exactly 1.0) and each image
    is flattened to one feature vector.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IngestionError(
            f"{images_path}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64))
