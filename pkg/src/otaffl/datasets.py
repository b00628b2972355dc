"""Synthetic heterogeneous data, Dirichlet non-iid partitioning and IDX ingestion."""

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    CountMismatchError,
    InvalidInputError,
    PartitionInfeasibleError,
    TruncatedFileError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MAX_PARTITION_ATTEMPTS = 100


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise InvalidInputError(f"features must be an (n, p) matrix with n >= 1, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise InvalidInputError("labels must be a vector with one entry per sample")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("features must be finite")
        if np.issubdtype(self.labels.dtype, np.integer) and np.any(self.labels < 0):
            raise InvalidInputError("class labels must be non-negative")

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    def subset(self, idx):
        return LabeledDataset(self.features[idx], self.labels[idx])

    def split(self, test_fraction, rng):
        """Random train/test split; both halves keep at least one sample."""
        n = len(self)
        if test_fraction <= 0 or n < 2:
            return self, self
        perm = rng.permutation(n)
        n_test = min(max(1, int(round(test_fraction * n))), n - 1)
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    dirichlet_beta: float = 0.5
    min_per_client: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise InvalidInputError("num_clients must be >= 1")
        if not self.dirichlet_beta > 0:
            raise InvalidInputError("dirichlet_beta must be > 0")
        if self.min_per_client < 1:
            raise InvalidInputError("min_per_client must be >= 1")


def _client_sizes(K, n_per_client):
    sizes = np.broadcast_to(np.asarray(n_per_client, dtype=np.int64), (K,))
    if np.any(sizes < 1):
        raise InvalidInputError("every client needs at least one sample")
    return sizes


def synth_heterogeneous(K, n_per_client, p, classes, skew, seed):
    """Per-client Gaussian class clusters.

    Class ``c`` of client ``k`` is centred at ``mu_c + skew * delta_kc`` where
    ``mu_c`` is shared and ``delta_kc`` is a client-specific standard normal
    offset. ``n_per_client`` may be a scalar or one size per client. All random
    draws are independent of ``skew``, so two calls differing only in skew see
    the same offsets.
    """
    if min(K, p, classes) < 1 or skew < 0:
        raise InvalidInputError("K, p and classes must be positive and skew non-negative")
    sizes = _client_sizes(K, n_per_client)
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(classes, p))
    offsets = rng.normal(size=(K, classes, p))
    out = []
    for k in range(K):
        labels = rng.integers(0, classes, size=sizes[k])
        noise = rng.normal(size=(sizes[k], p))
        X = centres[labels] + skew * offsets[k, labels] + noise
        out.append(LabeledDataset(X, labels))
    return out


def synth_regression(K, n_per_client, p, skew, seed, noise=0.1):
    """Per-client linear-regression data with client-shifted true weights."""
    if min(K, p) < 1 or skew < 0:
        raise InvalidInputError("K and p must be positive and skew non-negative")
    sizes = _client_sizes(K, n_per_client)
    rng = np.random.default_rng(seed)
    w = rng.normal(size=p + 1)
    shifts = rng.normal(size=(K, p + 1))
    out = []
    for k in range(K):
        wk = w + skew * shifts[k]
        X = rng.normal(size=(sizes[k], p))
        y = X @ wk[:-1] + wk[-1] + noise * rng.normal(size=sizes[k])
        out.append(LabeledDataset(X, y))
    return out


def dirichlet_partition(data, spec):
    """Split ``data`` across clients with per-class Dirichlet proportions.

    For every class a proportion vector ``~ Dir(beta * 1_K)`` decides how the
    (shuffled) samples of that class are divided. Draws that leave a client
    with fewer than ``min_per_client`` samples are rejected and redrawn.
    """
    labels = np.asarray(data.labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidInputError("dirichlet_partition needs integer class labels")
    K = spec.num_clients
    if len(data) < K * spec.min_per_client:
        raise PartitionInfeasibleError(f"{len(data)} samples cannot give {K} clients {spec.min_per_client} each")
    rng = np.random.default_rng(spec.seed)
    classes = np.unique(labels)
    by_class = [np.flatnonzero(labels == c) for c in classes]
    for _ in range(MAX_PARTITION_ATTEMPTS):
        buckets = [[] for _ in range(K)]
        for idx in by_class:
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(K, spec.dirichlet_beta))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for k, part in enumerate(np.split(idx, cuts)):
                buckets[k].append(part)
        parts = [np.sort(np.concatenate(b)) for b in buckets]
        if min(p.size for p in parts) >= spec.min_per_client:
            return [data.subset(p) for p in parts]
    raise PartitionInfeasibleError(
        f"no partition with >= {spec.min_per_client} samples per client after {MAX_PARTITION_ATTEMPTS} draws"
    )


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open(path) as fh:
        raw = fh.read()
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short to hold a magic number")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise BadMagicError(f"{path}: magic number 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: file shorter than its {header}-byte header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    if len(raw) - header < expected:
        raise TruncatedFileError(f"{path}: expected {expected} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair (optionally gzipped) into a dataset.

    Pixels are flattened per image and scaled to [0, 1].
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64))


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``(n, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def export_csv(data, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"feature_{j}" for j in range(data.num_features)] + ["label"])
        for row, label in zip(data.features, data.labels):
            writer.writerow([repr(float(x)) for x in row] + [label.item()])
