"""Datasets (IDX files, synthetic Gaussian classes) and label-skew partitioners."""

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from .errors import BadMagic, CountMismatch, TooFewSamples, TruncatedFile

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("labels length differs from feature rows")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


Partition = List[np.ndarray]


def _read_bytes(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _check_magic(path, raw: bytes, expected: int):
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: header truncated")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected:
        raise BadMagic(f"{path}: magic {magic:#010x}, expected {expected:#010x}")


def read_idx_images(path) -> np.ndarray:
    raw = _read_bytes(path)
    _check_magic(path, raw, IDX_IMAGES_MAGIC)
    if len(raw) < 16:
        raise TruncatedFile(f"{path}: header truncated")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    need = n * rows * cols
    body = raw[16:]
    if len(body) < need:
        raise TruncatedFile(f"{path}: {len(body)} pixel bytes, header promises {need}")
    return np.frombuffer(body, dtype=np.uint8, count=need).reshape(n, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _read_bytes(path)
    _check_magic(path, raw, IDX_LABELS_MAGIC)
    if len(raw) < 8:
        raise TruncatedFile(f"{path}: header truncated")
    magic, n = struct.unpack(">II", raw[:8])
    if len(raw) - 8 < n:
        raise TruncatedFile(f"{path}: {len(raw) - 8} label bytes, header promises {n}")
    return np.frombuffer(raw[8:], dtype=np.uint8, count=n)


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Load an IDX image/label pair; pixels scaled to [0, 1] and flattened."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), num_classes)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``[N, rows, cols]`` and labels ``[N]`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def synthetic_gaussian_dataset(num_classes, per_class, d_in, class_sep, rng) -> Dataset:
    """Class ``y`` is N(c_y, I); centres pairwise ``class_sep`` apart."""
    if d_in < num_classes:
        raise ValueError("synthetic data needs d_in >= num_classes")
    centres = np.zeros((num_classes, d_in))
    centres[np.arange(num_classes), np.arange(num_classes)] = class_sep / np.sqrt(2.0)
    feats = np.concatenate([rng.standard_normal((per_class, d_in)) + centres[y] for y in range(num_classes)])
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(feats, labels, num_classes)


def _check_partition(parts, n):
    for k, p in enumerate(parts):
        if len(p) == 0:
            raise TooFewSamples(f"client {k} received no data")


def shard_partition(dataset: Dataset, num_clients: int, shards_per_client: int, rng) -> Partition:
    """Sort by label, cut into K*s shards, deal s shards to each client.

    When K*s is a multiple of the class count each label's block is split on its
    own, so no shard straddles two labels.
    """
    n_shards = num_clients * shards_per_client
    n = len(dataset)
    if n < n_shards:
        raise TooFewSamples(f"{n} samples cannot fill {n_shards} shards")
    order = np.argsort(dataset.labels, kind="stable")
    m = dataset.num_classes
    present = np.unique(dataset.labels)
    if n_shards % len(present) == 0 and all(
        (dataset.labels == y).sum() >= n_shards // len(present) for y in present
    ):
        per_label = n_shards // len(present)
        shards = []
        for y in present:
            block = order[dataset.labels[order] == y]
            shards.extend(np.array_split(block, per_label))
    else:
        log.warning("shard boundaries not aligned with labels (%d shards, %d classes)", n_shards, m)
        size = n // n_shards
        shards = [order[i * size:(i + 1) * size] for i in range(n_shards - 1)]
        shards.append(order[(n_shards - 1) * size:])
    perm = rng.permutation(n_shards)
    parts = []
    for k in range(num_clients):
        ids = perm[k * shards_per_client:(k + 1) * shards_per_client]
        parts.append(np.sort(np.concatenate([shards[i] for i in ids])))
    _check_partition(parts, n)
    return parts


def dirichlet_partition(dataset: Dataset, num_clients: int, alpha: float, rng) -> Partition:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if len(dataset) < num_clients:
        raise TooFewSamples(f"{len(dataset)} samples for {num_clients} clients")
    buckets = [[] for _ in range(num_clients)]
    for y in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == y)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        props = rng.dirichlet(np.full(num_clients, alpha))
        cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
        for k, chunk in enumerate(np.split(idx, cuts)):
            buckets[k].extend(chunk.tolist())
    # repair empty clients by single-sample donation from the largest one
    for k in range(num_clients):
        if not buckets[k]:
            donor = max(range(num_clients), key=lambda j: (len(buckets[j]), -j))
            buckets[k].append(buckets[donor].pop())
    parts = [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]
    _check_partition(parts, len(dataset))
    return parts


def balanced_probe(dataset: Dataset, per_class: int):
    """First ``per_class`` indices of every class present, in class order."""
    idx = []
    for y in range(dataset.num_classes):
        hits = np.flatnonzero(dataset.labels == y)[:per_class]
        idx.extend(hits.tolist())
    return np.asarray(idx, dtype=np.int64)
