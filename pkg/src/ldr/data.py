"""Datasets: IDX (MNIST) files, synthetic Gaussian blobs, minibatch iteration.

Inputs are stored as ``d x N`` float64 matrices, one example per column;
labels are 0-based integer class indices.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from ldr.exceptions import BadMagic, DimensionOverflow, TruncatedFile

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
# refuse headers claiming more than this many payload bytes
MAX_PAYLOAD = 1 << 34


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[1] != y.size:
            raise ValueError(f"inputs {X.shape} and labels {y.shape} disagree")
        if y.size < 1:
            raise ValueError("dataset is empty")
        if self.class_count < 1 or y.min() < 0 or y.max() >= self.class_count:
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs contain non-finite values")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    @property
    def dim(self):
        return self.inputs.shape[0]

    def __len__(self):
        return self.labels.size

    def subset(self, idx):
        return Dataset(self.inputs[:, idx], self.labels[idx], self.class_count)


# ---------------------------------------------------------------------------
# IDX


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndim):
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"need a {header}-byte header, file has {len(raw)} bytes")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagic(f"magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    total = 1
    for d in dims:
        total *= d
        if total > MAX_PAYLOAD:
            raise DimensionOverflow(f"header dimensions {dims} are implausibly large")
    if dims[0] == 0:
        raise TruncatedFile("file declares zero items")
    payload = raw[header:]
    if len(payload) < total:
        raise TruncatedFile(f"payload has {len(payload)} bytes, header promises {total}")
    return dims, np.frombuffer(payload, dtype=np.uint8, count=total)


def load_idx_images(path):
    """Images as a ``(rows*cols) x N`` matrix scaled to [0, 1].

    Accepts raw or gzip-compressed IDX3 files.
    """
    (count, rows, cols), data = _parse_idx(_read_bytes(path), IMAGES_MAGIC, 3)
    return data.reshape(count, rows * cols).T.astype(np.float64) / 255.0


def load_idx_labels(path):
    (count,), data = _parse_idx(_read_bytes(path), LABELS_MAGIC, 1)
    return data.astype(np.int64)


def idx_images_bytes(images, rows, cols):
    """Serialize ``N x rows x cols`` uint8 images (or a ``d x N`` [0,1] matrix)."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8).T
    images = images.reshape(-1, rows, cols)
    header = struct.pack(">IIII", IMAGES_MAGIC, images.shape[0], rows, cols)
    return header + images.tobytes()


def idx_labels_bytes(labels):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("IDX labels must fit in an unsigned byte")
    return struct.pack(">II", LABELS_MAGIC, labels.size) + labels.astype(np.uint8).tobytes()


def write_idx(path, payload):
    with open(path, "wb") as fh:
        fh.write(payload)


def export_idx(ds, images_path, labels_path, rows, cols):
    """Write a dataset with [0, 1] inputs as an IDX image/label file pair."""
    if rows * cols != ds.dim:
        raise ValueError(f"{rows}x{cols} does not match input dimension {ds.dim}")
    write_idx(images_path, idx_images_bytes(ds.inputs, rows, cols))
    write_idx(labels_path, idx_labels_bytes(ds.labels))


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(directory, name):
    for candidate in (name, name + ".gz"):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(os.path.join(directory, name))


def load_idx_dataset(images_path, labels_path, class_count=10):
    X = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if X.shape[1] != y.size:
        raise ValueError(f"{X.shape[1]} images but {y.size} labels")
    return Dataset(X, y, class_count)


def load_mnist(directory, split="train"):
    images, labels = MNIST_FILES[split]
    return load_idx_dataset(_find(directory, images), _find(directory, labels))


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_separable(d, N, c, seed=0, sigma=1.0, separation=6.0):
    """Gaussian blobs whose centres are pairwise at least ``separation * sigma`` apart.

    Deterministic for a fixed seed. Labels are balanced round-robin.
    """
    if d < 1 or N < 1 or c < 1:
        raise ValueError("d, N and c must be positive")
    rng = np.random.default_rng(seed)
    min_dist = separation * sigma
    radius = min_dist * max(1.0, c ** (1.0 / d))
    centres = []
    attempts = 0
    while len(centres) < c:
        cand = rng.uniform(-radius, radius, d)
        if all(np.linalg.norm(cand - p) >= min_dist for p in centres):
            centres.append(cand)
        attempts += 1
        if attempts % 1000 == 0:
            radius *= 1.5
    centres = np.array(centres).T
    labels = np.arange(N) % c
    rng.shuffle(labels)
    X = centres[:, labels] + sigma * rng.standard_normal((d, N))
    return Dataset(X, labels, c)


# ---------------------------------------------------------------------------
# minibatches


def epoch_permutation(N, seed, epoch):
    return np.random.default_rng([seed, epoch]).permutation(N)


def minibatches(ds, batch_size, seed=0, epoch=0):
    """Yield ``(X, labels)`` batches covering every example once, in a
    permutation fixed by ``(seed, epoch)``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = epoch_permutation(len(ds), seed, epoch)
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield ds.inputs[:, idx], ds.labels[idx]
