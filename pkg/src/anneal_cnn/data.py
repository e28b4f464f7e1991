"""MNIST in IDX format, normalisation and train/validation partitioning."""
from __future__ import annotations

import gzip
import hashlib
import logging
import os
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError, FormatError, LengthError

log = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
SIDE = 28
N_CLASSES = 10

DEFAULT_SUBSET_SIZES = (10_000, 20_000, 30_000, 40_000, 50_000)

# name -> (alternative file names, decompressed length)
MNIST_FILES = {
    "train_images": (("train-images-idx3-ubyte", "train-images.idx3-ubyte"), 47_040_016),
    "train_labels": (("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"), 60_008),
    "test_images": (("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"), 7_840_016),
    "test_labels": (("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"), 10_008),
}
DEFAULT_MIRROR = "https://ossci-datasets.s3.amazonaws.com/mnist/"


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx_images(raw):
    if len(raw) < 16:
        raise LengthError(f"image header needs 16 bytes, file has {len(raw)}")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    if (rows, cols) != (SIDE, SIDE):
        raise DimensionError(f"images are {rows}x{cols}, expected {SIDE}x{SIDE}",
                             axis="rows" if rows != SIDE else "cols")
    expected = count * rows * cols
    payload = len(raw) - 16
    if payload != expected:
        raise LengthError(f"image payload is {payload} bytes, header declares {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def parse_idx_labels(raw):
    if len(raw) < 8:
        raise LengthError(f"label header needs 8 bytes, file has {len(raw)}")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise FormatError(f"bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    payload = len(raw) - 8
    if payload != count:
        raise LengthError(f"label payload is {payload} bytes, header declares {count}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if labels.size and labels.max() >= N_CLASSES:
        bad = int(labels[labels >= N_CLASSES][0])
        raise DomainError(f"label {bad} outside 0..{N_CLASSES - 1}")
    return labels


def load_idx_images(path):
    """Raw ``uint8`` images of shape ``(count, 28, 28)``; gzip is detected."""
    return parse_idx_images(_read_bytes(path))


def load_idx_labels(path):
    return parse_idx_labels(_read_bytes(path))


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    head = struct.pack(">IIII", IMAGE_MAGIC, images.shape[0], images.shape[1], images.shape[2])
    Path(path).write_bytes(head + images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.tobytes())


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray   # (N, 1, 28, 28) float64 in [0, 1]
    labels: np.ndarray   # (N,) int64 in [0, 9]
    one_hot: np.ndarray  # (N, 10)

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels",
                                 axis="samples")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.one_hot[idx])

    def head(self, n):
        return self.subset(np.arange(min(n, len(self))))


def one_hot(labels, n_classes=N_CLASSES):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def normalize(raw_images, raw_labels):
    images = np.asarray(raw_images)
    labels = np.asarray(raw_labels).astype(np.int64)
    if images.ndim == 3:
        images = images[:, None]
    if labels.size and (labels.min() < 0 or labels.max() >= N_CLASSES):
        raise DomainError("labels must lie in 0..9")
    return Dataset(images.astype(np.float64) / 255.0, labels, one_hot(labels))


def find_mnist_file(directory, name):
    names, _ = MNIST_FILES[name]
    for stem in names:
        for suffix in ("", ".gz"):
            p = Path(directory) / (stem + suffix)
            if p.exists():
                return p
    raise FileNotFoundError(f"no {name} file ({names[0]}[.gz]) in {directory}")


def load_mnist(directory):
    """``(train, test)`` Datasets from the four standard files in ``directory``."""
    d = Path(directory)
    train = normalize(load_idx_images(find_mnist_file(d, "train_images")),
                      load_idx_labels(find_mnist_file(d, "train_labels")))
    test = normalize(load_idx_images(find_mnist_file(d, "test_images")),
                     load_idx_labels(find_mnist_file(d, "test_labels")))
    return train, test


def fetch_mnist(directory, mirror=DEFAULT_MIRROR, timeout=60):
    """Download the four gzipped MNIST files and check their decompressed sizes."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (names, length) in MNIST_FILES.items():
        target = d / (names[0] + ".gz")
        if not target.exists():
            url = mirror.rstrip("/") + "/" + target.name
            log.info("downloading %s", url)
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                blob = resp.read()
            tmp = target.with_suffix(".part")
            tmp.write_bytes(blob)
            os.replace(tmp, target)
        raw = _read_bytes(target)
        if len(raw) != length:
            raise LengthError(f"{target.name}: {len(raw)} bytes after decompression, "
                              f"expected {length}")
        log.info("%s ok (sha256 %s)", target.name, hashlib.sha256(raw).hexdigest()[:16])
        paths.append(target)
    return paths


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray  # index -> fold id
    seed: int

    def fold(self, i):
        """``(train_indices, held_out_indices)`` for fold ``i``."""
        held = np.flatnonzero(self.assignments == i)
        rest = np.flatnonzero(self.assignments != i)
        return rest, held

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


def kfold_split(n, k=10, seed=0):
    """Seeded, unstratified shuffle cut into ``k`` folds whose sizes differ by at most one."""
    if k < 1:
        raise DomainError("k must be at least 1")
    if k > n:
        raise DomainError(f"cannot make {k} folds from {n} samples")
    order = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    for fold_id, part in enumerate(np.array_split(order, k)):
        assignments[part] = fold_id
    return FoldPlan(k, assignments, seed)


@dataclass(frozen=True)
class SubsetPlan:
    sizes: tuple
    order: np.ndarray
    seed: int

    def subset(self, size):
        if size not in self.sizes:
            raise DomainError(f"{size} is not one of the planned sizes {self.sizes}")
        return self.order[:size]

    def subsets(self):
        return [(s, self.order[:s]) for s in self.sizes]


def cumulative_subsets(n=60_000, seed=0, sizes=DEFAULT_SUBSET_SIZES):
    """One seeded shuffle of ``range(n)``; each subset is a prefix of the next."""
    sizes = tuple(int(s) for s in sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise DomainError(f"subset sizes must be strictly increasing, got {sizes}")
    if sizes and (sizes[0] < 1 or sizes[-1] > n):
        raise DomainError(f"subset sizes must lie in 1..{n}")
    return SubsetPlan(sizes, np.random.default_rng(seed).permutation(n), seed)


def scaled_subset_sizes(cap, sizes=DEFAULT_SUBSET_SIZES):
    """Shrink ``sizes`` proportionally so the largest equals ``cap``.

    Plain clipping would collapse every size to the cap; scaling keeps five
    distinct, increasing prefixes.
    """
    if cap is None or cap >= sizes[-1]:
        return tuple(sizes)
    scaled = [max(1, int(round(s * cap / sizes[-1]))) for s in sizes]
    for i in range(1, len(scaled)):
        scaled[i] = max(scaled[i], scaled[i - 1] + 1)
    return tuple(scaled)


def holdout_split(n, fraction=0.1, seed=0):
    """``(train_indices, validation_indices)`` with a seeded 10% validation shard."""
    if not 0 < fraction < 1:
        raise DomainError("holdout fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(round(n * fraction)))
    return np.sort(order[n_val:]), np.sort(order[:n_val])
