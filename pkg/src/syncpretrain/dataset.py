"""MNIST IDX loading, stratified splitting and minibatch iteration."""
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DataError(Exception):
    """Base class for dataset problems (missing, malformed or inconsistent files)."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class InsufficientClassError(DataError):
    def __init__(self, label, have, need):
        self.label = label
        super().__init__(f"class {label} has {have} examples, {need} required")


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (N, 784) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.labels.shape[0]

    def take(self, idx):
        return LabeledDataset(self.images[idx], self.labels[idx])


def _read_idx(path, magic):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: header truncated ({len(raw)} bytes)")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise BadMagicError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header truncated ({len(raw)} bytes)")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFileError(
            f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Load an IDX image/label pair, scaling pixels to [0, 1]."""
    pixels = _read_idx(images_path, IMAGE_MAGIC)
    labels = _read_idx(labels_path, LABEL_MAGIC)
    if pixels.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {pixels.shape[0]} images, "
            f"{labels_path} holds {labels.shape[0]} labels")
    images = pixels.reshape(pixels.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(images, labels.astype(np.int64))


def write_idx(data, images_path, labels_path, side=28):
    """Write ``data`` back out in IDX format (pixels re-quantized to bytes)."""
    n = len(data)
    pixels = np.rint(data.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, side, pixels.shape[1] // side))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, n))
        f.write(data.labels.astype(np.uint8).tobytes())


def stratified_indices(labels, per_class, seed, classes=range(10)):
    """Return (rest, picked) index arrays with ``per_class`` picks per label."""
    rng = np.random.default_rng(seed)
    picked = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        if members.size < per_class:
            raise InsufficientClassError(c, members.size, per_class)
        picked.append(rng.choice(members, size=per_class, replace=False))
    picked = np.sort(np.concatenate(picked)) if picked else np.empty(0, np.int64)
    mask = np.ones(labels.shape[0], dtype=bool)
    mask[picked] = False
    return np.flatnonzero(mask), picked.astype(np.int64)


def stratified_split(data, per_class, seed):
    """Split off a validation set holding exactly ``per_class`` examples of each digit."""
    rest, picked = stratified_indices(data.labels, per_class, seed)
    return data.take(rest), data.take(picked)


def minibatch_indices(n_rows, batch_size, epoch_seed):
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    perm = np.random.default_rng(epoch_seed).permutation(n_rows)
    return [perm[start:start + batch_size] for start in range(0, n_rows, batch_size)]


def minibatches(data, batch_size, epoch_seed):
    """Yield row batches in a fresh order for every epoch seed.

    The final batch may be short; it is kept so every row is visited once.
    """
    for idx in minibatch_indices(data.shape[0], batch_size, epoch_seed):
        yield data[idx]


def batch_sizes(n_rows, batch_size):
    full, rem = divmod(n_rows, batch_size)
    return [batch_size] * full + ([rem] if rem else [])
