"""Dataset ingestion: MNIST (IDX), CIFAR-10 (binary), batch iteration.

Nothing here touches the network; files are read from a local directory and
the ``fetch`` helper in the CLI downloads them only when asked to. Loaders
validate structure strictly (magic numbers, element counts, record sizes)
and record the normalization statistics they applied, which always come
from the training split.
"""

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"

_IDX_MAGIC_IMAGES = 0x00000803
_IDX_MAGIC_LABELS = 0x00000801


@dataclass
class LabeledDataset:
    """inputs: batch-last float tensor (e.g. H x W x C x N); labels: N class
    ids, or an array with batch last for regression-style targets."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    norm: dict = field(default_factory=dict)

    @property
    def size(self):
        return int(self.inputs.shape[-1])

    def take(self, idx):
        labels = (self.labels[idx] if self.labels.ndim == 1
                  else np.take(self.labels, idx, axis=-1))
        return np.take(self.inputs, idx, axis=-1), labels

    def astype(self, dtype):
        return LabeledDataset(self.inputs.astype(dtype), self.labels,
                              self.num_classes, dict(self.norm))


def _read_bytes(path):
    path = Path(path)
    if path.suffix == ".gz" or not path.exists() and path.with_suffix(path.suffix + ".gz").exists():
        gz = path if path.suffix == ".gz" else path.with_suffix(path.suffix + ".gz")
        with gzip.open(gz, "rb") as fh:
            return fh.read()
    with open(path, "rb") as fh:
        return fh.read()


def read_idx(path):
    """Parse one big-endian IDX file into a numpy array of unsigned bytes."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise ParseError(f"{path}: too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (_IDX_MAGIC_IMAGES, _IDX_MAGIC_LABELS):
        raise ParseError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ParseError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise ParseError(f"{path}: expected {expected} bytes for shape {dims}, "
                         f"got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array):
    """Inverse of read_idx for unsigned-byte arrays (round-trip exact)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_mnist(data_dir, dtype=np.float32):
    """Load the four IDX files; scale to [0,1] and center on the train mean."""
    data_dir = Path(data_dir)
    arrays = {}
    for key, fname in MNIST_FILES.items():
        arrays[key] = read_idx(data_dir / fname)
    out = []
    train_mean = None
    for split in ("train", "test"):
        images = arrays[f"{split}_images"]
        labels = arrays[f"{split}_labels"]
        if images.ndim != 3:
            raise ParseError(f"{split} images: expected 3 dimensions, got {images.ndim}")
        if images.shape[0] != labels.shape[0]:
            raise ParseError(f"{split}: {images.shape[0]} images but "
                             f"{labels.shape[0]} labels")
        x = images.astype(dtype).transpose(1, 2, 0)[:, :, None, :] / dtype(255.0)
        if split == "train":
            train_mean = float(x.mean())
        x -= dtype(train_mean)
        out.append(LabeledDataset(
            inputs=np.ascontiguousarray(x),
            labels=labels.astype(np.int64),
            num_classes=10,
            norm={"scheme": "scale01_center", "mean": train_mean, "source": "train"}))
    return tuple(out)


def _read_cifar_records(path):
    raw = _read_bytes(path)
    if len(raw) % 3073 != 0:
        raise ParseError(f"{path}: size {len(raw)} is not a multiple of the "
                         f"3073-byte record")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3073)
    labels = rec[:, 0].astype(np.int64)
    # pixel payload is R plane then G then B, each 32x32 row-major
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32)
    return pixels, labels


def load_cifar10(data_dir, dtype=np.float32):
    """Load the binary batches; standardize per channel on train statistics."""
    data_dir = Path(data_dir)
    parts = [_read_cifar_records(data_dir / f) for f in CIFAR_TRAIN_FILES]
    train_px = np.concatenate([p for p, _ in parts])
    train_labels = np.concatenate([l for _, l in parts])
    test_px, test_labels = _read_cifar_records(data_dir / CIFAR_TEST_FILE)

    def to_hwcn(px):
        return np.ascontiguousarray(px.transpose(2, 3, 1, 0).astype(dtype) / dtype(255.0))

    train_x = to_hwcn(train_px)
    mean = train_x.mean(axis=(0, 1, 3))
    std = np.maximum(train_x.std(axis=(0, 1, 3)), 1e-8)
    norm = {"scheme": "per_channel_standardize",
            "mean": [float(v) for v in mean],
            "std": [float(v) for v in std],
            "source": "train"}

    def standardize(x):
        return (x - mean.astype(dtype).reshape(1, 1, 3, 1)) / std.astype(dtype).reshape(1, 1, 3, 1)

    return (LabeledDataset(standardize(train_x), train_labels, 10, dict(norm)),
            LabeledDataset(standardize(to_hwcn(test_px)), test_labels, 10, dict(norm)))


def batches(dataset, batch_size, rng=None):
    """Yield (inputs, labels) covering the dataset exactly once.

    With an rng, order is a fresh seeded permutation (the last short batch is
    kept); without, order is sequential.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    n = dataset.size
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield dataset.take(order[start:start + batch_size])


def subset(dataset, n, rng):
    """First n items after a seeded shuffle (desk-scale runs)."""
    if n is None or n >= dataset.size:
        return dataset
    if n < 1:
        raise ConfigError(f"subset size must be >= 1, got {n}")
    idx = rng.permutation(dataset.size)[:n]
    inputs, labels = dataset.take(idx)
    return LabeledDataset(np.ascontiguousarray(inputs), labels,
                          dataset.num_classes, dict(dataset.norm))


def load_text(path):
    """UTF-8 corpus for the character model; must be non-empty."""
    text = Path(path).read_text(encoding="utf-8")
    if not text:
        raise DataError(f"{path}: corpus is empty")
    return text
