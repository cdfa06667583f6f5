"""MNIST IDX ingestion and synthetic fixtures."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .errors import DataError, FormatError, LengthError, ParameterError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=nm.DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split=None):
        return Dataset(self.images[idx], self.labels[idx], split or self.split)

    def flat(self):
        return Dataset(self.images.reshape(len(self), -1), self.labels, self.split)


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(buf):
    """Parse an in-memory IDX buffer holding unsigned bytes.

    Images (magic 0x803) are returned as float64 ``(n, rows, cols)`` in
    [0, 1]; labels (magic 0x801) as int64 ``(n,)``.
    """
    if len(buf) < 4:
        raise LengthError(f"IDX buffer of {len(buf)} bytes has no magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise FormatError(f"unrecognised IDX magic 0x{magic:08x}; expected 0x{IMAGE_MAGIC:08x} "
                          f"(images) or 0x{LABEL_MAGIC:08x} (labels)")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise LengthError(f"IDX header needs {header} bytes, file has {len(buf)}")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims))
    if len(buf) - header < count:
        raise LengthError(f"IDX payload truncated: dims {dims} need {count} bytes, "
                          f"found {len(buf) - header}")
    data = np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)
    if magic == IMAGE_MAGIC:
        return data.astype(nm.DTYPE) / 255.0
    return data.astype(np.int64)


def load_idx(path):
    """Read an MNIST IDX file (optionally gzipped) from ``path``."""
    return parse_idx(_read_bytes(path))


def write_idx(path, array):
    """Write a uint8 array as IDX (used for fixtures and round-trip tests)."""
    array = np.asarray(array)
    if array.ndim not in (1, 3):
        raise ParameterError(f"only 1-D labels or 3-D images are supported, got {array.ndim}-D")
    if array.dtype.kind == "f":
        array = np.rint(array * 255.0)
    array = array.astype(np.uint8)
    magic = LABEL_MAGIC if array.ndim == 1 else IMAGE_MAGIC
    head = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(head + array.tobytes())


def _find(data_dir, name):
    for candidate in (name, name + ".gz"):
        path = os.path.join(data_dir, candidate)
        if os.path.exists(path):
            return path
    raise DataError(f"MNIST file {name}[.gz] not found in {data_dir}")


def load_mnist(data_dir, val_size=5000):
    """Load MNIST as ``{"train", "val", "test"}`` datasets.

    The validation split is the last ``val_size`` training examples; it is
    held out of ``train``.
    """
    out = {}
    for split, (img, lab) in MNIST_FILES.items():
        images = load_idx(_find(data_dir, img))
        labels = load_idx(_find(data_dir, lab))
        out[split] = Dataset(images[:, None], labels, split)
    if val_size:
        full = out["train"]
        n = len(full) - val_size
        if n <= 0:
            raise DataError(f"val_size {val_size} leaves no training data")
        out["val"] = full.subset(slice(n, None), "val")
        out["train"] = full.subset(slice(0, n), "train")
    return out


def synth_blobs(rng, classes=2, dims=2, n=200, sigma=1.0, separation=6.0):
    """Isotropic Gaussian blobs, one per class, centres ``separation*sigma`` apart.

    Centres lie on a circle in the first two coordinates so adjacent
    classes are exactly ``separation * sigma`` apart. Labels are assigned
    round-robin, so class counts differ by at most one.
    """
    if classes < 2:
        raise ParameterError(f"need at least 2 classes, got {classes}")
    if dims < 1 or (dims < 2 and classes > 2):
        raise ParameterError(f"{classes} classes need at least 2 dimensions")
    if isinstance(rng, (int, np.integer)):
        rng = nm.RngStream(int(rng))
    gap = separation * sigma
    centres = np.zeros((classes, dims))
    if dims == 1:
        centres[:, 0] = gap * np.arange(classes)
    else:
        radius = gap / (2.0 * np.sin(np.pi / classes))
        ang = 2.0 * np.pi * np.arange(classes) / classes
        centres[:, 0] = radius * np.cos(ang)
        centres[:, 1] = radius * np.sin(ang)
    labels = np.arange(n) % classes
    x = centres[labels] + sigma * rng.standard_normal((n, dims))
    return Dataset(x, labels, "train")
