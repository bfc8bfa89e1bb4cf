"""Readers and writers for the CIFAR-10 binary and MNIST IDX formats."""

import os
import struct

import numpy as np

from ..errors import FormatError
from .dataset import Dataset

CIFAR_RECORD = 3073
MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801


def _to_uint8(images):
    images = np.asarray(images)
    if images.dtype == np.uint8:
        return images
    return np.rint(np.clip(images, 0, 1) * 255).astype(np.uint8)


def load_cifar10(paths):
    """Read one or more CIFAR-10 binary batch files into a single dataset."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise FormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        bad = np.flatnonzero(records[:, 0] >= 10)
        if bad.size:
            raise FormatError(f"{path}: record {bad[0]} has label byte {records[bad[0], 0]} (must be < 10)")
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape(-1, 3, 32, 32))
    pixels = np.concatenate(images).astype(np.float32) / np.float32(255)
    tag = "cifar10:" + ",".join(os.path.basename(str(p)) for p in paths)
    return Dataset(pixels, np.concatenate(labels), 10, tag)


def write_cifar10(path, images, labels):
    """Write ``(n, 3, 32, 32)`` images (uint8 or floats in [0, 1]) as CIFAR-10 records."""
    pix = _to_uint8(images)
    labels = np.asarray(labels)
    if pix.shape[1:] != (3, 32, 32) or len(pix) != len(labels):
        raise FormatError(f"cannot write images of shape {pix.shape} with {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= 10:
        raise FormatError("CIFAR-10 labels must lie in [0, 10)")
    records = np.empty((len(pix), CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = pix.reshape(len(pix), -1)
    with open(path, "wb") as fh:
        fh.write(records.tobytes())


def _read_idx(path, magic, ndim):
    with open(path, "rb") as fh:
        raw = fh.read()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise FormatError(f"{path}: payload has {len(raw) - header} bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(image_path, label_path, num_classes=10):
    images = _read_idx(image_path, MNIST_IMAGE_MAGIC, 3)
    labels = _read_idx(label_path, MNIST_LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise FormatError(f"{image_path} holds {len(images)} images but {label_path} holds {len(labels)} labels")
    if labels.size and labels.max() >= num_classes:
        raise FormatError(f"{label_path}: label {labels.max()} out of range")
    pixels = images[:, None, :, :].astype(np.float32) / np.float32(255)
    tag = f"mnist:{os.path.basename(str(image_path))}"
    return Dataset(pixels, labels.astype(np.int64), num_classes, tag)


def write_mnist_idx(image_path, label_path, images, labels):
    pix = _to_uint8(images)
    if pix.ndim == 4:
        pix = pix[:, 0]
    labels = np.asarray(labels, dtype=np.uint8)
    if pix.ndim != 3 or len(pix) != len(labels):
        raise FormatError(f"cannot write images of shape {pix.shape} with {len(labels)} labels")
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">IIII", MNIST_IMAGE_MAGIC, *pix.shape))
        fh.write(pix.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">II", MNIST_LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())
