"""Build the small real-data fixtures under tests/data/.

Sources (both reachable through package registries, no direct dataset hosts):

* MNIST: ``mnist_5k.csv.gz`` shipped inside the ``mlxtend`` wheel
  (``pip download --no-deps mlxtend``); one row per digit, 784 pixel values
  followed by the label.
* CIFAR-10: the ``tfjs-cifar10`` npm tarball (``npm pack tfjs-cifar10``);
  every PNG row is one 32x32 RGB image in HWC order, labels in JSON.

Usage::

    python tools/make_test_data.py --mlxtend-wheel mlxtend-*.whl \
        --tfjs-cifar10 path/to/package --out tests/data
"""

import argparse
import gzip
import io
import json
import zipfile
from pathlib import Path

import numpy as np
from PIL import Image

from ordlab.data import write_cifar10, write_mnist_idx

MNIST_TRAIN_POOL_PER_CLASS = 100
CIFAR_TRAIN = 1500
CIFAR_TEST = 1000


def mnist01(wheel, out):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.StringIO(raw.decode()), delimiter=",", dtype=np.int64)
    labels, pixels = table[:, -1], table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    # rows are grouped by digit, so split each class separately
    train, test = [], []
    for digit in (0, 1):
        members = np.flatnonzero(labels == digit)
        train.append(members[:MNIST_TRAIN_POOL_PER_CLASS])
        test.append(members[MNIST_TRAIN_POOL_PER_CLASS:])
    train, test = np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
    out.mkdir(parents=True, exist_ok=True)
    write_mnist_idx(out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte", pixels[train], labels[train])
    write_mnist_idx(out / "test-images-idx3-ubyte", out / "test-labels-idx1-ubyte", pixels[test], labels[test])
    print(f"mnist01: {len(train)} train pool, {len(test)} test")


def cifar10(package, out):
    out.mkdir(parents=True, exist_ok=True)
    for png, labels_file, count, name in (
        ("data_batch_1.png", "train_lables.json", CIFAR_TRAIN, "data_batch_1_head.bin"),
        ("test_batch.png", "test_lables.json", CIFAR_TEST, "test_batch_head.bin"),
    ):
        rows = np.asarray(Image.open(package / png).convert("RGB"))[:count]
        images = rows.reshape(count, 32, 32, 3).transpose(0, 3, 1, 2)
        labels = np.asarray(json.loads((package / labels_file).read_text())[:count])
        write_cifar10(out / name, images, labels)
        print(f"{name}: {count} records, class counts {np.bincount(labels, minlength=10).tolist()}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mlxtend-wheel", type=Path, required=True)
    parser.add_argument("--tfjs-cifar10", type=Path, required=True)
    parser.add_argument("--out", type=Path, default=Path("tests/data"))
    args = parser.parse_args()
    mnist01(args.mlxtend_wheel, args.out / "mnist01")
    cifar10(args.tfjs_cifar10, args.out / "cifar10")


if __name__ == "__main__":
    main()
