import numpy as np

from .. import rng as rng_mod
from ..errors import ShapeError
from .dataset import Dataset


def synthetic_blobs(num_classes, per_class, dims, separation, seed, key="blobs", split="train"):
    """Gaussian clusters with unit variance whose centres sit on scaled random directions.

    Samples are flat ``(dims,)`` vectors (not images; no [0, 1] range). The
    centres depend only on ``seed`` and ``key``, so different ``split`` names
    give independent draws around the same centres.
    """
    if separation <= 0:
        raise ShapeError("separation must be positive")
    directions = rng_mod.stream(seed, key, "centres").normal(size=(num_classes, dims))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centres = directions * separation
    gen = rng_mod.stream(seed, key, split)
    labels = np.repeat(np.arange(num_classes), per_class)
    points = centres[labels] + gen.normal(size=(len(labels), dims))
    order = gen.permutation(len(labels))
    tag = f"blobs(c={num_classes},n={per_class},d={dims},sep={separation},seed={seed},key={key},split={split})"
    return Dataset(points[order], labels[order], num_classes, tag)
