from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .. import rng as rng_mod
from ..errors import ShapeError


class Sample(NamedTuple):
    image: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable image collection.

    ``images`` has shape ``(n, *sample_shape)``; for image data the sample shape
    is ``(channels, height, width)`` with pixels in [0, 1].
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str = ""

    def __post_init__(self):
        images = np.array(self.images, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        if len(images) == 0:
            raise ShapeError("dataset must not be empty")
        if labels.shape != (len(images),):
            raise ShapeError(f"{len(labels)} labels for {len(images)} images")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ShapeError(f"labels must lie in [0, {self.num_classes})")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return Sample(self.images[i], int(self.labels[i]))

    @property
    def sample_shape(self):
        return tuple(self.images.shape[1:])

    def take(self, indices, provenance=None):
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes,
                       provenance if provenance is not None else self.provenance)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


def subset_per_class(dataset, per_class, classes=None, seed=0):
    """Exactly ``per_class`` samples of each requested class, picked by a seeded shuffle.

    The result keeps the original relative order of the chosen samples, and
    labels are not remapped.
    """
    if per_class < 1:
        raise ShapeError(f"per_class must be at least 1, got {per_class}")
    classes = sorted(range(dataset.num_classes) if classes is None else set(int(c) for c in classes))
    gen = rng_mod.stream(seed, "subset")
    chosen = []
    for c in classes:
        members = np.flatnonzero(dataset.labels == c)
        if len(members) < per_class:
            raise ShapeError(f"class {c} has {len(members)} samples, {per_class} requested")
        chosen.append(gen.permutation(members)[:per_class])
    idx = np.sort(np.concatenate(chosen))
    tag = f"{dataset.provenance}|subset(per_class={per_class},classes={classes},seed={seed})"
    return dataset.take(idx, provenance=tag)


def batch_split(n, batch_size, seed, strict=False, epoch=0):
    """Seeded partition of ``range(n)`` (or of a dataset's indices) into batches.

    Each ``epoch`` gets its own split. With ``strict`` the batch size must
    divide ``n``; otherwise the last batch may be short.
    """
    if not isinstance(n, (int, np.integer)):
        n = len(n)
    if batch_size < 1:
        raise ShapeError("batch size must be positive")
    if strict and n % batch_size:
        raise ShapeError(f"batch size {batch_size} does not divide dataset size {n}")
    perm = rng_mod.stream(seed, "split", epoch).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
