"""Scoring mechanisms. Scorers never leave a trace on the model or optimizer."""

import numpy as np

from .. import rng as rng_mod
from ..data import preprocess
from ..errors import DegenerateScoreError, ShapeError
from ..nn import softmax_cross_entropy


def _loss(model, images, labels, prep):
    logits = model.forward(preprocess(images, prep))
    loss, _ = softmax_cross_entropy(logits, labels)
    return loss


def score_sample_loss(model, item, dataset, prep):
    """Cross-entropy of ``item`` under the current parameters (no augmentation)."""
    idx = list(item.indices)
    return _loss(model, dataset.images[idx], dataset.labels[idx], prep)


def make_external_reference(test_dataset, size, seed, epoch=0):
    """Seeded uniform draw of ``size`` distinct test samples; a new draw per ``epoch``."""
    if size > len(test_dataset):
        raise ShapeError(f"reference of {size} requested from {len(test_dataset)} samples")
    idx = rng_mod.stream(seed, "reference", epoch).choice(len(test_dataset), size=size, replace=False)
    return test_dataset.take(np.sort(idx))


def score_max_loss_delta(model, optimizer, item, dataset, prep, reference=None, mode="absolute"):
    """Drop in reference loss caused by one trial update on ``item``.

    ``reference`` is a dataset (the external variant) or ``None`` to measure on
    the item itself. Parameters and velocities are restored bitwise before
    returning, including when the trial step raises.
    """
    if mode not in ("absolute", "relative"):
        raise ShapeError(f"unknown delta mode {mode!r}")
    idx = list(item.indices)
    x, y = dataset.images[idx], dataset.labels[idx]
    ref_x, ref_y = (x, y) if reference is None else (reference.images, reference.labels)

    params = model.parameters()
    saved_params = [p.copy() for p in params]
    saved_velocity = [v.copy() for v in optimizer.velocity]
    try:
        prev = _loss(model, ref_x, ref_y, prep)
        logits = model.forward(preprocess(x, prep))
        _, grad = softmax_cross_entropy(logits, y)
        model.backward(grad)
        optimizer.step(model.gradients())
        model.bump_version()
        new = _loss(model, ref_x, ref_y, prep)
    finally:
        for dst, src in zip(params, saved_params):
            dst[...] = src
        for dst, src in zip(optimizer.velocity, saved_velocity):
            dst[...] = src
        model.bump_version()

    delta = prev - new
    if mode == "absolute":
        return delta
    if prev == 0:
        raise DegenerateScoreError(f"relative loss delta undefined for item {item.item_id}: previous loss is 0")
    return delta / prev
