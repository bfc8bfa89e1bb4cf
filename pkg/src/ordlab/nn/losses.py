"""Loss functions returning ``(loss, dloss/dlogits)``."""

import numpy as np

from ..errors import ShapeError


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy over the batch."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} are incompatible")
    m, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ShapeError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(m)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1
    grad /= m
    return loss, grad.astype(logits.dtype, copy=False)


def mixed_bce_loss(logits, soft_targets, K):
    """Sigmoid binary cross-entropy against soft targets, averaged over all entries, divided by K."""
    logits = np.asarray(logits)
    y = np.asarray(soft_targets, dtype=logits.dtype)
    if logits.shape != y.shape or logits.ndim != 2:
        raise ShapeError(f"soft targets {y.shape} do not match logits {logits.shape}")
    if K < 1 or int(K) != K:
        raise ShapeError(f"K must be a positive integer, got {K}")
    if y.size and (y.min() < 0 or y.max() > 1):
        raise ShapeError("soft targets must lie in [0, 1]")
    per = np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
    loss = float(per.mean() / K)
    sig = np.where(logits >= 0, 1 / (1 + np.exp(-np.abs(logits))), np.exp(-np.abs(logits)) / (1 + np.exp(-np.abs(logits))))
    grad = (sig - y) / (y.size * K)
    return loss, grad.astype(logits.dtype, copy=False)
