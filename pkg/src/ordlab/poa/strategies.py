"""Candidate selection plus the ordering and sampling strategies."""

import numpy as np

from ..errors import ShapeError

DEFAULT_EPSILON = 1e-8


def select_candidates(pool, kappa, rng):
    """Pick ``kappa`` distinct members of ``pool`` uniformly at random."""
    pool = list(pool)
    if kappa < 1:
        raise ShapeError("kappa must be at least 1")
    if kappa > len(pool):
        raise ShapeError(f"pool holds {len(pool)} items, cannot select {kappa}")
    picks = rng.choice(len(pool), size=kappa, replace=False)
    return [pool[i] for i in picks]


def order_next(scores, strategy):
    """Item id with the lowest (ascending) or highest (descending) score; ties go to the lowest id."""
    if not scores:
        raise ShapeError("cannot order an empty score list")
    if strategy not in ("ascending", "descending"):
        raise ShapeError(f"unknown ordering strategy {strategy!r}")
    sign = 1 if strategy == "ascending" else -1
    return min(scores, key=lambda item: (sign * scores[item], item))


def sampling_probabilities(scores, weighting, epsilon=DEFAULT_EPSILON):
    ids = sorted(scores)
    s = np.array([scores[i] for i in ids], dtype=np.float64)
    if weighting == "direct":
        if np.any(s < 0):
            raise ShapeError("direct weighting needs non-negative scores")
        w = s + epsilon
    elif weighting == "inverse":
        w = 1.0 / (s + epsilon)
    else:
        raise ShapeError(f"unknown weighting {weighting!r}")
    return ids, w / w.sum()


def sample_batch(scores, weighting, rng, count, epsilon=DEFAULT_EPSILON):
    """Draw ``count`` item ids with replacement, weighted by score (direct) or inverse score."""
    if not scores:
        raise ShapeError("cannot sample from an empty score list")
    ids, p = sampling_probabilities(scores, weighting, epsilon)
    draws = rng.choice(len(ids), size=count, replace=True, p=p)
    return [ids[i] for i in draws]
