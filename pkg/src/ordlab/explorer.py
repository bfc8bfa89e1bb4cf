"""Exhaustive batch-order search with k-means pruning between epochs."""

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .data import batch_split
from .errors import BudgetExceeded, ConfigError, ShapeError
from .nn import Checkpoint, restore
from .training import TrainConfig, TrainState, evaluate, train_step

LEDGER_COLUMNS = ("epoch", "parent_hash", "permutation", "test_loss", "test_acc", "checkpoint_hash")
LEDGER_FIELDS = ("epoch", "permutation", "parent_hash", "test_loss", "test_acc", "checkpoint_hash")
DISTRIBUTION_COLUMNS = ("epoch", "min_acc", "mean_acc", "max_acc", "min_loss", "max_loss", "runs")


def count_orderings(n, b):
    if b < 1 or n % b:
        raise ShapeError(f"batch size {b} does not divide {n} samples")
    return math.factorial(n // b)


def total_iterations(perms_per_epoch, clusters, epochs):
    if epochs < 1:
        raise ShapeError("need at least one epoch")
    return perms_per_epoch + clusters * perms_per_epoch * (epochs - 1)


@dataclass(frozen=True)
class PermutationRun:
    epoch: int
    permutation: tuple
    parent_hash: str
    test_loss: float
    test_acc: float
    checkpoint_hash: str
    checkpoint: bytes = b""

    def ledger_row(self):
        return (str(self.epoch), self.parent_hash, "-".join(map(str, self.permutation)),
                repr(float(self.test_loss)), repr(float(self.test_acc)), self.checkpoint_hash)


@dataclass(frozen=True)
class EpochDistribution:
    epoch: int
    min_acc: float
    mean_acc: float
    max_acc: float
    min_loss: float
    max_loss: float
    runs: int

    @classmethod
    def from_runs(cls, epoch, runs):
        acc = np.array([r.test_acc for r in runs])
        loss = np.array([r.test_loss for r in runs])
        # clip guards against the mean rounding past an extreme when all values are equal
        return cls(epoch, float(acc.min()), float(np.clip(acc.mean(), acc.min(), acc.max())), float(acc.max()),
                   float(loss.min()), float(loss.max()), len(runs))


def run_epoch_permutation(parent, permutation, batches, train, test, config, epoch=0):
    """Train one epoch from ``parent`` visiting ``batches`` in ``permutation`` order.

    ``parent`` is a checkpoint or its serialized bytes; it is never modified.
    """
    if isinstance(parent, (bytes, bytearray)):
        parent = Checkpoint.from_bytes(parent)
    if sorted(permutation) != list(range(len(batches))):
        raise ShapeError("permutation must be a bijection over the batch indices")
    model, opt, aug = restore(parent)
    state = TrainState(model, opt, aug if aug is not None else rng_mod.stream(0, "augment"), parent.step, epoch)
    for i in permutation:
        idx = batches[i]
        train_step(state, train.images[idx], train.labels[idx], config.preprocess)
    state.epoch = epoch + 1
    loss, acc = evaluate(state.model, test, config.preprocess, config.eval_batch_size)
    blob = state.snapshot().to_bytes()
    return PermutationRun(epoch, tuple(int(i) for i in permutation), parent.content_hash, float(loss), float(acc),
                          Checkpoint.from_bytes(blob).content_hash, blob)


def farthest_point_init(values, clusters, seed):
    """Seeded first centre among the distinct values, then repeatedly the value farthest from all centres."""
    distinct = np.unique(np.asarray(values, dtype=np.float64))
    centers = [distinct[rng_mod.stream(seed, "kmeans").integers(len(distinct))]]
    while len(centers) < min(clusters, len(distinct)):
        dist = np.min(np.abs(distinct[:, None] - np.array(centers)[None, :]), axis=1)
        centers.append(distinct[int(np.argmax(dist))])
    return np.array(centers, dtype=np.float64)


def lloyd_1d(values, clusters, seed, tol=1e-12, max_iter=100):
    """Centroids and assignments of 1-D Lloyd iterations from :func:`farthest_point_init`."""
    values = np.asarray(values, dtype=np.float64)
    centers = farthest_point_init(values, clusters, seed)
    for _ in range(max_iter):
        assign = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        new = centers.copy()
        for c in range(len(centers)):
            members = values[assign == c]
            if len(members):
                new[c] = members.mean()
        shift = np.max(np.abs(new - centers))
        centers = new
        if shift <= tol:
            break
    assign = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
    return centers, assign


def kmeans_select_by_test_loss(runs, clusters=12, seed=0):
    """Indices (into ``runs``) of one representative per test-loss cluster, ascending.

    A representative is the member nearest its centroid, ties to the lowest
    index. With fewer distinct losses than clusters, each distinct loss gets
    one representative.
    """
    if not runs:
        raise ShapeError("no runs to cluster")
    values = np.array([r.test_loss for r in runs], dtype=np.float64)
    distinct = np.unique(values)
    if len(distinct) <= clusters:
        return sorted(int(np.flatnonzero(values == v)[0]) for v in distinct)
    centers, assign = lloyd_1d(values, clusters, seed)
    reps = []
    for c, center in enumerate(centers):
        members = np.flatnonzero(assign == c)
        if len(members):
            dist = np.abs(values[members] - center)
            reps.append(int(members[np.argmin(dist)]))
    return sorted(reps)


@dataclass(frozen=True)
class ExploreConfig:
    batch_size: int = 8
    epochs: int = 1
    clusters: int = 12
    budget: int = 200000

    def __post_init__(self):
        if self.epochs < 1 or self.clusters < 1 or self.batch_size < 1:
            raise ConfigError("epochs, clusters and batch_size must be positive")


_WORKER = {}


def _init_worker(train, test, config):
    _WORKER.update(train=train, test=test, config=config)


def _work(args):
    parent, perm, batches, epoch = args
    return run_epoch_permutation(parent, perm, batches, _WORKER["train"], _WORKER["test"], _WORKER["config"], epoch)


def explore(train, test, spec, train_config, explore_config, seed, workers=1):
    """Enumerate every batch order per epoch, fanning out from k-means representatives.

    Epoch 0 starts all runs from one shared initialization. Returns
    ``(distributions, ledger, initial_hash, representatives)`` where the
    ledger holds every :class:`PermutationRun` in (epoch, parent, permutation
    rank) order and ``representatives`` maps epoch to the retained runs.
    """
    n, b = len(train), explore_config.batch_size
    perms_per_epoch = count_orderings(n, b)
    planned = total_iterations(perms_per_epoch, explore_config.clusters, explore_config.epochs)
    if planned > explore_config.budget:
        raise BudgetExceeded(planned, explore_config.budget)
    config = TrainConfig(**{**train_config.__dict__, "batch_size": b})
    init = TrainState.create(spec, config, seed).snapshot()
    parents = [init.to_bytes()]
    initial_hash = init.content_hash
    perms = list(itertools.permutations(range(n // b)))
    distributions, ledger, kept = [], [], {}
    pool = ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(train, test, config)) if workers > 1 else None
    if pool is None:
        _init_worker(train, test, config)
    try:
        for epoch in range(explore_config.epochs):
            batches = batch_split(n, b, seed, strict=True, epoch=epoch)
            jobs = [(parent, perm, batches, epoch) for parent in parents for perm in perms]
            if pool is None:
                runs = [_work(job) for job in jobs]
            else:
                runs = list(pool.map(_work, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
            distributions.append(EpochDistribution.from_runs(epoch, runs))
            reps = [runs[i] for i in kmeans_select_by_test_loss(runs, explore_config.clusters, seed)]
            kept[epoch] = reps
            parents = [r.checkpoint for r in reps]
            # only representatives keep their serialized checkpoints
            ledger.extend(PermutationRun(*[getattr(r, f) for f in LEDGER_FIELDS]) for r in runs)
    finally:
        if pool is not None:
            pool.shutdown()
    return distributions, ledger, initial_hash, kept


def write_ledger_csv(path, ledger):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LEDGER_COLUMNS)
        writer.writerows(r.ledger_row() for r in ledger)


def write_distribution_csv(path, distributions):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DISTRIBUTION_COLUMNS)
        for d in distributions:
            writer.writerow([d.epoch, repr(d.min_acc), repr(d.mean_acc), repr(d.max_acc),
                             repr(d.min_loss), repr(d.max_loss), d.runs])
