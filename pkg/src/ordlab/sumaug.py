"""Sum augmentation: K-sample mixing, the GCC coefficient schedule and the cascading trainers."""

import math
import time
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import rng as rng_mod
from .data import batch_split, preprocess
from .errors import ConfigError, ShapeError
from .metrics import MetricsRecord
from .training import EpochAccumulator, LRSchedule, TrainState, diverged_record, epoch_record, soft_train_step


class MixedBatch(NamedTuple):
    inputs: np.ndarray
    soft_targets: np.ndarray
    K: int


@dataclass(frozen=True)
class CoefficientVector:
    n: int
    t: float
    k: int
    coefficients: tuple

    def as_array(self):
        return np.array(self.coefficients, dtype=np.float64)


def gcc(n, t):
    """Interpolation weights for ``n`` groups at progress ``t`` in [0, 1].

    ``k = floor(t (n - 1))`` coefficients are retired (trailing zeros), the
    coefficient at position ``n - k`` is decaying towards zero and the first
    ``n - k - 1`` absorb its mass. When only one coefficient survives the
    vector is one-hot.
    """
    if n < 1 or int(n) != n:
        raise ShapeError(f"n must be a positive integer, got {n}")
    if not 0.0 <= t <= 1.0:
        raise ShapeError(f"t must lie in [0, 1], got {t}")
    n = int(n)
    k = math.floor(t * (n - 1))
    live = n - k
    if live == 1:
        return CoefficientVector(n, t, k, (1.0,) + (0.0,) * (n - 1))
    frac = t * (n - 1) - k
    centroid = 1.0 / live + frac / (live * (live - 1))
    # equal to 1 - centroid * (live - 1), arranged so that t = 0 yields exactly 1 / n
    remainer = (1.0 - frac) / live
    # frac / (n - 1) is the progress t - k / (n - 1) through the current segment
    eps = remainer * (frac / (n - 1)) / (n - 1)
    raised = centroid + eps / (live - 1)
    coeffs = (raised,) * (live - 1) + (remainer - eps,) + (0.0,) * k
    return CoefficientVector(n, t, k, coeffs)


def _groups(batch, K):
    m = len(batch)
    if K < 1 or m % K:
        raise ConfigError(f"group count {K} must divide the batch size {m}")
    return m // K


def mix_batch_weighted(batch, labels, coefficients, num_classes):
    """Output ``i`` is ``sum_j C[j] * batch[i + j * (m // K)]``; group ``j`` adds ``C[j]`` to its label's target."""
    if isinstance(coefficients, CoefficientVector):
        coefficients = coefficients.coefficients
    coeffs = [float(c) for c in coefficients]
    K = len(coeffs)
    batch = np.asarray(batch)
    labels = np.asarray(labels)
    g = _groups(batch, K)
    dtype = batch.dtype if np.issubdtype(batch.dtype, np.floating) else np.float64
    scalar = np.dtype(dtype).type
    inputs = scalar(coeffs[0]) * batch[:g].astype(dtype, copy=False)
    for j in range(1, K):
        inputs = inputs + scalar(coeffs[j]) * batch[j * g:(j + 1) * g].astype(dtype, copy=False)
    targets = np.zeros((g, num_classes), dtype=np.float64)
    rows = np.arange(g)
    for j in range(K):
        targets[rows, labels[j * g:(j + 1) * g]] += coeffs[j]
    return MixedBatch(inputs, targets, K)


def mix_batch_average(batch, labels, K, num_classes):
    """Mean of the ``K`` same-position members of each group; targets count labels over ``K``."""
    return mix_batch_weighted(batch, labels, np.full(K, 1.0 / K), num_classes)


def sample_coefficients(K, source, rng=None, alpha=1.0):
    """Mixing weights for ``K`` groups: ``average``, normalized ``beta(alpha)`` or normalized ``uniform`` draws."""
    if K < 1:
        raise ShapeError("K must be at least 1")
    if source == "average":
        return np.full(K, 1.0 / K)
    if source == "beta":
        if not alpha > 0:
            raise ConfigError(f"beta alpha must be positive, got {alpha}")
        draws = rng.beta(alpha, alpha, size=K)
    elif source == "uniform":
        draws = rng.random(K)
    else:
        raise ConfigError(f"unknown coefficient source {source!r}")
    total = draws.sum()
    if total <= 0:
        return np.full(K, 1.0 / K)
    return draws / total


def domain_size(dataset_size, K):
    if K > dataset_size:
        raise ShapeError(f"K={K} exceeds the dataset size {dataset_size}")
    return math.comb(dataset_size, K)


def total_domain_size(dataset_size, K):
    if K > dataset_size:
        raise ShapeError(f"K={K} exceeds the dataset size {dataset_size}")
    return sum(math.comb(dataset_size, j) for j in range(1, K + 1))


def spike_flags(series, factor=5.0):
    """Per-step flags: ``|delta|`` larger than ``factor`` times the median ``|delta|``."""
    deltas = np.abs(np.diff(np.asarray(series, dtype=np.float64)))
    if len(deltas) == 0:
        return np.zeros(0, dtype=bool)
    return deltas > factor * np.median(deltas)


@dataclass(frozen=True)
class CascadeConfig:
    start_K: int = 4
    patience: int = 300
    delta: float = 1e-4
    eval_every: int = 0  # steps between plateau checks; 0 means once per epoch
    stop_K: int = 1
    max_steps: int = 100000

    def __post_init__(self):
        if self.start_K < 1 or self.start_K & (self.start_K - 1):
            raise ConfigError(f"start_K must be a power of two, got {self.start_K}")
        if self.stop_K < 1 or self.stop_K > self.start_K:
            raise ConfigError("stop_K must lie in [1, start_K]")
        if self.patience < 1 or self.max_steps < 1 or self.eval_every < 0:
            raise ConfigError("patience and max_steps must be positive, eval_every non-negative")


@dataclass(frozen=True)
class GradualConfig:
    n: int = 4
    nr_epochs: int = 10
    nr_finetune_epochs: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.nr_epochs < 1 or self.nr_finetune_epochs < 0:
            raise ConfigError("nr_epochs must be at least 1 and nr_finetune_epochs non-negative")


def _mixed_step(state, train, idx, coeffs, prep, loss_K):
    x = preprocess(train.images[idx], prep, state.aug_rng, train_mode=True)
    mixed = mix_batch_weighted(x, train.labels[idx], coeffs, train.num_classes)
    return soft_train_step(state, mixed.inputs, mixed.soft_targets, loss_K), len(mixed.inputs)


def _epoch_batches(n, batch_size, seed, epoch, K):
    """The epoch's split in a seeded random order, dropping a trailing batch that K does not divide."""
    batches = batch_split(n, batch_size, seed, epoch=epoch)
    order = rng_mod.stream(seed, "order", epoch).permutation(len(batches))
    return [batches[i] for i in order if len(batches[i]) % K == 0]


def run_cascade(train, test, spec, config, cascade, seed, run_id="cascade"):
    """Train on K-averaged mixtures, halving K whenever the test loss plateaus.

    Every evaluation that reaches a new best test accuracy for the current
    stage is checkpointed; on plateau that checkpoint is reloaded before K is
    halved. Training stops after the ``stop_K`` stage plateaus or after
    ``max_steps``. Returns ``(records, final_state, transitions)`` where each
    transition is ``(K, best_test_acc, checkpoint)``.
    """
    state = TrainState.create(spec, config, seed)
    schedule = LRSchedule(state.optimizer, config)
    prep = config.preprocess
    started = time.perf_counter()
    records, transitions = [], []
    K = cascade.start_K
    if config.batch_size % K:
        raise ConfigError(f"start_K={K} must divide the batch size {config.batch_size}")
    best_acc, best_ckpt = -1.0, None
    best_loss, last_gain = math.inf, 0
    epoch = 0
    while True:
        state.epoch = epoch
        schedule.start_epoch(epoch)
        acc = EpochAccumulator()
        batches = _epoch_batches(len(train), config.batch_size, seed, epoch, K)
        eval_every = cascade.eval_every or len(batches)
        stage_done = False
        for idx in batches:
            (loss, a), n_mixed = _mixed_step(state, train, idx, np.full(K, 1.0 / K), prep, K)
            if not math.isfinite(loss):
                records.append(diverged_record(run_id, state, started))
                return records, state, transitions
            acc.add(loss, a, n_mixed)
            schedule.after_step(loss)
            if state.step % eval_every and state.step < cascade.max_steps:
                continue
            rec = epoch_record(run_id, state, acc, test, prep, started, config.eval_batch_size, "eval", K)
            records.append(rec)
            acc = EpochAccumulator()
            if rec.test_acc > best_acc:
                best_acc, best_ckpt = rec.test_acc, state.snapshot(K=K, test_acc=rec.test_acc)
            if rec.test_loss < best_loss - cascade.delta:
                best_loss, last_gain = rec.test_loss, state.step
            if state.step - last_gain >= cascade.patience or state.step >= cascade.max_steps:
                stage_done = True
                break
        epoch += 1
        if not stage_done:
            continue
        transitions.append((K, best_acc, best_ckpt))
        steps_taken = state.step
        state.restore(best_ckpt)
        # counters keep counting work actually done so metric rows stay ordered
        state.step, state.epoch = steps_taken, epoch
        if K <= cascade.stop_K or state.step >= cascade.max_steps:
            records.append(_event_row(run_id, state, test, prep, started, config, "final", K))
            return records, state, transitions
        K //= 2
        records.append(_event_row(run_id, state, test, prep, started, config, "transition", K))
        best_acc, best_ckpt = -1.0, None
        best_loss, last_gain = math.inf, state.step


def _event_row(run_id, state, test, prep, started, config, event, K, t=0.0):
    return epoch_record(run_id, state, None, test, prep, started, config.eval_batch_size, event, K, t)


def run_gradual_cascade(train, test, spec, config, gradual, seed, run_id="gradual"):
    """Epoch ``e`` mixes with ``gcc(n, e / nr_epochs)``; then fine-tunes on clean batches at ``t = 1``.

    The loss divisor at each epoch is the number of live coefficients.
    Returns ``(records, final_state)``.
    """
    if config.batch_size % gradual.n:
        raise ConfigError(f"n={gradual.n} must divide the batch size {config.batch_size}")
    state = TrainState.create(spec, config, seed)
    schedule = LRSchedule(state.optimizer, config)
    prep = config.preprocess
    started = time.perf_counter()
    records = [_event_row(run_id, state, test, prep, started, config, "init", gradual.n)]
    t_step = 1.0 / gradual.nr_epochs
    total = gradual.nr_epochs + gradual.nr_finetune_epochs
    for epoch in range(total):
        state.epoch = epoch
        schedule.start_epoch(epoch)
        t = min(epoch * t_step, 1.0) if epoch < gradual.nr_epochs else 1.0
        if epoch < gradual.nr_epochs:
            cv = gcc(gradual.n, t)
            coeffs, live, group = cv.coefficients, gradual.n - cv.k, gradual.n
        else:
            coeffs, live, group = (1.0,), 1, 1
        acc = EpochAccumulator()
        for idx in _epoch_batches(len(train), config.batch_size, seed, epoch, group):
            (loss, a), n_mixed = _mixed_step(state, train, idx, coeffs, prep, live)
            if not math.isfinite(loss):
                records.append(diverged_record(run_id, state, started))
                return records, state
            acc.add(loss, a, n_mixed)
            schedule.after_step(loss)
        state.epoch = epoch + 1
        event = "epoch" if epoch < gradual.nr_epochs else "finetune"
        records.append(epoch_record(run_id, state, acc, test, prep, started, config.eval_batch_size, event, live, t))
    return records, state


def best_accuracy(records):
    accs = [r.test_acc for r in records if isinstance(r, MetricsRecord) and not math.isnan(r.test_acc)]
    return max(accs) if accs else float("nan")

