"""Training state, single steps, evaluation and the plain random-order loop."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng as rng_mod
from .data import PreprocessConfig, batch_split, preprocess
from .errors import ConfigError
from .metrics import MetricsRecord
from .nn import SGD, build_model, l2_norm, mixed_bce_loss, restore_into, snapshot, softmax_cross_entropy
from .poa.strategies import select_candidates


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    nesterov: bool = True
    batch_size: int = 100
    epochs: int = 1
    # "none", "step" (multiply by lr_factor every lr_step_every epochs) or
    # "plateau" (multiply by lr_factor after lr_patience steps without a new best train loss)
    lr_schedule: str = "none"
    lr_step_every: int = 30
    lr_factor: float = 0.5
    lr_patience: int = 300
    eval_batch_size: int = 500
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)

    def __post_init__(self):
        if self.lr_schedule not in ("none", "step", "plateau"):
            raise ConfigError(f"unknown lr schedule {self.lr_schedule!r}")
        if not self.lr > 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("need lr > 0, momentum in [0, 1) and weight_decay >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be positive and epochs non-negative")


class LRSchedule:
    def __init__(self, optimizer, config):
        self.optimizer = optimizer
        self.config = config
        self.base_lr = optimizer.lr
        self.best_loss = math.inf
        self.since_best = 0

    def after_step(self, loss):
        if self.config.lr_schedule != "plateau":
            return
        if loss < self.best_loss:
            self.best_loss = loss
            self.since_best = 0
        else:
            self.since_best += 1
            if self.since_best >= self.config.lr_patience:
                self.optimizer.lr *= self.config.lr_factor
                self.since_best = 0

    def start_epoch(self, epoch):
        if self.config.lr_schedule == "step":
            self.optimizer.lr = self.base_lr * self.config.lr_factor ** (epoch // self.config.lr_step_every)


class TrainState:
    """Model, optimizer and augmentation stream of one training run."""

    def __init__(self, model, optimizer, aug_rng, step=0, epoch=0):
        self.model = model
        self.optimizer = optimizer
        self.aug_rng = aug_rng
        self.step = step
        self.epoch = epoch

    @classmethod
    def create(cls, spec, config, seed):
        model = build_model(spec, rng_mod.stream(seed, "init"))
        opt = SGD(model.parameters(), config.lr, config.momentum, config.weight_decay, config.nesterov)
        return cls(model, opt, rng_mod.stream(seed, "augment"))

    def snapshot(self, **extra):
        return snapshot(self.model, self.optimizer, self.aug_rng, self.step, self.epoch, extra)

    def clone(self):
        """Independent copy (own parameters, velocities and rng)."""
        model = self.model.clone()
        opt = SGD(model.parameters(), **self.optimizer.hyperparameters())
        for dst, src in zip(opt.velocity, self.optimizer.velocity):
            dst[...] = src
        aug = rng_mod.from_state(rng_mod.get_state(self.aug_rng))
        return TrainState(model, opt, aug, self.step, self.epoch)

    def restore(self, checkpoint):
        restore_into(checkpoint, self.model, self.optimizer, self.aug_rng)
        self.step = checkpoint.step
        self.epoch = checkpoint.epoch


def evaluate(model, dataset, prep, batch_size=500):
    """Mean cross-entropy and accuracy over ``dataset`` (no augmentation)."""
    total_loss = 0.0
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = preprocess(dataset.images[start:start + batch_size], prep)
        y = dataset.labels[start:start + batch_size]
        logits = model.forward(x)
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += int(np.sum(logits.argmax(axis=1) == y))
    return total_loss / len(dataset), correct / len(dataset)


def train_step(state, images, labels, prep, augment=True):
    """One cross-entropy SGD step on raw images. Returns ``(loss, accuracy)``."""
    x = preprocess(images, prep, state.aug_rng, train_mode=augment)
    logits = state.model.forward(x)
    loss, grad = softmax_cross_entropy(logits, labels)
    state.model.backward(grad)
    state.optimizer.step(state.model.gradients())
    state.model.bump_version()
    state.step += 1
    return loss, float(np.mean(logits.argmax(axis=1) == labels))


def soft_train_step(state, inputs, soft_targets, K):
    """One step of the sum-augmentation loss on already preprocessed, mixed inputs."""
    logits = state.model.forward(inputs)
    loss, grad = mixed_bce_loss(logits, soft_targets, K)
    state.model.backward(grad)
    state.optimizer.step(state.model.gradients())
    state.model.bump_version()
    state.step += 1
    return loss, float(np.mean(logits.argmax(axis=1) == soft_targets.argmax(axis=1)))


class EpochAccumulator:
    def __init__(self):
        self.loss = 0.0
        self.correct = 0.0
        self.count = 0

    def add(self, loss, acc, n):
        self.loss += loss * n
        self.correct += acc * n
        self.count += n

    def means(self):
        if not self.count:
            return float("nan"), float("nan")
        return self.loss / self.count, self.correct / self.count


def epoch_record(run_id, state, acc, test, prep, started, batch_size=500, event="epoch", K=1, t=0.0):
    test_loss, test_acc = evaluate(state.model, test, prep, batch_size)
    train_loss, train_acc = acc.means() if acc is not None else (float("nan"), float("nan"))
    return MetricsRecord(
        run_id=run_id,
        epoch=state.epoch,
        step=state.step,
        event=event,
        train_loss=float(train_loss),
        train_acc=float(train_acc),
        test_loss=float(test_loss),
        test_acc=float(test_acc),
        l2_norm=l2_norm(state.model.parameters()),
        K_current=K,
        t=float(t),
        wall_seconds=round(time.perf_counter() - started, 3),
    )


def diverged_record(run_id, state, started):
    return MetricsRecord(run_id, state.epoch, state.step, event="diverged",
                         wall_seconds=round(time.perf_counter() - started, 3))


def run_training(train, test, spec, config, seed, run_id="train"):
    """Baseline loop: each step trains on a uniformly chosen, not yet used batch of the epoch's split.

    Returns ``(records, final_state)``.
    """
    state = TrainState.create(spec, config, seed)
    schedule = LRSchedule(state.optimizer, config)
    started = time.perf_counter()
    records = []
    for epoch in range(config.epochs):
        state.epoch = epoch
        schedule.start_epoch(epoch)
        batches = batch_split(len(train), config.batch_size, seed, epoch=epoch)
        pool = list(range(len(batches)))
        order_rng = rng_mod.stream(seed, "order", epoch)
        acc = EpochAccumulator()
        while pool:
            (pick,) = select_candidates(pool, 1, order_rng)
            pool.remove(pick)
            idx = batches[pick]
            loss, a = train_step(state, train.images[idx], train.labels[idx], config.preprocess)
            if not math.isfinite(loss):
                records.append(diverged_record(run_id, state, started))
                return records, state
            acc.add(loss, a, len(idx))
            schedule.after_step(loss)
        state.epoch = epoch + 1
        records.append(epoch_record(run_id, state, acc, test, config.preprocess, started, config.eval_batch_size))
    return records, state
