"""Test-time sum augmentation and gradient-sign attacks."""

import csv
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .data import preprocess
from .errors import ConfigError, ShapeError
from .nn import softmax, softmax_cross_entropy


@dataclass(frozen=True)
class TTAConfig:
    C: int = 16
    lam: float = 1.0
    K: int = 4
    pool: str = "test"
    normalize_coefficients: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.C < 1 or self.K < 1:
            raise ConfigError("C and K must be at least 1")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.pool not in ("train", "test"):
            raise ConfigError(f"unknown co-sample pool {self.pool!r}")

    def coefficients(self):
        """Weight of the query image and of each of the ``K - 1`` co-samples."""
        own = self.lam / self.K
        other = 1.0 / (self.K * self.lam)
        if self.normalize_coefficients:
            total = own + (self.K - 1) * other
            own, other = own / total, other / total
        return own, other


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise ConfigError(f"unknown attack {self.kind!r}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.kind == "pgd" and self.steps < 1:
            raise ConfigError("pgd needs at least one step")


def _augmented(image, pool_images, config, rng, co_samples=None):
    """``C`` mixtures of ``image`` with ``K - 1`` random pool images (drawn with replacement)."""
    own, other = config.coefficients()
    dtype = image.dtype
    if co_samples is None and config.K == 1:
        co_samples = np.zeros((config.C, 0), dtype=np.int64)
    elif co_samples is None:
        co_samples = rng.integers(0, len(pool_images), size=(config.C, config.K - 1))
    co_samples = np.asarray(co_samples).reshape(config.C, config.K - 1)
    out = np.empty((config.C,) + image.shape, dtype=dtype)
    for c in range(config.C):
        mixed = dtype.type(own) * image
        for j in co_samples[c]:
            mixed = mixed + dtype.type(other) * pool_images[j]
        out[c] = mixed
    return out


def tta_predict(model, image, pool_images, config, prep, rng=None, co_samples=None):
    """Mean softmax over ``C`` augmented copies of one raw image. Returns ``(probabilities, class)``.

    ``co_samples`` optionally fixes the pool indices, shape ``(C, K - 1)``.
    """
    image = np.asarray(image)
    if len(pool_images) == 0 and config.K > 1:
        raise ShapeError("co-sample pool is empty")
    if rng is None and co_samples is None and config.K > 1:
        raise ValueError("tta_predict needs an rng or explicit co-samples")
    batch = _augmented(image, pool_images, config, rng, co_samples)
    probs = softmax(model.forward(preprocess(batch, prep)).astype(np.float64))
    mean = probs.sum(axis=0) / config.C
    return mean, int(np.argmax(mean))


def tta_evaluate(model, dataset, pool, config, prep, images=None):
    """Accuracy and per-class accuracy under TTA; image ``i`` draws co-samples from its own stream.

    ``images`` optionally replaces ``dataset.images`` (for attacked copies).
    """
    images = dataset.images if images is None else images
    preds = np.empty(len(dataset), dtype=np.int64)
    for i in range(len(dataset)):
        gen = rng_mod.stream(config.seed, "tta", i)
        _, preds[i] = tta_predict(model, images[i], pool.images, config, prep, gen)
    return _accuracy_breakdown(preds, dataset.labels, dataset.num_classes)


def _accuracy_breakdown(preds, labels, num_classes):
    hit = preds == labels
    per_class = np.full(num_classes, np.nan)
    for c in range(num_classes):
        mask = labels == c
        if mask.any():
            per_class[c] = hit[mask].mean()
    return float(hit.mean()), per_class


def predict(model, images, prep, batch_size=500):
    out = []
    for start in range(0, len(images), batch_size):
        out.append(model.forward(preprocess(images[start:start + batch_size], prep)).argmax(axis=1))
    return np.concatenate(out)


def plain_evaluate(model, dataset, prep, images=None):
    images = dataset.images if images is None else images
    return _accuracy_breakdown(predict(model, images, prep), dataset.labels, dataset.num_classes)


def input_gradient(model, images, labels, prep):
    """Gradient of the mean cross-entropy with respect to the raw (unnormalized) pixels."""
    logits = model.forward(preprocess(images, prep))
    _, grad = softmax_cross_entropy(logits, labels)
    g = model.backward(grad)
    if prep.mean:
        std = np.asarray(prep.std, dtype=g.dtype).reshape((1, -1) + (1,) * (g.ndim - 2))
        g = g / std
    return g


def fgsm(model, images, labels, epsilon, prep):
    """One signed-gradient step of size ``epsilon``, clipped to [0, 1]."""
    images = np.asarray(images)
    eps = images.dtype.type(epsilon)
    g = input_gradient(model, images, labels, prep)
    return np.clip(images + eps * np.sign(g).astype(images.dtype), 0, 1)


def pgd(model, images, labels, epsilon, alpha, steps, prep):
    """Iterated signed-gradient ascent projected onto the ``epsilon`` max-norm ball and [0, 1]."""
    if steps < 1:
        raise ConfigError("pgd needs at least one step")
    x0 = np.asarray(images)
    eps, step = x0.dtype.type(epsilon), x0.dtype.type(alpha)
    lo, hi = x0 - eps, x0 + eps
    x = x0
    for _ in range(steps):
        g = input_gradient(model, x, labels, prep)
        x = x + step * np.sign(g).astype(x0.dtype)
        x = np.clip(np.clip(x, lo, hi), 0, 1)
    return x


def attack(model, images, labels, config, prep, batch_size=200):
    out = np.empty_like(np.asarray(images))
    for start in range(0, len(images), batch_size):
        sl = slice(start, start + batch_size)
        if config.kind == "fgsm":
            out[sl] = fgsm(model, images[sl], labels[sl], config.epsilon, prep)
        else:
            out[sl] = pgd(model, images[sl], labels[sl], config.epsilon, config.alpha, config.steps, prep)
    return out


def robustness_eval(model, dataset, attacks, prep, tta=None, pool=None, tag="model"):
    """Accuracy table: one row per evaluation mode, columns ``clean`` plus one per attack.

    Adversarial images are generated once per attack and shared by the plain
    and TTA rows.
    """
    columns = ["clean"] + [a.kind for a in attacks]
    if len(set(columns)) != len(columns):
        raise ConfigError("each attack kind may appear once")
    attacked = [None] + [attack(model, dataset.images, dataset.labels, a, prep) for a in attacks]
    rows = [{"model": tag, **{c: plain_evaluate(model, dataset, prep, x)[0] for c, x in zip(columns, attacked)}}]
    if tta is not None:
        if pool is None:
            raise ShapeError("TTA evaluation needs a co-sample pool")
        rows.append({"model": f"{tag}+tta",
                     **{c: tta_evaluate(model, dataset, pool, tta, prep, x)[0] for c, x in zip(columns, attacked)}})
    return columns, rows


def write_robustness_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model"] + columns)
        for row in rows:
            writer.writerow([row["model"]] + [repr(float(row[c])) for c in columns])
