from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class PreprocessConfig:
    """Normalization constants and train-time augmentation settings.

    Empty ``mean``/``std`` means no normalization. Flip and crop only apply to
    ``(channels, height, width)`` samples.
    """

    mean: tuple = ()
    std: tuple = ()
    flip_prob: float = 0.0
    crop_padding: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if len(self.mean) != len(self.std):
            raise ConfigError("mean and std need the same number of channels")
        if any(s <= 0 for s in self.std):
            raise ConfigError("std entries must be positive")
        if self.crop_padding < 0:
            raise ConfigError("crop padding must be non-negative")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError("flip probability must lie in [0, 1]")


def hflip(batch):
    return batch[..., ::-1].copy()


def normalize(batch, config):
    if not config.mean:
        return batch
    shape = (1, len(config.mean)) + (1,) * (batch.ndim - 2)
    mean = np.asarray(config.mean, dtype=batch.dtype).reshape(shape)
    std = np.asarray(config.std, dtype=batch.dtype).reshape(shape)
    return (batch - mean) / std


def random_crop(batch, padding, rng):
    if not padding:
        return batch
    m, _, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    offsets = rng.integers(0, 2 * padding + 1, size=(m, 2))
    out = np.empty_like(batch)
    for i, (dy, dx) in enumerate(offsets):
        out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    return out


def random_flip(batch, prob, rng):
    if prob <= 0:
        return batch
    mask = rng.random(len(batch)) < prob
    out = batch.copy()
    out[mask] = out[mask][..., ::-1]
    return out


def preprocess(batch, config, rng=None, train_mode=False):
    """Crop and flip (train mode only), then normalize. Returns a new array."""
    batch = np.asarray(batch)
    if train_mode and batch.ndim == 4 and (config.crop_padding or config.flip_prob > 0):
        if rng is None:
            raise ValueError("train-mode augmentation needs an rng")
        batch = random_crop(batch, config.crop_padding, rng)
        batch = random_flip(batch, config.flip_prob, rng)
    out = normalize(batch, config)
    return out.copy() if out is batch else out
