import math
from dataclasses import dataclass

from ..errors import ConfigError, ShapeError

SCORERS = ("sample_loss", "max_loss_delta_same", "max_loss_delta_external")
STRATEGIES = ("ascending", "descending", "direct", "inverse")
ORDERING = ("ascending", "descending")


@dataclass(frozen=True)
class LearningItem:
    """A single sample (``kind="sample"``) or a mini-batch, addressed by dataset indices."""

    item_id: int
    kind: str
    indices: tuple

    def __post_init__(self):
        if self.kind not in ("sample", "batch"):
            raise ShapeError(f"unknown item kind {self.kind!r}")
        if not self.indices:
            raise ShapeError("learning item needs at least one index")
        if self.kind == "sample" and len(self.indices) != 1:
            raise ShapeError("a sample item holds exactly one index")
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def check_range(self, n):
        if min(self.indices) < 0 or max(self.indices) >= n:
            raise ShapeError(f"item {self.item_id} indexes outside a dataset of {n}")


@dataclass(frozen=True)
class ScoreRecord:
    item_id: int
    score: float
    scored_at_step: int

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ShapeError(f"score of item {self.item_id} is not finite")


@dataclass(frozen=True)
class LoaderConfig:
    scorer: str = "sample_loss"
    delta_mode: str = "absolute"
    reference_size: int = 512
    resample_reference: bool = True
    strategy: str = "ascending"
    kappa: int = 8
    rescore: str = "step"
    item_kind: str = "batch"
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.scorer not in SCORERS:
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        if self.delta_mode not in ("absolute", "relative"):
            raise ConfigError(f"unknown delta mode {self.delta_mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.rescore not in ("step", "epoch"):
            raise ConfigError(f"unknown rescore policy {self.rescore!r}")
        if self.item_kind not in ("sample", "batch"):
            raise ConfigError(f"unknown item kind {self.item_kind!r}")
        if self.kappa < 1:
            raise ConfigError("kappa must be at least 1")
        if self.reference_size < 1:
            raise ConfigError("reference size must be at least 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")

    @property
    def ordering(self):
        return self.strategy in ORDERING
