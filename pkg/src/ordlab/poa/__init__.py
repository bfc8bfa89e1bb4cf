"""Data-ordering framework: learning items, scorers, strategies and the loader."""

from .items import LearningItem, LoaderConfig, ScoreRecord
from .loader import Scorer, build_items, run_poa_training
from .scoring import make_external_reference, score_max_loss_delta, score_sample_loss
from .strategies import DEFAULT_EPSILON, order_next, sample_batch, sampling_probabilities, select_candidates

__all__ = [
    "DEFAULT_EPSILON",
    "LearningItem",
    "LoaderConfig",
    "ScoreRecord",
    "Scorer",
    "build_items",
    "make_external_reference",
    "order_next",
    "run_poa_training",
    "sample_batch",
    "sampling_probabilities",
    "score_max_loss_delta",
    "score_sample_loss",
    "select_candidates",
]
