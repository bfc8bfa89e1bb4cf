"""Small numpy neural-network engine with manual gradients."""

from .checkpoint import Checkpoint, restore, restore_into, snapshot, state_hash
from .losses import mixed_bce_loss, softmax, softmax_cross_entropy
from .model import ConvBlock, Model, ModelSpec, build_model, l2_norm
from .optim import SGD, sgd_step

__all__ = [
    "Checkpoint",
    "ConvBlock",
    "Model",
    "ModelSpec",
    "SGD",
    "build_model",
    "l2_norm",
    "mixed_bce_loss",
    "restore",
    "restore_into",
    "sgd_step",
    "snapshot",
    "softmax",
    "softmax_cross_entropy",
    "state_hash",
]
