"""Dataset ingestion, subsetting, preprocessing and synthetic fixtures."""

from .dataset import Dataset, Sample, batch_split, subset_per_class
from .formats import load_cifar10, load_mnist_idx, write_cifar10, write_mnist_idx
from .synthetic import synthetic_blobs
from .transforms import PreprocessConfig, hflip, normalize, preprocess

__all__ = [
    "Dataset",
    "PreprocessConfig",
    "Sample",
    "batch_split",
    "hflip",
    "load_cifar10",
    "load_mnist_idx",
    "normalize",
    "preprocess",
    "subset_per_class",
    "synthetic_blobs",
    "write_cifar10",
    "write_mnist_idx",
]
