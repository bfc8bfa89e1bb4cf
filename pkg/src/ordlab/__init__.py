"""ordlab: data-ordering and sum-augmentation experiments on a small numpy engine."""

__version__ = "0.1.0"
