"""Region/edge hybrid-pooling encoder-decoder segmentation engine."""

from .errors import (AutodiffError, ConfigError, DataError, NumericError,
                     RedaeError, ShapeError)
from .estimator import HybridPoolingSegmenter
from .tensor import Rng, Tape, Tensor4, backward, grad_check

__all__ = [
    "AutodiffError", "ConfigError", "DataError", "NumericError", "RedaeError",
    "ShapeError", "HybridPoolingSegmenter", "Rng", "Tape", "Tensor4",
    "backward", "grad_check",
]

__version__ = "0.1.0"
