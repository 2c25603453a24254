"""forgelens: error-level analysis and small attention/conv models for
detecting recompression artifacts in images.

The quickest entry points are the estimator classes:

    from forgelens import ElaTransformer, NeuralClassifier, KnnClassifier

Lower layers (codec, autodiff, backbones, training engine, CLI) live in
their own submodules.
"""

__version__ = "0.1.0"

from . import autodiff
from .estimators import ElaTransformer, KnnClassifier, NeuralClassifier
from .exceptions import (
    CodecError,
    ConfigError,
    IntegrityError,
    ShapeError,
    TrainingAborted,
)

__all__ = [
    "__version__",
    "autodiff",
    "ElaTransformer",
    "KnnClassifier",
    "NeuralClassifier",
    "CodecError",
    "ConfigError",
    "IntegrityError",
    "ShapeError",
    "TrainingAborted",
]
