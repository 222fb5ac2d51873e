"""SDE-based flow matching for multivariate time-series generation."""

from .tensor import Tensor, attention, conv1d, moving_average, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "attention",
    "conv1d",
    "moving_average",
    "no_grad",
    "__version__",
]
