"""pxiq: a desk-scale laboratory for perceptually optimized learned image compression."""

__version__ = "0.1.0"

from .autograd import Tensor

__all__ = ["Tensor", "__version__"]
