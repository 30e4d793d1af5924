"""Anchor-free Siamese classification/regression tracking at desk scale."""
from .bbox import BBox
from .kernels import BACKEND
from .tensor import Tensor, Tape

__all__ = ["BBox", "BACKEND", "Tensor", "Tape"]
__version__ = "0.1.0"
