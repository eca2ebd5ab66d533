"""Desk-scale video human mesh recovery with a ViT encoder.

Per-frame kinematic feature vectors are stacked into a time-by-channel
feature image, columns are reordered by a learnable channel rearranging
matrix, the image is patchified and encoded by a small vision transformer,
and an iterative regressor predicts body pose, shape, and camera for the
middle frame.  Everything runs on a from-scratch float64 autodiff tape so
every gradient can be checked against finite differences.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, matmul, softmax_rows
from .gradcheck import grad_check

__all__ = ["Tape", "Tensor", "matmul", "softmax_rows", "grad_check", "__version__"]
