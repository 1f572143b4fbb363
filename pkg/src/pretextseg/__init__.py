"""Semi-supervised segmentation sandbox with self-supervised pretext tasks.

A small, fully deterministic training system: one shared convolutional
encoder, per-task decoder heads, four pretext transforms for unlabeled
images, from-scratch reverse-mode autodiff, and confusion-matrix mIoU
evaluation. Everything runs on the CPU in float64 so that gradients and
metrics can be verified against independent oracles.
"""

from .tensor import Tensor, Tape, grad_check

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "grad_check", "__version__"]
