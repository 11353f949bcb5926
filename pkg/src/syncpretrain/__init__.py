"""Greedy and synchronized layer-wise pre-training of stacked autoencoders."""

from syncpretrain.linalg import ShapeError, matmul, sigmoid, sigmoid_grad

__version__ = "0.1.0"

__all__ = ["ShapeError", "matmul", "sigmoid", "sigmoid_grad", "__version__"]
