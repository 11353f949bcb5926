"""Dense float64 helpers shared by the numeric modules.

Matrices are plain ``numpy.ndarray`` objects, one example per row.
"""
import numpy as np
from scipy.special import expit

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


def as_matrix(x):
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError("as_matrix", a.shape)
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def sigmoid(x):
    """Elementwise logistic function; saturates cleanly for large ``|x|``."""
    out = expit(np.asarray(x, dtype=DTYPE))
    if out.ndim == 0:
        return float(out)
    return out


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def check_cols(op, x, n):
    if x.ndim != 2 or x.shape[1] != n:
        raise ShapeError(op, x.shape, ("*", n))
