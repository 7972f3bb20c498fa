"""Dense float64 array arithmetic: matmul, activations, stable softmax.

All arrays are row-major 64-bit floats (numpy ndarrays).  Every function is
pure: identical inputs give bitwise-identical outputs.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeError

# Sigmoid argument clip; exp(-60) ~ 8.8e-27 is far below float64 resolution
# of 1, so clipping changes no representable output value.
_SIGMOID_CLIP = 60.0


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a 2-D pair with 64-bit accumulation."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -_SIGMOID_CLIP, _SIGMOID_CLIP)))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


_ELEMENTWISE = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(x: np.ndarray, f: str) -> np.ndarray:
    """Apply one of {tanh, sigmoid, relu} per element; rejects non-finite input."""
    if f not in _ELEMENTWISE:
        raise DomainError(f"unknown elementwise function {f!r}; expected one of {sorted(_ELEMENTWISE)}")
    x = as_tensor(x)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"elementwise({f}) requires finite input")
    return _ELEMENTWISE[f](x)


def softmax(e: np.ndarray, axis: int = -1) -> np.ndarray:
    """Normalized exponentials along `axis`, stabilized by max subtraction."""
    e = as_tensor(e)
    if e.size == 0 or e.shape[axis] == 0:
        raise DomainError("softmax of an empty input is undefined")
    shifted = e - np.max(e, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)
