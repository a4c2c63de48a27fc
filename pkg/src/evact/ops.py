"""Forward/backward primitives for the network.

Every operation is a pure function over float64 numpy arrays and comes
with an explicit, hand-derived backward. There is no tape: callers keep
whatever forward state the backward needs and wire the reverse pass by
hand, which keeps each Jacobian testable in isolation against the
finite-difference oracle in ``evact.gradcheck``.

Backward convention: ``*_backward(gy, ...)`` takes the gradient of the
loss w.r.t. the op output and returns gradients w.r.t. the inputs, in
input order.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import ConfigError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


# -- matmul -----------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rank-2 matrix product [m,k] x [k,n] -> [m,n]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not agree: {a.shape} x {b.shape}")
    return a @ b


def matmul_backward(gy, a, b):
    return gy @ b.T, a.T @ gy


# -- elementwise ------------------------------------------------------------

def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum of two same-shape arrays."""
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    return a + b


def add_backward(gy):
    return gy, gy


def bias_add(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Add a length-d bias vector to every row of [n,d]."""
    if x.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"bias_add shapes do not agree: {x.shape} + {b.shape}")
    return x + b


def bias_add_backward(gy):
    return gy, gy.sum(axis=0)


def scale(x: np.ndarray, s: float) -> np.ndarray:
    """Multiply by a constant scalar."""
    return x * s


def scale_backward(gy, s: float):
    return gy * s


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(gy, x):
    return gy * (x > 0.0)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) Gaussian error linear unit."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(gy, x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return gy * (cdf + x * pdf)


# -- shape ops ---------------------------------------------------------------

def reshape(x: np.ndarray, shape) -> np.ndarray:
    return x.reshape(shape)


def reshape_backward(gy, x_shape):
    return gy.reshape(x_shape)


def transpose(x: np.ndarray, axes) -> np.ndarray:
    return np.transpose(x, axes)


def transpose_backward(gy, axes):
    return np.transpose(gy, np.argsort(axes))


def concat(parts, axis: int) -> np.ndarray:
    """Concatenate arrays along ``axis``."""
    return np.concatenate(parts, axis=axis)


def concat_backward(gy, sizes, axis: int):
    """Split ``gy`` back into pieces of the given sizes along ``axis``."""
    return np.split(gy, np.cumsum(sizes)[:-1], axis=axis)


# -- reductions ---------------------------------------------------------------

def sum_axis(x: np.ndarray, axis: int) -> np.ndarray:
    return x.sum(axis=axis)


def sum_axis_backward(gy, x_shape, axis: int):
    return np.broadcast_to(np.expand_dims(gy, axis), x_shape).copy()


def mean_axis(x: np.ndarray, axis: int) -> np.ndarray:
    return x.mean(axis=axis)


def mean_axis_backward(gy, x_shape, axis: int):
    return sum_axis_backward(gy, x_shape, axis) / x_shape[axis]


# -- softmax ------------------------------------------------------------------

def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a rank-2 array, max-subtracted for stability."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects rank 2, got shape {x.shape}")
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(gy, y):
    # Jacobian-vector product: y * (gy - <gy, y> per row)
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


# -- layer norm ----------------------------------------------------------------

def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Per-row normalization of [n,d], scaled by gamma and shifted by beta.

    Uses population variance (1/d). Returns (y, cache) where cache feeds
    ``layer_norm_backward``.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm shapes do not agree: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    y = xhat * gamma + beta
    return y, (xhat, inv_std, gamma)


def layer_norm_backward(gy, cache):
    """Gradients w.r.t. (x, gamma, beta)."""
    xhat, inv_std, gamma = cache
    ggamma = (gy * xhat).sum(axis=0)
    gbeta = gy.sum(axis=0)
    gxhat = gy * gamma
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = inv_std * (gxhat - m1 - xhat * m2)
    return gx, ggamma, gbeta


# -- convolution ----------------------------------------------------------------

def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation of x [C,H,W] with w [O,C,kh,kw], no bias."""
    return kernels.conv2d_forward(x, w, stride, padding)


def conv2d_backward(gy, x, w, stride: int = 1, padding: int = 0, need_dx: bool = True):
    """Gradients w.r.t. (x, w); dx is None when need_dx is False."""
    return kernels.conv2d_backward(gy, x, w, stride, padding, need_dx)


def activation_pair(name: str):
    """Map an activation name to its (forward, backward) pair."""
    if name == "relu":
        return relu, relu_backward
    if name == "gelu":
        return gelu, gelu_backward
    raise ConfigError(f"unknown activation {name!r}, expected 'relu' or 'gelu'")
