"""Dense float64 layer kernels: forward and backward passes for conv2d,
ReLU, max-pool, dense and softmax.

All functions are pure: they take arrays in, return arrays (plus explicit
caches for the backward passes) and never mutate their inputs. Everything
runs in float64; speed is secondary to gradient fidelity at this scale.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Input shapes incompatible with the requested operation."""


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Unfold [N,C,H,W] into columns [N, C*kh*kw, H'*W'] (cross-correlation order)."""
    n, c, h, w = x.shape
    oh = conv_output_extent(h, kh, stride, padding)
    ow = conv_output_extent(w, kw, stride, padding)
    if padding > 0:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
        writeable=False,
    )
    return windows.reshape(n, c * kh * kw, oh * ow).copy()


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Fold columns [N, C*kh*kw, H'*W'] back onto [N,C,H,W], summing overlaps."""
    n, c, h, w = x_shape
    oh = conv_output_extent(h, kh, stride, padding)
    ow = conv_output_extent(w, kw, stride, padding)
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    if padding > 0:
        out = out[:, :, padding : padding + h, padding : padding + w]
    return out


def conv2d_forward(x, weights, bias, stride: int = 1, padding: int = 0):
    """Cross-correlate [N,C,H,W] with [K,C,kh,kw] filters.

    Returns (output [N,K,H',W'], cache) where the cache feeds conv2d_backward.
    """
    x = _as_f64(x)
    weights = _as_f64(weights)
    bias = _as_f64(bias)
    if x.ndim != 4 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weights, got {x.shape} and {weights.shape}")
    n, c, h, w = x.shape
    k, cw, kh, kw = weights.shape
    if cw != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c} channels, weights expect {cw}")
    if bias.shape != (k,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({k},)")
    oh = conv_output_extent(h, kh, stride, padding)
    ow = conv_output_extent(w, kw, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, kernel {kh}x{kw}, "
                         f"stride {stride}, padding {padding}")
    cols = im2col(x, kh, kw, stride, padding)
    out = np.einsum("kd,ndp->nkp", weights.reshape(k, c * kh * kw), cols, optimize=True)
    out += bias[None, :, None]
    out = out.reshape(n, k, oh, ow)
    cache = (x.shape, cols, weights, stride, padding)
    return out, cache


def conv2d_backward(grad_out, cache):
    """Gradients of conv2d_forward wrt input, weights and bias."""
    x_shape, cols, weights, stride, padding = cache
    grad_out = _as_f64(grad_out)
    n = x_shape[0]
    k, c, kh, kw = weights.shape
    oh = conv_output_extent(x_shape[2], kh, stride, padding)
    ow = conv_output_extent(x_shape[3], kw, stride, padding)
    if grad_out.shape != (n, k, oh, ow):
        raise ShapeError(f"conv2d_backward grad shape {grad_out.shape} != {(n, k, oh, ow)}")
    g = grad_out.reshape(n, k, oh * ow)
    grad_w = np.einsum("nkp,ndp->kd", g, cols, optimize=True).reshape(weights.shape)
    grad_b = g.sum(axis=(0, 2))
    grad_cols = np.einsum("kd,nkp->ndp", weights.reshape(k, c * kh * kw), g, optimize=True)
    grad_x = col2im(grad_cols, x_shape, kh, kw, stride, padding)
    return grad_x, grad_w, grad_b


def relu_forward(x):
    x = _as_f64(x)
    return np.maximum(x, 0.0), x


def relu_backward(grad_out, cache):
    return np.where(cache > 0, grad_out, 0.0)


def maxpool2d_forward(x, size: int = 2, stride: int | None = None):
    """Max-pool [N,C,H,W] with a size x size window. Ties go to the first
    maximal element in row-major window order (argmax convention)."""
    x = _as_f64(x)
    if stride is None:
        stride = size
    n, c, h, w = x.shape
    oh = conv_output_extent(h, size, stride, 0)
    ow = conv_output_extent(w, size, stride, 0)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"maxpool window {size} does not fit input {x.shape}")
    s = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, oh, ow, size, size),
        strides=(s[0], s[1], s[2] * stride, s[3] * stride, s[2], s[3]),
        writeable=False,
    )
    flat = windows.reshape(n, c, oh, ow, size * size)
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    cache = (x.shape, idx, size, stride)
    return out, cache


def maxpool2d_backward(grad_out, cache):
    x_shape, idx, size, stride = cache
    grad_out = _as_f64(grad_out)
    n, c, h, w = x_shape
    oh, ow = idx.shape[2], idx.shape[3]
    if grad_out.shape != (n, c, oh, ow):
        raise ShapeError(f"maxpool backward grad shape {grad_out.shape} != {(n, c, oh, ow)}")
    grad_x = np.zeros(x_shape, dtype=np.float64)
    ii, jj = np.divmod(idx, size)
    ni, ci, oi, oj = np.indices(idx.shape)
    grad_flat_rows = oi * stride + ii
    grad_flat_cols = oj * stride + jj
    np.add.at(grad_x, (ni, ci, grad_flat_rows, grad_flat_cols), grad_out)
    return grad_x


def dense_forward(x, weights, bias):
    """Affine map: x [N,D] @ weights.T [D,U] + bias [U]."""
    x = _as_f64(x)
    weights = _as_f64(weights)
    bias = _as_f64(bias)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[1]:
        raise ShapeError(f"dense shape mismatch: input {x.shape}, weights {weights.shape}")
    out = x @ weights.T + bias
    return out, (x, weights)


def dense_backward(grad_out, cache):
    x, weights = cache
    grad_out = _as_f64(grad_out)
    if grad_out.shape != (x.shape[0], weights.shape[0]):
        raise ShapeError(f"dense backward grad shape {grad_out.shape}")
    grad_x = grad_out @ weights
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def flatten_forward(x):
    x = _as_f64(x)
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(grad_out, cache):
    return _as_f64(grad_out).reshape(cache)


def softmax(logits):
    """Numerically stable softmax along the last axis."""
    z = _as_f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = _as_f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
