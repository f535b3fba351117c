"""Differentiable kernels: forward passes and hand-written backward passes.

Every kernel treats activations as float64 arrays in batch x channels x
height x width layout. Backward functions return gradients that match
:func:`segres.tensor.finite_diff_grad` to high precision; that agreement is
enforced by the gradcheck suite.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .validation import (
    DegenerateInputError,
    IndexingError,
    ShapeError,
    check_nchw,
)


@dataclass
class PoolIndices:
    """Argmax record of a 2x2 max-pool.

    ``argmax[n, c, i, j]`` is the flat row-major position (row * W + col)
    inside the source channel plane of the element that won window (i, j).
    """

    pooled_shape: tuple
    argmax: np.ndarray


@dataclass
class BatchNormState:
    """Per-channel affine parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    stat_momentum: float = 0.9


def _check_kernel(w: np.ndarray, x: np.ndarray, in_axis: int) -> None:
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be 4-d with square spatial dims, got {w.shape}")
    if w.shape[2] % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {w.shape[2]}")
    if w.shape[in_axis] != x.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels but kernel expects {w.shape[in_axis]}")


def _pad_same(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * p, w + 2 * p))
    out[:, :, p : h + p, p : w + p] = x
    return out


def conv_columns(x: np.ndarray, kernel_size: int) -> np.ndarray:
    """im2col of the zero-padded input as a (C*K*K, B*H*W) matrix.

    This layout keeps the batch/spatial axis contiguous, which makes both
    the copy and the subsequent matmul fast; it is shared between the
    forward pass and the weight-gradient pass.
    """
    b, c, h, w = x.shape
    k = kernel_size
    xp = _pad_same(x, k // 2)
    s = xp.strides
    view = as_strided(xp, (c, k, k, b, h, w), (s[1], s[2], s[3], s[0], s[2], s[3]))
    return np.ascontiguousarray(view).reshape(c * k * k, b * h * w)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 same-padding convolution: (B,Cin,H,W) x (Cout,Cin,K,K) -> (B,Cout,H,W).

    ``cols`` may carry a precomputed :func:`conv_columns` matrix for reuse
    across forward and backward.
    """
    check_nchw(x)
    _check_kernel(w, x, in_axis=1)
    bn, _, h, wd = x.shape
    co = w.shape[0]
    if b.shape != (co,):
        raise ShapeError(f"bias must have shape ({co},), got {b.shape}")
    if cols is None:
        cols = conv_columns(x, w.shape[2])
    y2 = w.reshape(co, -1) @ cols
    y = np.ascontiguousarray(y2.reshape(co, bn, h, wd).transpose(1, 0, 2, 3))
    y += b[None, :, None, None]
    return y


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray, cols: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. input, kernel, and bias."""
    bn, _, h, wd = x.shape
    co, ci, k, _ = w.shape
    if dy.shape != (bn, co, h, wd):
        raise ShapeError(f"upstream gradient shape {dy.shape} does not match output ({bn},{co},{h},{wd})")
    if cols is None:
        cols = conv_columns(x, k)
    db = dy.sum(axis=(0, 2, 3))
    dy_t = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)).reshape(co, bn * h * wd)
    dw = (dy_t @ cols.T).reshape(co, ci, k, k)
    # dL/dx is the correlation of dy with the spatially flipped, io-swapped kernel.
    dcols = conv_columns(dy, k)
    wf = flip_swap_kernel(w).reshape(ci, co * k * k)
    dx = np.ascontiguousarray((wf @ dcols).reshape(ci, bn, h, wd).transpose(1, 0, 2, 3))
    return dx, dw, db


def flip_swap_kernel(w: np.ndarray) -> np.ndarray:
    """Spatial 180-degree flip plus input/output channel swap (an involution)."""
    return np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))


def deconv(x: np.ndarray, w: np.ndarray, b: np.ndarray, cols: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 transposed convolution: (B,Cin,H,W) x (Cin,Cout,K,K) -> (B,Cout,H,W).

    At stride 1 with same padding this is exactly conv2d with the flipped,
    io-swapped kernel, so spatial size is preserved and only the channel
    count changes.
    """
    check_nchw(x)
    _check_kernel(w, x, in_axis=0)
    return conv2d(x, flip_swap_kernel(w), b, cols=cols)


def deconv_backward(
    x: np.ndarray, w: np.ndarray, dy: np.ndarray, cols: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dx, dwc, db = conv2d_backward(x, flip_swap_kernel(w), dy, cols=cols)
    return dx, flip_swap_kernel(dwc), db


def batchnorm(x: np.ndarray, state: BatchNormState, training: bool) -> tuple[np.ndarray, dict]:
    """Per-channel batch normalization.

    Training mode standardizes by batch statistics and folds them into the
    running estimates; inference mode uses the running estimates only. The
    returned cache feeds :func:`batchnorm_backward`.
    """
    check_nchw(x)
    c = x.shape[1]
    if state.gamma.shape != (c,) or state.beta.shape != (c,):
        raise ShapeError(f"batchnorm parameters sized for {state.gamma.shape[0]} channels, input has {c}")
    if training:
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise DegenerateInputError("training-mode batchnorm needs at least 2 elements per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = state.stat_momentum
        state.running_mean[...] = m * state.running_mean + (1.0 - m) * mean
        state.running_var[...] = m * state.running_var + (1.0 - m) * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = state.gamma[None, :, None, None] * xhat + state.beta[None, :, None, None]
    cache = {"xhat": xhat, "inv_std": inv_std, "gamma": state.gamma.copy(), "training": training}
    return y, cache


def batchnorm_backward(cache: dict, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input, gamma, and beta for the cached forward pass."""
    xhat = cache["xhat"]
    inv_std = cache["inv_std"]
    gamma = cache["gamma"]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma[None, :, None, None]
    if not cache["training"]:
        return dxhat * inv_std[None, :, None, None], dgamma, dbeta
    n = dy.shape[0] * dy.shape[2] * dy.shape[3]
    sum_dxhat = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    dx = (inv_std[None, :, None, None] / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return dx, dgamma, dbeta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # Subgradient at exactly 0 is defined as 0.
    return dy * (x > 0.0)


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, PoolIndices]:
    """Non-overlapping 2x2 max pool; ties go to the first element in row-major window order."""
    check_nchw(x)
    b, c, h, w = x.shape
    if h % 2 != 0 or w % 2 != 0:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    ph, pw = h // 2, w // 2
    windows = x.reshape(b, c, ph, 2, pw, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ph, pw, 4)
    local = windows.argmax(axis=4)
    y = np.take_along_axis(windows, local[..., None], axis=4)[..., 0]
    rows = 2 * np.arange(ph)[None, None, :, None] + local // 2
    cols = 2 * np.arange(pw)[None, None, None, :] + local % 2
    idx = PoolIndices(pooled_shape=(b, c, ph, pw), argmax=rows * w + cols)
    return y, idx


def maxpool2_backward(idx: PoolIndices, dy: np.ndarray) -> np.ndarray:
    """Route upstream gradient to the argmax positions, zero elsewhere."""
    b, c, ph, pw = idx.pooled_shape
    if dy.shape != idx.pooled_shape:
        raise IndexingError(f"gradient shape {dy.shape} does not match pooled shape {idx.pooled_shape}")
    dx = np.zeros((b, c, ph * 2 * pw * 2))
    np.put_along_axis(dx, idx.argmax.reshape(b, c, -1), dy.reshape(b, c, -1), axis=2)
    return dx.reshape(b, c, ph * 2, pw * 2)


def maxunpool2(y: np.ndarray, idx: PoolIndices, out_h: int, out_w: int) -> np.ndarray:
    """Place each pooled value back at its recorded argmax position."""
    check_nchw(y)
    if y.shape != idx.pooled_shape:
        raise IndexingError(f"input shape {y.shape} does not match recorded pooled shape {idx.pooled_shape}")
    b, c, ph, pw = idx.pooled_shape
    if out_h != 2 * ph or out_w != 2 * pw:
        raise IndexingError(f"output size {out_h}x{out_w} must be {2 * ph}x{2 * pw}")
    out = np.zeros((b, c, out_h * out_w))
    np.put_along_axis(out, idx.argmax.reshape(b, c, -1), y.reshape(b, c, -1), axis=2)
    return out.reshape(b, c, out_h, out_w)


def maxunpool2_backward(idx: PoolIndices, dout: np.ndarray) -> np.ndarray:
    """Gather the upstream gradient at the indexed positions."""
    b, c, ph, pw = idx.pooled_shape
    flat = dout.reshape(b, c, -1)
    dy = np.take_along_axis(flat, idx.argmax.reshape(b, c, -1), axis=2)
    return dy.reshape(b, c, ph, pw)


def fuse_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Residual fusion: elementwise sum of two same-shape maps."""
    if a.shape != b.shape:
        raise ShapeError(f"cannot fuse shapes {a.shape} and {b.shape}")
    return a + b


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Channel concatenation, a's channels first."""
    check_nchw(a)
    check_nchw(b)
    if a.shape[1] < 1 or b.shape[1] < 1:
        raise ShapeError("both inputs must have at least one channel")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"batch/spatial mismatch between {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(y: np.ndarray, first: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of concat_channels; also the backward gradient split."""
    if not 0 < first < y.shape[1]:
        raise ShapeError(f"split point {first} outside (0, {y.shape[1]})")
    return y[:, :first].copy(), y[:, first:].copy()


def softmax_pixels(x: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the channel axis, stabilized by max subtraction."""
    check_nchw(x)
    if x.shape[1] < 2:
        raise ShapeError(f"softmax needs at least 2 channels, got {x.shape[1]}")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_pixels_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Jacobian action of the per-pixel softmax: y * (dy - sum_c dy*y)."""
    s = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - s)
