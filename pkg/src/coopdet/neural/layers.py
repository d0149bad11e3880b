"""Forward/backward kernels for the layer types the networks need.

All tensors are (batch, channels, height, width). Convolutions are an im2col
patch matrix times the flattened kernel. Every output element is then one dot
product over the same (channel, tap) ordering, so a translated input produces
bit-identical translated outputs away from the borders; the fixel alignment
tests depend on this and check it directly.
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (C*k*k, N*H*W) patch matrix for a same-padded k x k kernel."""
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    cols = np.empty((c, k, k, n, h, w), dtype=x.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, dy, dx] = xp[:, :, dy:dy + h, dx:dx + w].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * h * w)


def col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int) -> np.ndarray:
    """Adjoint of ``im2col``: scatter-add patch gradients back to the input."""
    n, c, h, w = shape
    p = k // 2
    cols = cols.reshape(c, k, k, n, h, w)
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            xp[:, :, dy:dy + h, dx:dx + w] += cols[:, dy, dx].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(xp[:, :, p:p + h, p:p + w]) if p else xp


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-zero-padded stride-1 convolution, w is (out, in, k, k) with odd k.

    Returns (out, cols); ``cols`` is the patch matrix reused by the backward pass.
    """
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    if ci != c or k != k2 or k % 2 == 0:
        raise ValueError(f"conv weight {w.shape} incompatible with input {x.shape}")
    cols = im2col(x, k)
    out = w.reshape(o, -1) @ cols
    out += b[:, None]
    return np.ascontiguousarray(out.reshape(o, n, h, wd).transpose(1, 0, 2, 3)), cols


def conv2d_backward(dout: np.ndarray, cols: np.ndarray, x_shape, w: np.ndarray):
    """Returns (dx, dw, db)."""
    o, c, k, _ = w.shape
    d2 = dout.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (d2 @ cols.T).reshape(w.shape)
    db = d2.sum(axis=1)
    dx = col2im(w.reshape(o, -1).T @ d2, x_shape, k)
    return dx, dw, db


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling with stride 2. Returns (out, argmax mask)."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max pooling needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2)
    out = blocks.max(axis=(3, 5))
    # first maximum in raster order wins ties, so the gradient goes to one input only
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    return out, idx


def maxpool2_backward(dout: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = dout.shape
    grad = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(grad, idx[..., None], dout[..., None], axis=-1)
    grad = grad.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return grad.reshape(n, c, h2 * 2, w2 * 2)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool, track: bool = True,
                      momentum: float = BN_MOMENTUM):
    """Per-channel normalization. In train mode batch statistics are used and,
    when ``track`` is set, the running statistics are updated in place as
    ``r = momentum * r + (1 - momentum) * batch_stat``."""
    shape = (1, -1, 1, 1)
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if track:
            running_mean *= momentum
            running_mean += (1 - momentum) * mean.astype(running_mean.dtype)
            running_var *= momentum
            running_var += (1 - momentum) * var.astype(running_var.dtype)
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
    xhat = (x - mean.reshape(shape).astype(x.dtype)) * inv_std.reshape(shape)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out, (xhat, inv_std)


def batchnorm_backward(dout, cache, gamma):
    """Backward through train-mode batchnorm. Returns (dx, dgamma, dbeta)."""
    xhat, inv_std = cache
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    shape = (1, -1, 1, 1)
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma.reshape(shape)
    dx = (inv_std.reshape(shape) / m) * (
        m * dxhat - dxhat.sum(axis=(0, 2, 3)).reshape(shape) - xhat * (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
    )
    return dx, dgamma, dbeta


def leaky_relu_forward(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, x * x.dtype.type(LEAKY_SLOPE))


def leaky_relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dout, dout * dout.dtype.type(LEAKY_SLOPE))
