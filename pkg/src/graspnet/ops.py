"""Forward/backward pairs for the layers GraspNet is built from.

Tensors are plain numpy arrays in ``N x C x H x W`` layout. Every op keeps the
dtype of its input, so the training path runs in float32 while gradient tests
can push float64 arrays through the very same code.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import InvalidShapeError, NonFiniteError

BCE_EPS = 1e-7


def _check_finite(a: np.ndarray, name: str) -> np.ndarray:
    # a single reduction is far cheaper than isfinite() over the whole array
    # and NaN/Inf anywhere poisons the sum
    with np.errstate(over="ignore", invalid="ignore"):
        total = a.sum(dtype=np.float64)
    if not np.isfinite(total) and not np.isfinite(a).all():
        raise NonFiniteError(f"{name}: non-finite values")
    return a


def _require_4d(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise InvalidShapeError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """Patch matrix of shape (N, C*k*k, Ho*Wo) plus the output extent."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if k == 1 and stride == 1 and padding == 0:
        return x.reshape(n, c, h * w), ho, wo
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sn, sc, sh, sw = x.strides
    view = as_strided(
        x,
        shape=(n, c, k, k, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(n, c * k * k, ho * wo), ho, wo


def _col2im(cols: np.ndarray, shape, k: int, stride: int, padding: int, ho: int, wo: int):
    """Adjoint of _im2col: scatter-add patch gradients back onto the input."""
    n, c, h, w = shape
    if k == 1 and stride == 1 and padding == 0:
        return cols.reshape(shape)
    cols = cols.reshape(n, c, k, k, ho, wo)
    # taps sharing a stride phase land on one contiguous sub-grid, which is
    # much cheaper to accumulate into than strided views of the full image
    extra = (k - 1) // stride
    phases = {}
    for i in range(k):
        for j in range(k):
            key = (i % stride, j % stride)
            acc = phases.get(key)
            if acc is None:
                acc = phases[key] = np.zeros((n, c, ho + extra, wo + extra), dtype=cols.dtype)
            acc[:, :, i // stride:i // stride + ho, j // stride:j // stride + wo] += cols[:, :, i, j]
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for (a, b), acc in phases.items():
        dst = out[:, :, a::stride, b::stride]
        rh = min(dst.shape[2], acc.shape[2])
        rw = min(dst.shape[3], acc.shape[3])
        dst[:, :, :rh, :rw] = acc[:, :, :rh, :rw]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return out


def _check_conv_args(x, kernel, bias, stride, padding):
    _require_4d(x, "conv input")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise InvalidShapeError(f"kernel must be (Cout, Cin, k, k), got {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise InvalidShapeError(
            f"input has {x.shape[1]} channels but kernel expects {kernel.shape[1]}")
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise InvalidShapeError(f"bias shape {bias.shape} does not match {kernel.shape[0]} filters")
    if stride < 1 or padding < 0:
        raise InvalidShapeError("stride must be >= 1 and padding >= 0")
    k = kernel.shape[2]
    if k > x.shape[2] + 2 * padding or k > x.shape[3] + 2 * padding:
        raise InvalidShapeError(f"kernel {k}x{k} larger than padded input {x.shape[2:]}")


def conv2d_forward_cols(x, kernel, bias, stride=1, padding=0):
    """conv2d_forward that also returns the patch matrix for reuse in backward."""
    _check_conv_args(x, kernel, bias, stride, padding)
    n = x.shape[0]
    cout, _, k, _ = kernel.shape
    cols, ho, wo = _im2col(x, k, stride, padding)
    out = np.matmul(kernel.reshape(cout, -1), cols)
    if bias is not None:
        out += bias[None, :, None]
    out = out.reshape(n, cout, ho, wo)
    return _check_finite(out, "conv2d"), cols


def conv2d_forward(x, kernel, bias, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    ``x`` is (N, Cin, H, W), ``kernel`` (Cout, Cin, k, k), ``bias`` (Cout,).
    Output is (N, Cout, H', W') with H' = (H + 2*padding - k) // stride + 1.
    """
    return conv2d_forward_cols(x, kernel, bias, stride, padding)[0]


def conv2d_backward(grad_out, x, kernel, stride=1, padding=0, cols=None, need_input_grad=True):
    """Gradients of conv2d_forward w.r.t. input, kernel and bias.

    Pass ``cols`` from :func:`conv2d_forward_cols` to skip rebuilding the patch
    matrix. With ``need_input_grad=False`` the first return value is None.
    """
    _require_4d(x, "conv input")
    cout, cin, k, _ = kernel.shape
    n = x.shape[0]
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    if grad_out.shape != (n, cout, ho, wo):
        raise InvalidShapeError(
            f"grad_out shape {grad_out.shape} != forward output {(n, cout, ho, wo)}")
    if cols is None:
        cols, _, _ = _im2col(x, k, stride, padding)
    g = grad_out.reshape(n, cout, ho * wo)
    grad_kernel = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.shape)
    grad_bias = g.sum(axis=(0, 2))
    grad_input = None
    if need_input_grad:
        dcols = np.matmul(kernel.reshape(cout, -1).T, g)
        grad_input = _col2im(dcols, x.shape, k, stride, padding, ho, wo)
    return grad_input, grad_kernel, grad_bias


def avgpool_forward(x, window, stride):
    """Mean over ``window x window`` patches taken every ``stride`` pixels."""
    _require_4d(x, "pool input")
    n, c, h, w = x.shape
    if window > h or window > w or window < 1 or stride < 1:
        raise InvalidShapeError(f"pool window {window} does not fit spatial dims {(h, w)}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    if ho == 1 and wo == 1:
        return x[:, :, :window, :window].mean(axis=(2, 3), keepdims=True)
    sn, sc, sh, sw = x.strides
    view = as_strided(x, (n, c, ho, wo, window, window),
                      (sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)
    return view.mean(axis=(4, 5))


def avgpool_backward(grad_out, input_shape, window, stride):
    n, c, h, w = input_shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    if grad_out.shape != (n, c, ho, wo):
        raise InvalidShapeError(f"grad_out shape {grad_out.shape} != {(n, c, ho, wo)}")
    g = grad_out / (window * window)
    out = np.zeros(input_shape, dtype=grad_out.dtype)
    for i in range(window):
        for j in range(window):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g
    return out


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    """Gradient of relu given the op's input ``x`` (subgradient 0 at x == 0)."""
    return grad_out * (x > 0)


def sigmoid_forward(x):
    """Logistic function, clipped so outputs stay strictly inside (0, 1)."""
    x = np.asarray(x)
    dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(dtype, copy=False)
    info = np.finfo(dtype)
    return np.clip(out, info.tiny, 1 - info.epsneg)


def sigmoid_backward(grad_out, out):
    """Gradient of the sigmoid given its forward output."""
    return grad_out * out * (1 - out)


def bce_loss(predictions, targets):
    """Mean binary cross-entropy and its gradient w.r.t. ``predictions``.

    Predictions are clamped to ``[BCE_EPS, 1 - BCE_EPS]`` before the log.
    """
    p = np.asarray(predictions)
    t = np.asarray(targets, dtype=p.dtype)
    if p.shape != t.shape or p.ndim != 1:
        raise InvalidShapeError(f"predictions {p.shape} and targets {t.shape} must be equal 1-D")
    n = p.shape[0]
    pc = np.clip(p.astype(np.float64), BCE_EPS, 1 - BCE_EPS)
    tt = t.astype(np.float64)
    loss = -np.mean(tt * np.log(pc) + (1 - tt) * np.log(1 - pc))
    grad = ((pc - tt) / (pc * (1 - pc)) / n).astype(p.dtype)
    if not np.isfinite(loss):
        raise NonFiniteError("bce_loss: non-finite loss")
    return float(loss), grad
