"""2-D convolution and transposed convolution (NCHW, square kernels)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hsaw.autodiff.tensor import Tensor, as_tensor, make_result
from hsaw.errors import ShapeError


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def deconv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size - 1) * stride - 2 * pad + k


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, Ho, Wo, C*k*k) patch matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * k * k)


def _col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patches back onto (N, C, H, W)."""
    n, c, h, w = shape
    ho, wo = cols.shape[1], cols.shape[2]
    cols = cols.reshape(n, ho, wo, c, k, k)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        hi = i + stride * (ho - 1) + 1
        for j in range(k):
            wj = j + stride * (wo - 1) + 1
            out[:, :, i:hi:stride, j:wj:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


def _check_conv(x: np.ndarray, w: np.ndarray, b, stride: int, pad: int, op: str, cin_axis: int):
    if x.ndim != 4:
        raise ShapeError(f"{op}: input must be N x C x H x W, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"{op}: weight must be 4-d with a square kernel, got shape {w.shape}")
    if x.shape[1] != w.shape[cin_axis]:
        raise ShapeError(
            f"{op}: input channels C_in={x.shape[1]} do not match weight dim "
            f"{cin_axis} = {w.shape[cin_axis]} (weight shape {w.shape})"
        )
    if stride < 1 or pad < 0:
        raise ShapeError(f"{op}: need stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    cout = w.shape[1 - cin_axis]
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"{op}: bias shape {b.shape} does not match C_out={cout}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N, C_in, H, W) with ``weight`` (C_out, C_in, k, k)."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    _check_conv(x.data, weight.data, None if bias is None else bias.data, stride, pad, "conv2d", 1)
    n, cin, h, w = x.shape
    cout, _, k, _ = weight.shape
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(f"conv2d: spatial dims H={h}, W={w} too small for k={k} with pad={pad}")
    cols = _im2col(x.data, k, stride, pad)
    ho, wo = cols.shape[1], cols.shape[2]
    wmat = weight.data.reshape(cout, -1)
    out = cols.reshape(-1, wmat.shape[1]) @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _col2im((gmat @ wmat).reshape(n, ho, wo, -1), x.shape, k, stride, pad)
        if weight.requires_grad:
            gw = (gmat.T @ cols.reshape(-1, wmat.shape[1])).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=0, dtype=np.float64).astype(bias.dtype)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def deconv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed convolution; ``weight`` is (C_in, C_out, k, k).

    Forward equals the input-gradient of :func:`conv2d` configured with the
    same weight, stride and padding.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    _check_conv(x.data, weight.data, None if bias is None else bias.data, stride, pad, "deconv2d", 0)
    n, cin, h, w = x.shape
    _, cout, k, _ = weight.shape
    ho, wo = deconv_output_size(h, k, stride, pad), deconv_output_size(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"deconv2d: output dims would be {ho}x{wo} for input {h}x{w}, k={k}, pad={pad}")
    wmat = weight.data.reshape(cin, -1)  # (C_in, C_out*k*k)
    xmat = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    cols = (xmat @ wmat).reshape(n, h, w, -1)
    out = _col2im(cols, (n, cout, ho, wo), k, stride, pad)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g):
        gcols = _im2col(g, k, stride, pad).reshape(-1, wmat.shape[1])
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx)
        if weight.requires_grad:
            gw = (xmat.T @ gcols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3), dtype=np.float64).astype(bias.dtype)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)
