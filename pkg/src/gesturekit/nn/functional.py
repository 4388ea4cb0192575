"""Stateless array kernels for the layer stack.

All image tensors are NHWC. Kernels accept any floating dtype and compute in
that dtype, so float64 inputs give float64 gradients for finite-difference
checks.
"""
from __future__ import annotations

import math

import numpy as np


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Return ``(out, pad_before, pad_after)`` for one spatial axis.

    ``same`` follows the TensorFlow convention: ``out = ceil(size / stride)``
    with any odd padding placed after the data.
    """
    if padding == "valid":
        if size < kernel:
            raise ValueError(f"input size {size} smaller than kernel {kernel}")
        return (size - kernel) // stride + 1, 0, 0
    if padding == "same":
        out = math.ceil(size / stride)
        total = max((out - 1) * stride + kernel - size, 0)
        return out, total // 2, total - total // 2
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + hspan:stride, j:j + wspan:stride, :]
    return cols.reshape(n * ho * wo, kh * kw * c)


def _pad(x: np.ndarray, ph: tuple[int, int], pw: tuple[int, int]) -> np.ndarray:
    if ph == (0, 0) and pw == (0, 0):
        return x
    return np.pad(x, ((0, 0), ph, pw, (0, 0)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                   stride: int = 1, padding: str = "same") -> np.ndarray:
    """Cross-correlate ``x`` (N,H,W,Cin) with ``w`` (kh,kw,Cin,Cout)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"expected 4-D input and kernel, got {x.shape} and {w.shape}")
    kh, kw, cin, cout = w.shape
    n, h, wd, c = x.shape
    if c != cin:
        raise ValueError(f"input has {c} channels, kernel expects {cin}")
    ho, pt, pb = conv_output_size(h, kh, stride, padding)
    wo, pl, pr = conv_output_size(wd, kw, stride, padding)
    if kh == 1 and kw == 1 and (pt, pb, pl, pr) == (0, 0, 0, 0):
        y = x[:, ::stride, ::stride, :].reshape(-1, cin) @ w.reshape(cin, cout)
        y = y.reshape(n, ho, wo, cout)
    elif stride == 1:
        y = _shift_conv(_pad(x, (pt, pb), (pl, pr)), w, ho, wo)
    else:
        cols = _im2col(_pad(x, (pt, pb), (pl, pr)), kh, kw, stride, ho, wo)
        y = (cols @ w.reshape(kh * kw * cin, cout)).reshape(n, ho, wo, cout)
    if b is not None:
        y += b
    return y


def _tap_offsets(kh: int, kw: int, row: int) -> list[tuple[int, int, int]]:
    return [(i, j, i * row + j) for i in range(kh) for j in range(kw)]


def _shift_conv(xp: np.ndarray, w: np.ndarray, ho: int, wo: int) -> np.ndarray:
    # Stride-1 convolution on the flattened padded image: output pixel p reads
    # input pixel p + i*Wp + j for tap (i, j), so each tap is one contiguous
    # row block and one GEMM. Rows that straddle image borders are discarded.
    n, hp, wp, cin = xp.shape
    kh, kw, _, cout = w.shape
    xf = xp.reshape(n * hp * wp, cin)
    taps = _tap_offsets(kh, kw, wp)
    m = xf.shape[0] - taps[-1][2]
    yf = np.zeros((n * hp * wp, cout), dtype=np.result_type(xp, w))
    for i, j, off in taps:
        yf[:m] += xf[off:off + m] @ w[i, j]
    return yf.reshape(n, hp, wp, cout)[:, :ho, :wo]


def conv2d_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int = 1,
                    padding: str = "same", need_bias: bool = True):
    """Gradients of :func:`conv2d_forward` w.r.t. ``x``, ``w`` and ``b``.

    The im2col matrix is rebuilt here rather than cached; it is the largest
    intermediate by far and holding one per layer does not fit in memory at
    128x128 resolution.
    """
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    ho, pt, pb = conv_output_size(h, kh, stride, padding)
    wo, pl, pr = conv_output_size(wd, kw, stride, padding)
    d2 = dout.reshape(-1, cout)
    db = d2.sum(axis=0) if need_bias else None

    if kh == 1 and kw == 1 and (pt, pb, pl, pr) == (0, 0, 0, 0):
        cols = x[:, ::stride, ::stride, :].reshape(-1, cin)
        dw = (cols.T @ d2).reshape(w.shape)
        dsub = (d2 @ w.reshape(cin, cout).T).reshape(n, ho, wo, cin)
        if stride == 1:
            return dsub, dw, db
        dx = np.zeros_like(x)
        dx[:, ::stride, ::stride, :] = dsub
        return dx, dw, db

    xp = _pad(x, (pt, pb), (pl, pr))
    if stride == 1:
        return _shift_conv_backward(d2.reshape(n, ho, wo, cout), xp, w, (pt, pl), (h, wd)) + (db,)
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    dw = (cols.T @ d2).reshape(w.shape)
    del cols
    dcols = (d2 @ w.reshape(kh * kw * cin, cout).T).reshape(n, ho, wo, kh, kw, cin)
    dxp = np.zeros(xp.shape, dtype=x.dtype)
    hspan = stride * (ho - 1) + 1
    wspan = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + hspan:stride, j:j + wspan:stride, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, pt:pt + h, pl:pl + wd, :]
    return dx, dw, db


def _shift_conv_backward(dout, xp, w, origin, hw):
    n, hp, wp, cin = xp.shape
    kh, kw, _, cout = w.shape
    ho, wo = dout.shape[1:3]
    dyp = np.zeros((n, hp, wp, cout), dtype=dout.dtype)
    dyp[:, :ho, :wo] = dout
    dyf = dyp.reshape(-1, cout)
    xf = xp.reshape(-1, cin)
    taps = _tap_offsets(kh, kw, wp)
    m = xf.shape[0] - taps[-1][2]
    dw = np.empty(w.shape, dtype=np.result_type(xp, dout))
    dxf = np.zeros_like(xf)
    for i, j, off in taps:
        dw[i, j] = xf[off:off + m].T @ dyf[:m]
        dxf[off:off + m] += dyf[:m] @ w[i, j].T
    pt, pl = origin
    h, wd = hw
    return dxf.reshape(n, hp, wp, cin)[:, pt:pt + h, pl:pl + wd], dw


def maxpool2d_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    """2x2/stride-2 max pooling.

    Odd spatial sizes are padded on the right/bottom by replicating the last
    row/column. Returns the pooled array, the winning flat window index
    (0..3, raster order, first occurrence wins) and the original H, W.
    """
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        x = np.pad(x, ((0, 0), (0, h % 2), (0, w % 2), (0, 0)), mode="edge")
    hp, wp = x.shape[1] // 2, x.shape[2] // 2
    win = x.reshape(n, hp, 2, wp, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, hp, wp, c, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx, (h, w)


def maxpool2d_backward(dout: np.ndarray, idx: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    n, hp, wp, c = dout.shape
    onehot = (idx[..., None] == np.arange(4)).astype(dout.dtype) * dout[..., None]
    dx = onehot.reshape(n, hp, wp, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * hp, 2 * wp, c)
    h, w = hw
    if (h, w) == dx.shape[1:3]:
        return dx
    # fold gradient of replicated edge back onto the last real row/column
    if h % 2:
        dx[:, h - 1] += dx[:, h]
    if w % 2:
        dx[:, :, w - 1] += dx[:, :, w]
    return dx[:, :h, :w]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_crossentropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. ``logits``.

    For a single row the gradient is ``softmax - onehot``; batched gradients
    are divided by the batch size to match the mean.
    """
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n
