"""Differentiable layer primitives: activations, dense, conv2d, pooling, LSTM, loss."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NonFiniteError, Tensor, as_tensor, concat

LEAKY_SLOPE = 0.2


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    """max(x, slope*x) element-wise."""
    a = x.data
    mask = a >= 0
    return Tensor._make(np.where(mask, a, slope * a), (x,),
                        lambda g: (np.where(mask, g, slope * g),))


def sigmoid(x: Tensor) -> Tensor:
    a = x.data
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),))


def dense(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Affine map ``x @ w + b`` for a batch of row vectors.

    ``params["w"]`` has shape (n_in, n_out); the column-vector convention
    ``w_d x + b_d`` is the transpose of this.
    """
    w, b = params["w"], params["b"]
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + b


def conv2d(x: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Same-padded 2-D cross-correlation.

    Parameters
    ----------
    x : Tensor
        Batch of shape (N, C_in, H, W).
    params : mapping
        ``w`` of shape (C_out, C_in, kh, kw) with odd kernel sides, ``b`` of
        shape (C_out,).

    Returns
    -------
    Tensor
        Shape (N, C_out, H, W).
    """
    w, b = params["w"], params["b"]
    if x.ndim != 4:
        raise ValueError(f"conv2d expects (N, C, H, W), got {x.shape}")
    c_out, c_in, kh, kw = w.shape
    if x.shape[1] != c_in:
        raise ValueError(f"conv2d: {x.shape[1]} input channels, kernel expects {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d needs odd kernel sides for same padding")
    ph, pw = kh // 2, kw // 2
    n, _, h, wd = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (N, C, H, W, kh, kw)
    wt = w.data
    out = np.einsum("nchwij,fcij->nfhw", win, wt, optimize=True) + b.data[None, :, None, None]

    def backward(g):
        dw = np.einsum("nchwij,nfhw->fcij", win, g, optimize=True)
        db = g.sum(axis=(0, 2, 3))
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + h, j:j + wd] += np.einsum("nfhw,fc->nchw", g, wt[:, :, i, j],
                                                          optimize=True)
        return dxp[:, :, ph:ph + h, pw:pw + wd], dw, db

    return Tensor._make(out, (x, w, b), backward)


def avg_pool2d(x: Tensor, size: tuple[int, int] = (2, 2)) -> Tensor:
    """Non-overlapping average pooling; trailing rows/cols that do not fill a window are dropped."""
    kh, kw = size
    n, c, h, w = x.shape
    if h < kh or w < kw:
        raise ValueError(f"avg_pool2d: spatial dims {(h, w)} smaller than window {size}")
    ho, wo = h // kh, w // kw
    a = x.data[:, :, :ho * kh, :wo * kw].reshape(n, c, ho, kh, wo, kw)
    out = a.mean(axis=(3, 5))

    def backward(g):
        full = np.zeros_like(x.data)
        spread = np.repeat(np.repeat(g, kh, axis=2), kw, axis=3) / (kh * kw)
        full[:, :, :ho * kh, :wo * kw] = spread
        return (full,)

    return Tensor._make(out, (x,), backward)


GATES = ("i", "f", "o", "g")


def lstm_layer(xs: Sequence[Tensor], params: Mapping[str, Tensor]) -> list[Tensor]:
    """Run one LSTM layer over a sequence and return every step's output.

    Each gate sees the concatenation ``[y_prev, x_t]``::

        i = sig(w_i [y_prev, x] + b_i)      f = sig(w_f [...] + b_f)
        o = sig(w_o [...] + b_o)
        g = f * g_prev + i * tanh(w_g [...] + b_g)
        y = o * tanh(g)

    with zero initial output and cell state. Weights ``w_<gate>`` have shape
    (n_out + n_in, n_out).
    """
    if len(xs) == 0:
        raise ValueError("lstm_layer needs at least one time step")
    n_out = params["w_i"].shape[1]
    n_in = xs[0].shape[-1]
    if params["w_i"].shape[0] != n_out + n_in:
        raise ValueError(f"lstm_layer: weight rows {params['w_i'].shape[0]} != {n_out}+{n_in}")
    batch = xs[0].shape[0]
    dtype = params["w_i"].dtype
    y = Tensor(np.zeros((batch, n_out), dtype=dtype))
    cell = Tensor(np.zeros((batch, n_out), dtype=dtype))
    outs = []
    for x in xs:
        if x.shape[-1] != n_in:
            raise ValueError("lstm_layer: all steps must share the feature width")
        z = concat([y, x], axis=-1)
        i = sigmoid(z @ params["w_i"] + params["b_i"])
        f = sigmoid(z @ params["w_f"] + params["b_f"])
        o = sigmoid(z @ params["w_o"] + params["b_o"])
        cell = f * cell + i * tanh(z @ params["w_g"] + params["b_g"])
        y = o * tanh(cell)
        outs.append(y)
    return outs


def mse_loss(pred: Tensor, label) -> Tensor:
    """Batch mean of squared L2 norms, (1/V) * sum_v ||pred_v - label_v||^2."""
    label = as_tensor(label, pred.dtype)
    if pred.shape != label.shape:
        raise ValueError(f"mse_loss shape mismatch: {pred.shape} vs {label.shape}")
    if pred.ndim == 0 or pred.shape[0] == 0:
        raise ValueError("mse_loss needs a batch of at least one sample")
    diff = pred - label
    loss = (diff * diff).sum() * (1.0 / pred.shape[0])
    if not np.isfinite(loss.data):
        raise NonFiniteError("loss is not finite")
    return loss
