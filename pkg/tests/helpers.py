"""Independent oracles shared by the unit and acceptance tests."""

from __future__ import annotations

import math

import numpy as np

from chanfusion.fusion import Dims
from chanfusion.nn import Tensor


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arr`` (mutated in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def grad_rel_error(build_loss, tensors: list[Tensor], h: float = 1e-5) -> float:
    """Max over tensors of max|analytic - numeric| / max|numeric|.

    ``build_loss()`` must construct a fresh scalar Tensor from ``tensors``.
    """
    for t in tensors:
        t.grad = None
    build_loss().backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numeric_grad(lambda: build_loss().item(), t.data, h)
        scale = max(np.abs(numeric).max(), 1e-12)
        worst = max(worst, float(np.abs(analytic - numeric).max() / scale))
    return worst


def dense_loop(x, w, b):
    n, k = x.shape
    out = np.zeros((n, w.shape[1]))
    for i in range(n):
        for j in range(w.shape[1]):
            acc = b[j]
            for q in range(k):
                acc += x[i, q] * w[q, j]
            out[i, j] = acc
    return out


def conv_loop(x, w, b):
    """Direct sliding-window same-padded cross-correlation."""
    n, c, hh, ww = x.shape
    f, _, kh, kw = w.shape
    out = np.zeros((n, f, hh, ww))
    for s in range(n):
        for o in range(f):
            for i in range(hh):
                for j in range(ww):
                    acc = b[o]
                    for ci in range(c):
                        for a in range(kh):
                            for bb in range(kw):
                                yi, xj = i + a - kh // 2, j + bb - kw // 2
                                if 0 <= yi < hh and 0 <= xj < ww:
                                    acc += w[o, ci, a, bb] * x[s, ci, yi, xj]
                    out[s, o, i, j] = acc
    return out


def lstm_step_scalar(x, y_prev, g_prev, p):
    """One LSTM step evaluated entry by entry with math.exp/math.tanh."""
    z = list(y_prev) + list(x)
    n_out = len(y_prev)

    def gate(name, j):
        w, b = p[f"w_{name}"], p[f"b_{name}"]
        return sum(w[q, j] * z[q] for q in range(len(z))) + b[j]

    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    y, g = [], []
    for j in range(n_out):
        i_ = sig(gate("i", j))
        f_ = sig(gate("f", j))
        o_ = sig(gate("o", j))
        g_ = f_ * g_prev[j] + i_ * math.tanh(gate("g", j))
        g.append(g_)
        y.append(o_ * math.tanh(g_))
    return np.array(y), np.array(g)


def mse_loop(pred, label):
    total = 0.0
    for v in range(pred.shape[0]):
        total += sum((pred[v, k] - label[v, k]) ** 2 for k in range(pred.shape[1]))
    return total / pred.shape[0]


# (stage, ((source, tap, width), ...)) at M=16, M_fb=12; Fus hidden tap is 512, branch taps 256
M, OUT, P_OUT, S_IN = 16, 32, 8, 32
STRUCTURE = {
    "{H}": [], "{L}": [], "{U}": [], "{P}": [], "{R}": [], "{S}": [],
    "{H,L}_d": [("Fus1", (("H", "output", OUT), ("L", "output", OUT)))],
    "{H,L}_f": [("Fus1", (("H", "hidden", 256), ("L", "hidden", 256)))],
    "{H,U}_d": [("Fus1", (("H", "output", OUT), ("U", "output", OUT)))],
    "{H,U}_f": [("Fus1", (("H", "hidden", 256), ("U", "hidden", 256)))],
    "{L,U}_d": [("Fus1", (("L", "output", OUT), ("U", "output", OUT)))],
    "{L,U}_f": [("Fus1", (("L", "hidden", 256), ("U", "hidden", 256)))],
    "{H,L,U}_d": [("Fus1", (("H", "output", OUT), ("L", "output", OUT), ("U", "output", OUT)))],
    "{H,L,U}_f": [("Fus1", (("H", "hidden", 256), ("L", "hidden", 256), ("U", "hidden", 256)))],
    "{H,L,U}_h1": [("Fus1", (("H", "hidden", 256), ("U", "hidden", 256))),
                   ("Fus2", (("Fus1", "output", OUT), ("L", "hidden", 256)))],
    "{H,L,U}_h2": [("Fus1", (("H", "hidden", 256), ("U", "hidden", 256))),
                   ("Fus2", (("Fus1", "hidden", 512), ("L", "hidden", 256)))],
    "{P,H}": [("Fus1", (("P", "output", P_OUT), ("H", "hidden", 256)))],
    "{P,H,U}": [("Fus1", (("P", "output", P_OUT), ("H", "hidden", 256))),
                ("Fus2", (("Fus1", "output", OUT), ("U", "hidden", 256)))],
    "{P,H,L,U}": [("Fus1", (("H", "hidden", 256), ("U", "hidden", 256))),
                  ("Fus2", (("Fus1", "hidden", 512), ("L", "hidden", 256))),
                  ("Fus3", (("Fus2", "output", OUT), ("P", "output", P_OUT)))],
    "{R,H,U}": [("Fus1", (("R", "output", OUT), ("H", "hidden", 256), ("U", "hidden", 256)))],
    "{R,H,L}": [("Fus1", (("H", "hidden", 256), ("R", "output", OUT), ("L", "output", OUT)))],
    "{R,H,L,U}": [("Fus1", (("H", "hidden", 256), ("U", "hidden", 256))),
                  ("Fus2", (("Fus1", "hidden", 512), ("L", "hidden", 256))),
                  ("Fus3", (("Fus2", "output", OUT), ("R", "output", OUT)))],
    "{S,R}": [("Fus1", (("S", "input", S_IN), ("R", "output", OUT)))],
    "{S,H}": [("Fus1", (("S", "output", OUT), ("H", "hidden", 256)))],
}
DIMS = Dims(m=M, m_fb=12, t_unit=3, t_p=16)


# full-scale sizes (M=64, T_unit=3, T_p=64, M_fb=48) and closed-form FLOPs of the default nets
FULL = Dims(m=64, m_fb=48, t_unit=3, t_p=64)
DEFAULT_FLOPS = {
    "H": 4 * 3 * 128 * 256 + 4 * 3 * 256 * 256 + 256 * 128,
    "L": 3 * 256 + 3 * 256 * 256 + 256 * 128,
    "U": 128 * 256 + 2 * 256 * 256 + 256 * 128,
    "P": 96 * 256 + 2 * 256 * 256 + 256 * 32,
    "S": 128 * 256 + 256 * 128,
    "R": (128 * 256 + 256 * 128 + 128 * 128
          + 64 * 64 * 25 * 2 * 16 + 32 * 32 * 25 * 16 * 32 + 16 * 16 * 25 * 32 * 8
          + (128 + 8 * 8 * 8) * 512 + 512 * 512 + 512 * 256 + 256 * 128),
}
