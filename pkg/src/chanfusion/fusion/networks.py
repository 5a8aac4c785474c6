"""Network bodies used by the fusion graphs.

Every network maps a dict of input tensors to ``(output, hidden)``, where
``hidden`` is the output of the middle hidden layer (layer ceil(n/2) of n).
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from .. import nn
from ..nn import LayerSpec, Tensor


def middle_index(n_layers: int) -> int:
    """0-based index of hidden layer ceil(n/2)."""
    return math.ceil(n_layers / 2) - 1


class Network:
    """Base class: owns a flat ``params`` dict of named tensors."""

    params: dict[str, Tensor]

    def forward(self, inputs: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = None

    def layer_specs(self) -> list[LayerSpec]:
        raise NotImplementedError

    def _group(self, prefix: str) -> dict[str, Tensor]:
        n = len(prefix) + 1
        return {k[n:]: v for k, v in self.params.items() if k.startswith(prefix + ".")}


class MLP(Network):
    """Dense stack; every hidden layer is followed by LeakyReLU, the output layer is linear."""

    def __init__(self, key: str, n_in: int, hidden: Sequence[int], n_out: int, rng,
                 dtype=np.float64):
        self.key = key
        self.n_in, self.hidden, self.n_out = n_in, list(hidden), n_out
        self.params = {}
        widths = [n_in, *hidden, n_out]
        for k in range(len(widths) - 1):
            for name, t in nn.init.init_dense(rng, widths[k], widths[k + 1], dtype).items():
                self.params[f"dense{k}.{name}"] = t

    def run(self, x: Tensor) -> tuple[Tensor, Tensor]:
        mid = middle_index(len(self.hidden)) if self.hidden else None
        tap = x
        for k in range(len(self.hidden)):
            x = nn.leaky_relu(nn.dense(x, self._group(f"dense{k}")))
            if k == mid:
                tap = x
        out = nn.dense(x, self._group(f"dense{len(self.hidden)}"))
        return out, tap

    def forward(self, inputs):
        return self.run(inputs[self.key])

    def layer_specs(self):
        widths = [self.n_in, *self.hidden, self.n_out]
        return [LayerSpec("dense", widths[k], widths[k + 1]) for k in range(len(widths) - 1)]


class LSTMNet(Network):
    """Stacked LSTM over ``T_unit`` steps, then a dense layer on the last step's output."""

    def __init__(self, key: str, n_feat: int, hidden: Sequence[int], n_out: int, t_unit: int,
                 rng, dtype=np.float64):
        if t_unit < 1:
            raise ValueError("LSTM network needs T_unit >= 1")
        self.key = key
        self.n_feat, self.hidden, self.n_out, self.t_unit = n_feat, list(hidden), n_out, t_unit
        self.params = {}
        widths = [n_feat, *hidden]
        for k in range(len(hidden)):
            for name, t in nn.init.init_lstm(rng, widths[k], widths[k + 1], dtype).items():
                self.params[f"lstm{k}.{name}"] = t
        for name, t in nn.init.init_dense(rng, hidden[-1], n_out, dtype).items():
            self.params[f"out.{name}"] = t

    def forward(self, inputs):
        x = inputs[self.key]  # (N, T_unit, n_feat)
        if x.shape[1] != self.t_unit:
            raise ValueError(f"expected {self.t_unit} time steps, got {x.shape[1]}")
        seq = [x[:, t, :] for t in range(self.t_unit)]
        mid = middle_index(len(self.hidden))
        tap = None
        for k in range(len(self.hidden)):
            seq = nn.lstm_layer(seq, self._group(f"lstm{k}"))
            if k == mid:
                tap = seq[-1]
        return nn.dense(seq[-1], self._group("out")), tap

    def layer_specs(self):
        widths = [self.n_feat, *self.hidden]
        specs = [LayerSpec("lstm", widths[k], widths[k + 1], t_unit=self.t_unit)
                 for k in range(len(self.hidden))]
        return specs + [LayerSpec("dense", self.hidden[-1], self.n_out)]


def pool_window(h: int, w: int) -> tuple[int, int]:
    # 2x2 halving; an axis already down to 1 is left alone
    return (2 if h >= 2 else 1, 2 if w >= 2 else 1)


class RNet(Network):
    """Received-signal/pilot network.

    A dense stream reads xi(r); a conv stream reads the pilot matrix with real
    and imaginary parts stacked as two channels. Each conv is followed by
    LeakyReLU and 2x2 average pooling. The flattened conv output and the dense
    stream's last hidden output are merged by an internal fusion MLP (Fus0).
    """

    def __init__(self, rx_key: str, pilot_key: str, rx_dim: int, pilot_hw: tuple[int, int],
                 dense_hidden: Sequence[int], filters: Sequence[int], kernel: tuple[int, int],
                 fus_hidden: Sequence[int], n_out: int, rng, dtype=np.float64):
        self.rx_key, self.pilot_key = rx_key, pilot_key
        self.rx_dim, self.pilot_hw = rx_dim, tuple(pilot_hw)
        self.dense_hidden, self.filters, self.kernel = list(dense_hidden), list(filters), tuple(kernel)
        self.fus_hidden, self.n_out = list(fus_hidden), n_out
        self.params = {}
        widths = [rx_dim, *dense_hidden]
        for k in range(len(dense_hidden)):
            for name, t in nn.init.init_dense(rng, widths[k], widths[k + 1], dtype).items():
                self.params[f"rdense{k}.{name}"] = t
        chans = [2, *filters]
        for k in range(len(filters)):
            for name, t in nn.init.init_conv(rng, chans[k], chans[k + 1], kernel, dtype).items():
                self.params[f"conv{k}.{name}"] = t
        h, w = self.pilot_hw
        self._conv_hw = []
        for _ in filters:
            self._conv_hw.append((h, w))
            ph, pw = pool_window(h, w)
            h, w = h // ph, w // pw
        self.flat_dim = filters[-1] * h * w
        self.fus0 = MLP("fus0_in", dense_hidden[-1] + self.flat_dim, fus_hidden, n_out, rng, dtype)
        for k, v in self.fus0.params.items():
            self.params[f"fus0.{k}"] = v

    def forward(self, inputs):
        x = inputs[self.rx_key]
        for k in range(len(self.dense_hidden)):
            x = nn.leaky_relu(nn.dense(x, self._group(f"rdense{k}")))
        s = inputs[self.pilot_key]  # (N, 2, M, T_p)
        for k in range(len(self.filters)):
            s = nn.leaky_relu(nn.conv2d(s, self._group(f"conv{k}")))
            s = nn.avg_pool2d(s, pool_window(*s.shape[2:]))
        flat = s.reshape(s.shape[0], -1)
        return self.fus0.run(nn.concat([x, flat], axis=-1))

    def layer_specs(self):
        widths = [self.rx_dim, *self.dense_hidden]
        specs = [LayerSpec("dense", widths[k], widths[k + 1]) for k in range(len(self.dense_hidden))]
        chans = [2, *self.filters]
        kh, kw = self.kernel
        for k, (h, w) in enumerate(self._conv_hw):
            specs.append(LayerSpec("conv", h * w, kernel=kh * kw, c_in=chans[k], c_out=chans[k + 1]))
        return specs + self.fus0.layer_specs()
