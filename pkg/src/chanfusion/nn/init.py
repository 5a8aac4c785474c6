"""Parameter initialisers (Glorot-uniform weights, zero biases)."""

from __future__ import annotations

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor
from .functional import GATES


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_dense(rng, n_in: int, n_out: int, dtype=DEFAULT_DTYPE) -> dict[str, Tensor]:
    return {
        "w": Tensor(_glorot(rng, (n_in, n_out), n_in, n_out, dtype), requires_grad=True),
        "b": Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True),
    }


def init_conv(rng, c_in: int, c_out: int, kernel=(5, 5), dtype=DEFAULT_DTYPE) -> dict[str, Tensor]:
    kh, kw = kernel
    fan_in, fan_out = c_in * kh * kw, c_out * kh * kw
    return {
        "w": Tensor(_glorot(rng, (c_out, c_in, kh, kw), fan_in, fan_out, dtype), requires_grad=True),
        "b": Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True),
    }


def init_lstm(rng, n_in: int, n_out: int, dtype=DEFAULT_DTYPE) -> dict[str, Tensor]:
    params = {}
    for gate in GATES:
        params[f"w_{gate}"] = Tensor(_glorot(rng, (n_out + n_in, n_out), n_out + n_in, n_out, dtype),
                                     requires_grad=True)
        bias = np.ones(n_out, dtype=dtype) if gate == "f" else np.zeros(n_out, dtype=dtype)
        params[f"b_{gate}"] = Tensor(bias, requires_grad=True)
    return params
