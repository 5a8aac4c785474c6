from .tensor import NonFiniteError, Tensor, as_tensor, concat, no_grad, stack
from .functional import (avg_pool2d, conv2d, dense, leaky_relu, lstm_layer, mse_loss, sigmoid,
                         tanh)
from .optim import Adam, MissingGradientError
from .flops import LayerSpec, UnresolvedShapeError, flop_count
from . import init

__all__ = [
    "Tensor", "as_tensor", "concat", "stack", "no_grad", "NonFiniteError",
    "dense", "conv2d", "avg_pool2d", "lstm_layer", "leaky_relu", "sigmoid", "tanh", "mse_loss",
    "Adam", "MissingGradientError", "LayerSpec", "flop_count", "UnresolvedShapeError", "init",
]
