"""Small float64 CNN engine with exact backpropagation."""

from . import checkpoint, functional
from .functional import (
    LabelOutOfRange,
    ShapeMismatch,
    activate,
    adaptive_avg_pool,
    conv2d,
    fully_connected,
    maxpool2d,
    softmax,
    softmax_cross_entropy,
)
from .layers import (
    Activation,
    AdaptiveAvgPool2d,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    Module,
    Param,
    Sequential,
    Sigmoid,
    Tanh,
    Upsample2x,
)
from .optim import OPTIMIZERS, Adadelta, Adagrad, Adam, Nadam, Optimizer, RMSprop, make_optimizer

__all__ = [
    "OPTIMIZERS", "Activation", "Adadelta", "Adagrad", "Adam", "AdaptiveAvgPool2d", "Conv2d", "Flatten",
    "GlobalAvgPool", "LabelOutOfRange", "Linear", "MaxPool2d", "Module", "Nadam", "Optimizer", "Param",
    "RMSprop", "Sequential", "ShapeMismatch", "Sigmoid", "Tanh", "Upsample2x", "activate",
    "adaptive_avg_pool", "checkpoint", "conv2d", "fully_connected", "functional", "make_optimizer",
    "maxpool2d", "softmax", "softmax_cross_entropy",
]
