"""Numpy convolutional network with explicit backpropagation."""

from .checkpoint import CheckpointError, load, save
from .layers import Conv2d, GlobalAvgPool, Linear, ReLU, log_softmax, softmax
from .model import ArchSpec, ConvBackbone, ModeSet, TrajectoryNet, forward

__all__ = [
    "ArchSpec",
    "CheckpointError",
    "Conv2d",
    "ConvBackbone",
    "GlobalAvgPool",
    "Linear",
    "ModeSet",
    "ReLU",
    "TrajectoryNet",
    "forward",
    "load",
    "log_softmax",
    "save",
    "softmax",
]
