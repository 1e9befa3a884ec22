"""Minimal differentiable substrate for the window CNN and the task regressor."""
from .kernels import BACKEND
from .layers import (BatchNorm, Conv3x3, Dense, Flatten, Layer, MaxPool2, ReLU, ShapeError,
                     Softmax, build_layer, log_softmax)
from .network import (DESK_TRUNK, FULL_TRUNK, NAIVE_TRUNK, TRUNK_PRESETS, Adam, AdamState, Network,
                      adam_step, read_blobs, resolve_trunk, with_flatten, write_blobs)


def init_params(layers, input_shape, rng, dtype="float32"):
    """Build a network from layer descriptors with freshly drawn parameters."""
    return Network(layers, input_shape, rng, dtype)


__all__ = [
    "BACKEND", "BatchNorm", "Conv3x3", "Dense", "Flatten", "Layer", "MaxPool2", "ReLU", "ShapeError",
    "Softmax", "build_layer", "log_softmax", "DESK_TRUNK", "FULL_TRUNK", "NAIVE_TRUNK",
    "TRUNK_PRESETS", "Adam", "AdamState", "Network", "adam_step", "init_params", "read_blobs",
    "resolve_trunk", "with_flatten", "write_blobs",
]
