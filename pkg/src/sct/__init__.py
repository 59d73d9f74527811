"""Chunked video transformer with LSH attention on a numpy autodiff core."""

from .tensor import (
    Tensor,
    Parameter,
    no_grad,
    add,
    mul,
    matmul,
    reshape,
    transpose,
    concat,
    pad,
    roll,
    softmax,
    log_softmax,
    layer_norm,
    gelu,
    dropout,
    label_smoothed_cross_entropy,
)

__version__ = "0.1.0"
