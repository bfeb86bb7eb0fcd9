"""Minimal dense kernel with reverse-mode differentiation."""
from .io import decode_weights, encode_weights, load_weights, save_weights
from .optim import ParameterStore, adam_step, glorot_uniform, make_rng
from .tensor import (
    Tensor,
    add,
    as_tensor,
    attention_sum,
    batch_norm,
    bce_loss,
    bce_with_logits,
    dropout,
    linear,
    matmul,
    max_along,
    mean_all,
    mul,
    no_grad,
    pointwise_conv,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    stack,
    sum_all,
    swap_last,
    take,
    tanh,
    transpose,
)

__all__ = [
    "Tensor", "ParameterStore", "adam_step", "add", "as_tensor", "attention_sum", "batch_norm",
    "bce_loss", "bce_with_logits", "decode_weights", "dropout", "encode_weights", "glorot_uniform",
    "linear", "load_weights", "make_rng", "matmul", "max_along", "mean_all", "mul", "no_grad",
    "pointwise_conv", "relu", "reshape", "save_weights", "scale", "sigmoid", "softmax", "stack",
    "sum_all", "swap_last", "take", "tanh", "transpose",
]
