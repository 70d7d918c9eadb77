"""Minimal dense-tensor core: reverse-mode autodiff, layers, Adam."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    MLP,
    LayerNorm,
    Linear,
    MultiHeadSelfAttention,
    TransformerBlock,
    xavier_uniform,
)
from .optim import AdamState, adam_step
from .tensor import (
    ParamGraph,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    clamp_min,
    concat,
    div,
    dropout,
    layer_norm,
    logsumexp,
    matmul,
    mul,
    powc,
    relu,
    reshape,
    sdpa,
    sigmoid,
    softmax,
    softplus,
    sub,
    tanh,
    terf,
    texp,
    tlog,
    tmean,
    transpose,
    tsqrt,
    tsum,
)

__all__ = [
    "AdamState",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "MLP",
    "MultiHeadSelfAttention",
    "ParamGraph",
    "ShapeError",
    "Tensor",
    "TransformerBlock",
    "adam_step",
    "add",
    "as_tensor",
    "clamp_min",
    "concat",
    "div",
    "dropout",
    "grad_check",
    "layer_norm",
    "load_checkpoint",
    "logsumexp",
    "matmul",
    "mul",
    "powc",
    "relu",
    "reshape",
    "save_checkpoint",
    "sdpa",
    "sigmoid",
    "softmax",
    "softplus",
    "sub",
    "tanh",
    "terf",
    "texp",
    "tlog",
    "tmean",
    "transpose",
    "tsqrt",
    "tsum",
    "xavier_uniform",
]
