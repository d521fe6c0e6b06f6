"""Minimal float64 tensor engine: autodiff, layers, Adam, RNG, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .modules import MLP, LayerNorm, Linear, Module, Parameter, xavier
from .optim import Adam, clip_grad_norm
from .rng import Rng, derive_seed
from .tensor import (
    Tensor,
    as_tensor,
    backward,
    concat,
    layer_norm,
    linear,
    matmul,
    max_pool_points,
    no_grad,
    reduce_min,
    relu,
    reshape,
    softmax,
    sqrt,
    stack,
    tanh,
    tmean,
    top_k_softmax,
    transpose,
    tsum,
    exp,
    log,
)

__all__ = [
    "Adam",
    "GradCheckReport",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "Parameter",
    "Rng",
    "Tensor",
    "as_tensor",
    "backward",
    "clip_grad_norm",
    "concat",
    "derive_seed",
    "exp",
    "grad_check",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "log",
    "matmul",
    "max_pool_points",
    "no_grad",
    "reduce_min",
    "relu",
    "reshape",
    "save_checkpoint",
    "softmax",
    "sqrt",
    "stack",
    "tanh",
    "tmean",
    "top_k_softmax",
    "transpose",
    "tsum",
    "xavier",
]
