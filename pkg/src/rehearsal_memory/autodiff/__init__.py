"""Minimal differentiable-computation substrate: tensors, layers, Adam, RNG."""

from .checkpoint import checkpoint_bytes, load_tensors, save_tensors
from .gradcheck import check_gradients, numeric_gradient, relative_error
from .layers import (
    additive_scores,
    add_positions,
    apply_layer_norm,
    apply_linear,
    feed_forward,
    gru_cell,
    init_additive_attention,
    init_decoder,
    init_encoder,
    init_feed_forward,
    init_gru,
    init_layer_norm,
    init_linear,
    init_mha,
    layer_norm,
    linear,
    multi_head_attention,
    sinusoid_positions,
    transformer_decoder_with_memory,
    transformer_encoder,
)
from .optim import adam_step
from .params import ParameterStore, ParamView, glorot
from .rng import Rng
from .tensor import (
    DEFAULT_DTYPE,
    Tensor,
    broadcast_to,
    clip,
    concat,
    exp,
    getitem,
    log,
    log_softmax,
    matmul,
    pow_const,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    swapaxes,
    take0,
    take_last,
    tanh,
)

__all__ = [
    "DEFAULT_DTYPE",
    "ParamView",
    "ParameterStore",
    "Rng",
    "Tensor",
    "adam_step",
    "add_positions",
    "additive_scores",
    "apply_layer_norm",
    "apply_linear",
    "broadcast_to",
    "check_gradients",
    "checkpoint_bytes",
    "clip",
    "concat",
    "exp",
    "feed_forward",
    "getitem",
    "glorot",
    "gru_cell",
    "init_additive_attention",
    "init_decoder",
    "init_encoder",
    "init_feed_forward",
    "init_gru",
    "init_layer_norm",
    "init_linear",
    "init_mha",
    "layer_norm",
    "linear",
    "load_tensors",
    "log",
    "log_softmax",
    "matmul",
    "multi_head_attention",
    "numeric_gradient",
    "pow_const",
    "reduce_mean",
    "reduce_sum",
    "relative_error",
    "relu",
    "reshape",
    "save_tensors",
    "sigmoid",
    "sinusoid_positions",
    "softmax",
    "sub",
    "swapaxes",
    "take0",
    "take_last",
    "tanh",
    "transformer_decoder_with_memory",
    "transformer_encoder",
]
