"""Recurrent, attention, and transformer building blocks.

Conventions: weight matrices are stored (d_in, d_out) and applied as
``x @ W``; sequences are (..., length, d); boolean validity masks mark
real (non-pad) positions. Feed-forward hidden width is 4*d with ReLU,
positions are fixed sinusoids added at encoder/decoder input, and layer
norm uses eps=1e-5.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, NumericError, ShapeError
from .params import ParameterStore, ParamView
from .rng import Rng
from .tensor import (
    Tensor,
    broadcast_to,
    concat,
    matmul,
    pow_const,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    softmax,
    swapaxes,
    tanh,
)

LAYER_NORM_EPS = 1e-5
FF_WIDTH_MULT = 4
NEG_INF = -1e9


# positional encoding ---------------------------------------------------

_sinusoid_cache: dict[tuple[int, int], np.ndarray] = {}


def sinusoid_positions(length: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table, shape (length, d), float64 master copy."""
    key = (length, d)
    if key not in _sinusoid_cache:
        pos = np.arange(length, dtype=np.float64)[:, None]
        idx = np.arange(d, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d)
        table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
        _sinusoid_cache[key] = table
    return _sinusoid_cache[key]


def add_positions(x: Tensor) -> Tensor:
    table = sinusoid_positions(x.shape[-2], x.shape[-1]).astype(x.dtype)
    return x + Tensor(table)


# layer norm ------------------------------------------------------------


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply affine."""
    mu = reduce_mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = reduce_mean(xc * xc, axis=-1, keepdims=True)
    inv = pow_const(var + Tensor(np.asarray(eps, dtype=x.dtype)), -0.5)
    return xc * inv * gain + shift


def init_layer_norm(store: ParameterStore, prefix: str, d: int) -> None:
    store.add_ones(f"{prefix}.g", (d,))
    store.add_zeros(f"{prefix}.b", (d,))


def apply_layer_norm(x: Tensor, p: ParamView) -> Tensor:
    return layer_norm(x, p["g"], p["b"])


# linear / feed-forward --------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = out + b
    return out


def init_linear(store: ParameterStore, prefix: str, d_in: int, d_out: int, rng: Rng) -> None:
    store.add_glorot(f"{prefix}.w", (d_in, d_out), rng)
    store.add_zeros(f"{prefix}.b", (d_out,))


def apply_linear(x: Tensor, p: ParamView) -> Tensor:
    return linear(x, p["w"], p["b"])


def init_feed_forward(store: ParameterStore, prefix: str, d: int, rng: Rng) -> None:
    init_linear(store, f"{prefix}.in", d, FF_WIDTH_MULT * d, rng)
    init_linear(store, f"{prefix}.out", FF_WIDTH_MULT * d, d, rng)


def feed_forward(x: Tensor, p: ParamView) -> Tensor:
    return apply_linear(relu(apply_linear(x, p.view("in"))), p.view("out"))


# multi-head attention ----------------------------------------------------


def init_mha(store: ParameterStore, prefix: str, d: int, rng: Rng) -> None:
    for name in ("q", "k", "v", "o"):
        init_linear(store, f"{prefix}.{name}", d, d, rng)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, d = x.shape
    head_d = d // heads
    x = reshape(x, tuple(lead) + (length, heads, head_d))
    return swapaxes(x, -2, -3)  # (..., heads, length, head_d)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, head_d = x.shape
    x = swapaxes(x, -2, -3)
    return reshape(x, tuple(lead) + (length, heads * head_d))


def multi_head_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    p: ParamView,
    heads: int,
    key_valid: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over ``heads`` heads.

    ``key_valid`` is a boolean array broadcastable to (..., key_len); masked
    keys get -1e9 before normalization. Returns (context, attention) where
    attention is (..., heads, query_len, key_len) with rows summing to 1.
    """
    d = queries.shape[-1]
    if d % heads != 0:
        raise ConfigError(f"model dim {d} is not divisible by {heads} heads")
    if keys.shape[-2] != values.shape[-2]:
        raise ShapeError(
            f"key/value lengths differ: {keys.shape[-2]} vs {values.shape[-2]}"
        )
    q = _split_heads(apply_linear(queries, p.view("q")), heads)
    k = _split_heads(apply_linear(keys, p.view("k")), heads)
    v = _split_heads(apply_linear(values, p.view("v")), heads)
    scale = 1.0 / np.sqrt(d // heads)
    scores = matmul(q, swapaxes(k, -1, -2)) * Tensor(np.asarray(scale, dtype=q.dtype))
    if key_valid is not None:
        bias = np.where(key_valid, 0.0, NEG_INF).astype(scores.dtype)
        # insert axes for (heads, query_len); broadcasting does the rest
        scores = scores + Tensor(bias[..., None, None, :])
    attn = softmax(scores, axis=-1)
    context = _merge_heads(matmul(attn, v))
    return apply_linear(context, p.view("o")), attn


# transformer encoder ------------------------------------------------------


def init_encoder(store: ParameterStore, prefix: str, d: int, layers: int, rng: Rng) -> None:
    for i in range(layers):
        init_mha(store, f"{prefix}.l{i}.attn", d, rng)
        init_layer_norm(store, f"{prefix}.l{i}.ln1", d)
        init_feed_forward(store, f"{prefix}.l{i}.ff", d, rng)
        init_layer_norm(store, f"{prefix}.l{i}.ln2", d)


def transformer_encoder(
    x: Tensor,
    p: ParamView,
    layers: int,
    heads: int,
    valid: np.ndarray | None = None,
) -> Tensor:
    """Post-LN encoder stack; sinusoidal positions are added at input.

    ``valid`` marks real positions (..., length); pad positions are excluded
    from attention and zeroed in the output.
    """
    if x.shape[-2] == 0:
        raise ShapeError("transformer_encoder requires a nonempty sequence")
    x = add_positions(x)
    for i in range(layers):
        lp = p.view(f"l{i}")
        attn_out, _ = multi_head_attention(x, x, x, lp.view("attn"), heads, key_valid=valid)
        x = apply_layer_norm(x + attn_out, lp.view("ln1"))
        x = apply_layer_norm(x + feed_forward(x, lp.view("ff")), lp.view("ln2"))
    if valid is not None:
        x = x * Tensor(valid[..., None].astype(x.dtype))
    return x


# transformer decoder with memory cross-attention ---------------------------


def init_decoder(store: ParameterStore, prefix: str, d: int, layers: int, rng: Rng) -> None:
    for i in range(layers):
        init_mha(store, f"{prefix}.l{i}.self", d, rng)
        init_layer_norm(store, f"{prefix}.l{i}.ln1", d)
        init_mha(store, f"{prefix}.l{i}.cross", d, rng)
        init_layer_norm(store, f"{prefix}.l{i}.ln2", d)
        init_feed_forward(store, f"{prefix}.l{i}.ff", d, rng)
        init_layer_norm(store, f"{prefix}.l{i}.ln3", d)


def transformer_decoder_with_memory(
    x: Tensor,
    memory: Tensor,
    p: ParamView,
    layers: int,
    heads: int,
    return_cross_attn: bool = False,
):
    """Bidirectional decoder: full self-attention (no future masking), then
    cross-attention with memory slots as keys/values, then feed-forward.

    ``x`` is (..., length, d); ``memory`` is (..., K, d) with leading dims
    broadcastable against x's.
    """
    if memory.shape[-2] == 0:
        raise ShapeError("decoder requires at least one memory slot")
    if x.shape[-2] == 0:
        raise ShapeError("decoder requires a nonempty fragment")
    x = add_positions(x)
    cross_attns = []
    for i in range(layers):
        lp = p.view(f"l{i}")
        self_out, _ = multi_head_attention(x, x, x, lp.view("self"), heads)
        x = apply_layer_norm(x + self_out, lp.view("ln1"))
        cross_out, cross_attn = multi_head_attention(x, memory, memory, lp.view("cross"), heads)
        cross_attns.append(cross_attn)
        x = apply_layer_norm(x + cross_out, lp.view("ln2"))
        x = apply_layer_norm(x + feed_forward(x, lp.view("ff")), lp.view("ln3"))
    if return_cross_attn:
        return x, cross_attns
    return x


# GRU cell -------------------------------------------------------------------


def init_gru(store: ParameterStore, prefix: str, d: int, rng: Rng) -> None:
    for gate in ("z", "r", "h"):
        store.add_glorot(f"{prefix}.w{gate}", (d, d), rng)
        store.add_glorot(f"{prefix}.u{gate}", (d, d), rng)
        store.add_zeros(f"{prefix}.b{gate}", (d,))


def gru_cell(h: Tensor, x: Tensor, p: ParamView) -> Tensor:
    """Gated update h' = (1-z)*h + z*tanh(Wh x + Uh (r*h) + bh).

    Operates on (..., d); the gate matrices are shared across leading dims.
    """
    if h.shape != x.shape:
        raise ShapeError(f"state/input shapes differ: {h.shape} vs {x.shape}")
    if h.shape[-1] != p["wz"].shape[0]:
        raise ShapeError(
            f"feature dim {h.shape[-1]} does not match GRU params {p['wz'].shape}"
        )
    z = sigmoid(matmul(x, p["wz"]) + matmul(h, p["uz"]) + p["bz"])
    r = sigmoid(matmul(x, p["wr"]) + matmul(h, p["ur"]) + p["br"])
    h_cand = tanh(matmul(x, p["wh"]) + matmul(r * h, p["uh"]) + p["bh"])
    one = Tensor(np.asarray(1.0, dtype=h.dtype))
    return (one - z) * h + z * h_cand


# additive (tanh) attention scores -------------------------------------------


def init_additive_attention(
    store: ParameterStore, prefix: str, d_query: int, d_key: int, d_model: int, rng: Rng
) -> None:
    store.add_glorot(f"{prefix}.w1", (d_query, d_model), rng)
    store.add_glorot(f"{prefix}.w2", (d_key, d_model), rng)
    store.add_zeros(f"{prefix}.b", (d_model,))
    store.add_glorot(f"{prefix}.v", (d_model, 1), rng)


def additive_scores(a: Tensor, b: Tensor, p: ParamView) -> Tensor:
    """w^T tanh(W1 a + W2 b + bias) for broadcast-compatible a, b.

    a and b are (..., d) with broadcastable leading dims; the trailing
    (..., 1) of the projection is squeezed off.
    """
    pre = tanh(matmul(a, p["w1"]) + matmul(b, p["w2"]) + p["b"])
    scores = matmul(pre, p["v"])
    return reshape(scores, scores.shape[:-1])
