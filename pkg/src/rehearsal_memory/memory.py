"""Rehearsal memory machine: one-pass, segment-wise stream compression.

A stream is cut into fixed-length segments; each segment is contextualized
by the transformer encoder, aligned onto the K slots by slot-to-item
attention (normalized over slots, so summed aligned features conserve the
summed item features), and written with a shared per-slot GRU. Memory shape
never depends on stream length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.checkpoint import checkpoint_bytes
from .autodiff.layers import additive_scores, gru_cell, transformer_encoder
from .autodiff.params import ParameterStore, ParamView
from .autodiff.tensor import Tensor, broadcast_to, matmul, reshape, softmax, take0
from .errors import ShapeError
from .model import ModelDims, Vocab

MEMORY_SNAPSHOT_NAME = "memory.final"


@dataclass
class MemoryState:
    """K x d slot matrix per stream (batched as (B, K, d)) plus the segment
    counter; the only state kept once a stream has been consumed."""

    slots: Tensor
    step: int = 1


def init_memory(store: ParameterStore, batch: int) -> MemoryState:
    """Broadcast the learned initial-slot parameter to a fresh batch state."""
    init = store["mem.init"]
    k, d = init.shape
    slots = broadcast_to(reshape(init, (1, k, d)), (batch, k, d))
    return MemoryState(slots=slots, step=1)


def chunk_stream(streams: np.ndarray, n_segment: int, pad_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Cut (B, L) id streams into (B, T, N) segments, padding the tail.

    Returns (segments, valid); a position is valid unless it holds the pad
    id, so ragged batches may be right-padded with ``pad_id`` by the caller.
    """
    if streams.ndim != 2 or streams.shape[1] == 0:
        raise ShapeError(f"streams must be (batch, length>=1), got {streams.shape}")
    b, length = streams.shape
    t = -(-length // n_segment)
    padded = np.full((b, t * n_segment), pad_id, dtype=streams.dtype)
    padded[:, :length] = streams
    valid = padded != pad_id
    return padded.reshape(b, t, n_segment), valid.reshape(b, t, n_segment)


def encode_segment(
    ids: np.ndarray,
    store: ParameterStore,
    dims: ModelDims,
    vocab: Vocab,
    valid: np.ndarray | None = None,
) -> Tensor:
    """Embed one batch of segments (B, N) and contextualize bidirectionally.

    Embeddings are scaled by sqrt(d) before the positional table is added,
    otherwise the unit-amplitude sinusoids drown the content signal.
    """
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab.size):
        raise ShapeError(
            f"segment id out of vocabulary [0, {vocab.size}): max={ids.max()}"
        )
    x = take0(store["embed.items"], ids)
    x = x * Tensor(np.asarray(np.sqrt(dims.d), dtype=x.dtype))
    return transformer_encoder(
        x, store.view("enc"), dims.enc_layers, dims.heads, valid=valid
    )


def slot_item_align(
    memory: Tensor,
    features: Tensor,
    p: ParamView,
    valid: np.ndarray | None = None,
) -> Tensor:
    """Aligned slot inputs l_k = sum_n softmax_k(w tanh(W1 m_k + W2 f_n + b)) f_n.

    Normalization runs over slots for each item, so each valid item
    distributes exactly unit mass across the K slots.
    """
    b, k, d = memory.shape
    n = features.shape[-2]
    if valid is not None and not valid.any():
        raise ShapeError("slot_item_align requires at least one valid item")
    scores = additive_scores(
        reshape(memory, (b, k, 1, d)), reshape(features, (b, 1, n, d)), p
    )  # (B, K, N)
    attn = softmax(scores, axis=1)  # normalize over slots, per item
    if valid is not None:
        attn = attn * Tensor(valid[:, None, :].astype(attn.dtype))
    return matmul(attn, features)  # (B, K, N) @ (B, N, d) -> (B, K, d)


def update_memory(state: MemoryState, aligned: Tensor, p: ParamView) -> MemoryState:
    """Write aligned features into every slot through the shared GRU."""
    if aligned.shape != state.slots.shape:
        raise ShapeError(
            f"aligned features {aligned.shape} do not match memory {state.slots.shape}"
        )
    return MemoryState(slots=gru_cell(state.slots, aligned, p), step=state.step + 1)


def write_stream(
    streams: np.ndarray,
    store: ParameterStore,
    dims: ModelDims,
    vocab: Vocab,
) -> MemoryState:
    """Consume (B, L) id streams into memory, one segment at a time.

    Performs exactly ceil(L / N) updates; rows whose segment is all padding
    keep their previous slots (empty-segment skipping).
    """
    segments, valid = chunk_stream(streams, dims.n_segment, vocab.pad)
    b, t, n = segments.shape
    features = encode_segment(
        segments.reshape(b * t, n),
        store,
        dims,
        vocab,
        valid=valid.reshape(b * t, n),
    )
    features = reshape(features, (b, t, n, dims.d))
    align = store.view("mem.align")
    gru = store.view("mem.gru")
    state = init_memory(store, b)
    for step in range(t):
        seg_valid = valid[:, step]
        if not seg_valid.any():
            state = MemoryState(slots=state.slots, step=state.step + 1)
            continue
        aligned = slot_item_align(state.slots, features[:, step], align, seg_valid)
        updated = update_memory(state, aligned, gru)
        rows = seg_valid.any(axis=1)
        if rows.all():
            state = updated
        else:
            keep = Tensor(rows[:, None, None].astype(state.slots.dtype))
            one = Tensor(np.asarray(1.0, dtype=state.slots.dtype))
            state = MemoryState(
                slots=updated.slots * keep + state.slots * (one - keep),
                step=updated.step,
            )
    return state


def memory_snapshot_bytes(state: MemoryState, row: int = 0) -> bytes:
    """Serialized form of one stream's final memory (storage-law probe)."""
    slots = state.slots.data
    if slots.ndim == 3:
        slots = slots[row]
    return checkpoint_bytes({MEMORY_SNAPSHOT_NAME: slots})
