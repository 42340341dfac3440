"""Parameter-set construction for the student model and the teacher.

The student holds: item/query embeddings, the segment encoder, the memory
machine (initial slots, slot-item alignment, slot GRU), the rehearsal
decoder with its familiarity head, and the multi-hop reasoner. The teacher
is entirely separate (its own store) so the two never share parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff.layers import (
    init_additive_attention,
    init_decoder,
    init_encoder,
    init_gru,
    init_linear,
)
from .autodiff.params import ParameterStore
from .autodiff.rng import Rng
from .errors import ConfigError


@dataclass(frozen=True)
class Vocab:
    """Item-id layout: content ids then reserved [pad], [mask], [cls] rows."""

    n_items: int

    @property
    def pad(self) -> int:
        return self.n_items

    @property
    def mask(self) -> int:
        return self.n_items + 1

    @property
    def cls(self) -> int:
        return self.n_items + 2

    @property
    def size(self) -> int:
        return self.n_items + 3


@dataclass(frozen=True)
class ModelDims:
    """Shared model geometry; d covers both item and query feature widths."""

    d: int = 128
    k_slots: int = 20
    n_segment: int = 10
    heads: int = 4
    enc_layers: int = 3
    dec_layers: int = 3
    c_hop: int = 2

    def validate(self) -> None:
        if self.d <= 0 or self.k_slots <= 0 or self.n_segment <= 0:
            raise ConfigError("model dims must be positive")
        if self.d % self.heads != 0:
            raise ConfigError(f"model.d={self.d} not divisible by heads={self.heads}")
        if self.c_hop < 1:
            raise ConfigError("model.c_hop must be >= 1")
        if self.n_segment < 2:
            raise ConfigError("model.n_segment must be >= 2 to mask half a fragment")


def build_student_params(
    store: ParameterStore,
    dims: ModelDims,
    vocab: Vocab,
    n_queries: int,
    n_answers: int,
    rng: Rng,
) -> ParameterStore:
    d = dims.d
    store.add_glorot("embed.items", (vocab.size, d), rng.child("embed.items"))
    store.add_glorot("embed.query", (n_queries, d), rng.child("embed.query"))
    init_encoder(store, "enc", d, dims.enc_layers, rng.child("enc"))
    store.add_glorot("mem.init", (dims.k_slots, d), rng.child("mem.init"))
    init_additive_attention(store, "mem.align", d, d, d, rng.child("mem.align"))
    init_gru(store, "mem.gru", d, rng.child("mem.gru"))
    init_decoder(store, "dec", d, dims.dec_layers, rng.child("dec"))
    # scoring heads start at zero: familiarity scores open at exactly 0.5
    # and answer logits at exactly uniform, pinning the initial losses to
    # their analytic chance values (2 ln 2 and ln R_a)
    store.add_zeros("fam.head.w", (d, 1))
    store.add_zeros("fam.head.b", (1,))
    init_additive_attention(store, "reason.attn", d, d, d, rng.child("reason.attn"))
    store.add_glorot("reason.wq", (2 * d, d), rng.child("reason.wq"))
    store.add_zeros("reason.head.w", (d, n_answers))
    store.add_zeros("reason.head.b", (n_answers,))
    return store


def build_teacher_params(
    store: ParameterStore,
    d: int,
    vocab: Vocab,
    n_queries: int,
    n_answers: int,
    rng: Rng,
) -> ParameterStore:
    store.add_glorot("teacher.embed.items", (vocab.size, d), rng.child("t.embed.items"))
    store.add_glorot("teacher.embed.query", (n_queries, d), rng.child("t.embed.query"))
    init_additive_attention(store, "teacher.attn", d, d, d, rng.child("t.attn"))
    init_linear(store, "teacher.head", 2 * d, n_answers, rng.child("t.head"))
    return store
