"""Query-conditioned multi-hop reading of the memory, and the loss algebra.

Each hop attends over the K slots with an additive attention, pools a clue
vector, and refines the query via a shared projection of [clue; query].
After the configured hops a linear head scores the fixed answer set. The
training objective combines recollection, familiarity, and reasoning
losses with configurable weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.layers import additive_scores
from .autodiff.params import ParameterStore
from .autodiff.tensor import (
    Tensor,
    concat,
    log_softmax,
    matmul,
    reduce_mean,
    reshape,
    softmax,
    take0,
    take_last,
)
from .errors import ConfigError, ShapeError


@dataclass
class LossWeights:
    rec: float = 1.0
    fam: float = 0.5
    reason: float = 1.0

    def validate(self) -> None:
        if min(self.rec, self.fam, self.reason) < 0:
            raise ConfigError("loss weights must be nonnegative")


def encode_query(query_ids: np.ndarray, store: ParameterStore) -> Tensor:
    """Initial query feature q0 via embedding lookup; (B,) ids -> (B, d)."""
    ids = np.asarray(query_ids)
    table = store["embed.query"]
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"query id out of range [0, {table.shape[0]})")
    return take0(table, ids)


def hop(query: Tensor, memory_slots: Tensor, store: ParameterStore) -> tuple[Tensor, Tensor]:
    """One attention hop: clue e_c from the slots, then the refined query.

    query (B, d), memory_slots (B, K, d) -> (clue (B, d), next query (B, d)).
    """
    b, d = query.shape
    scores = additive_scores(
        reshape(query, (b, 1, d)), memory_slots, store.view("reason.attn")
    )  # (B, K)
    weights = softmax(scores, axis=-1)
    k = memory_slots.shape[1]
    clue = reshape(matmul(reshape(weights, (b, 1, k)), memory_slots), (b, d))
    next_query = matmul(concat([clue, query], axis=-1), store["reason.wq"])
    return clue, next_query


def reason(
    memory_slots: Tensor,
    query_ids: np.ndarray,
    store: ParameterStore,
    c_hop: int,
) -> Tensor:
    """Answer logits after c_hop hops (hop parameters shared across hops)."""
    if c_hop < 1:
        raise ConfigError("reasoning needs at least one hop")
    q = encode_query(query_ids, store)
    for _ in range(c_hop):
        _, q = hop(q, memory_slots, store)
    return matmul(q, store["reason.head.w"]) + store["reason.head.b"]


def reason_loss(logits: Tensor, answers: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the batch."""
    answers = np.asarray(answers, dtype=np.int64)
    n_answers = logits.shape[-1]
    if answers.size and (answers.min() < 0 or answers.max() >= n_answers):
        raise ShapeError(f"answer index out of range [0, {n_answers})")
    flat = reshape(logits, (-1, n_answers))
    return reduce_mean(-take_last(log_softmax(flat, axis=-1), answers.reshape(-1)))


def combined_loss(
    l_rec: Tensor, l_fam: Tensor, l_reason: Tensor, weights: LossWeights
) -> Tensor:
    """lambda1 * L_rec + lambda2 * L_fam + lambda3 * L_r."""
    dtype = l_reason.dtype
    return (
        l_rec * Tensor(np.asarray(weights.rec, dtype=dtype))
        + l_fam * Tensor(np.asarray(weights.fam, dtype=dtype))
        + l_reason * Tensor(np.asarray(weights.reason, dtype=dtype))
    )
