"""Self-supervised rehearsal: recollection and familiarity training signals.

Positive fragments are stream segments with half their items masked and a
[cls] token prepended; negatives additionally have half of the surviving
(unmasked) items replaced with items from other streams in the batch. Both
run through the memory-conditioned decoder. Recollection scores each masked
position against the tied item-embedding table (contrastive over the target
plus negatives, or the whole item vocabulary); familiarity is binary
cross-entropy on the [cls] confidence score.

The familiarity objective is implemented as standard BCE,
-log(s+) - log(1 - s-). Taken literally, the printed form "-log(s+) +
log(1 - s-)" rewards pushing negative scores toward 1 under minimization,
contradicting its stated goal of distinguishing positives from negatives;
the sign of the second term is corrected here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff.layers import transformer_decoder_with_memory
from .autodiff.params import ParameterStore
from .autodiff.rng import Rng
from .autodiff.tensor import (
    Tensor,
    clip,
    concat,
    log,
    log_softmax,
    matmul,
    reduce_mean,
    reduce_sum,
    reshape,
    sigmoid,
    take0,
    take_last,
)
from .errors import ConfigError, DataError, ShapeError
from .model import ModelDims, Vocab

SCORE_FLOOR = 1e-7
_MAX_REDRAWS = 100


@dataclass
class RehearsalConfig:
    b_fragments: int = 6
    negatives: str = "all"  # "all" (whole item vocabulary) or "sampled"
    j_negatives: int | None = None

    def validate(self) -> None:
        if self.b_fragments < 2 or self.b_fragments % 2 != 0:
            raise ConfigError(
                f"rehearsal.b_fragments must be a positive even number, got {self.b_fragments}"
            )
        if self.negatives not in ("all", "sampled"):
            raise ConfigError(f"rehearsal.negatives must be 'all' or 'sampled'")
        if self.negatives == "sampled" and not self.j_negatives:
            raise ConfigError(
                "rehearsal.j_negatives must be >= 1 under the 'sampled' policy"
            )


@dataclass
class MaskedFragment:
    tokens: list[int]  # [cls] then N entries; masked entries hold the mask id
    mask_positions: list[int]  # token indices, subset of [1..N]
    targets: list[int]  # original ids at mask_positions
    polarity: str  # "positive" | "negative"


def mask_fragment(items: Sequence[int], vocab: Vocab, rng: Rng) -> MaskedFragment:
    """Mask floor(N/2) uniformly chosen items; prepend [cls] (never masked)."""
    n = len(items)
    if n < 2:
        raise ShapeError(f"fragment must have at least 2 items, got {n}")
    n_mask = n // 2
    picks = np.sort(rng.choice(n, size=n_mask, replace=False))
    tokens = [vocab.cls] + [int(x) for x in items]
    targets = []
    positions = []
    for p in picks:
        positions.append(int(p) + 1)
        targets.append(tokens[p + 1])
        tokens[p + 1] = vocab.mask
    return MaskedFragment(tokens, positions, targets, "positive")


def corrupt_fragment(
    positive: MaskedFragment, pool: Sequence[int], vocab: Vocab, rng: Rng
) -> MaskedFragment:
    """Replace ceil(u/2) of the u unmasked items with pool items that differ
    from the originals; masks and targets are untouched."""
    if positive.polarity != "positive":
        raise ShapeError("corrupt_fragment expects a positive fragment")
    pool = [int(x) for x in pool]
    if not pool:
        raise DataError("corrupt_fragment requires a nonempty replacement pool")
    masked = set(positive.mask_positions)
    unmasked = [i for i in range(1, len(positive.tokens)) if i not in masked]
    n_rep = -(-len(unmasked) // 2)
    picks = rng.choice(len(unmasked), size=n_rep, replace=False)
    tokens = list(positive.tokens)
    for pick in np.sort(picks):
        pos = unmasked[int(pick)]
        original = tokens[pos]
        value = None
        for _ in range(_MAX_REDRAWS):
            cand = pool[int(rng.integers(0, len(pool)))]
            if cand != original:
                value = cand
                break
        if value is None:
            differing = [x for x in pool if x != original]
            if not differing:
                raise DataError(
                    f"replacement pool only contains the original item {original}"
                )
            value = differing[int(rng.integers(0, len(differing)))]
        tokens[pos] = value
    return MaskedFragment(
        tokens, list(positive.mask_positions), list(positive.targets), "negative"
    )


def embed_fragment_tokens(tokens: np.ndarray, store: ParameterStore, vocab: Vocab) -> Tensor:
    """Token embeddings scaled by sqrt(d) to weigh against the positional table."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab.size):
        raise ShapeError(f"fragment token out of vocabulary [0, {vocab.size})")
    x = take0(store["embed.items"], tokens)
    return x * Tensor(np.asarray(np.sqrt(x.shape[-1]), dtype=x.dtype))


def decode_fragment(
    fragment: MaskedFragment,
    memory_slots: Tensor,
    store: ParameterStore,
    dims: ModelDims,
    vocab: Vocab,
) -> Tensor:
    """Run one masked fragment through the memory-conditioned decoder.

    Returns (N+1, d) features with the [cls] feature at index 0.
    """
    tokens = np.asarray(fragment.tokens)[None, :]
    if memory_slots.ndim == 2:
        memory_slots = reshape(memory_slots, (1,) + memory_slots.shape)
    x = embed_fragment_tokens(tokens, store, vocab)
    out = transformer_decoder_with_memory(
        x, memory_slots, store.view("dec"), dims.dec_layers, dims.heads
    )
    return reshape(out, out.shape[1:])


def recollection_loss(
    masked_features: Tensor,
    targets: np.ndarray,
    negatives: np.ndarray | None,
    embeddings: Tensor,
    n_fragment_items: int,
) -> Tensor:
    """Contrastive masked-item loss for one fragment, scaled by 2/N.

    ``masked_features`` is (n_mask, d); ``negatives`` is (J,) or (n_mask, J)
    item ids, or None for the all-vocabulary policy (score against every
    item id in ``embeddings``). J=0 degenerates to zero loss.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n_mask = masked_features.shape[0]
    if targets.shape != (n_mask,):
        raise ShapeError(f"targets shape {targets.shape} != ({n_mask},)")
    scale = Tensor(np.asarray(2.0 / n_fragment_items, dtype=masked_features.dtype))
    if negatives is None:
        logits = matmul(masked_features, _transpose2d(embeddings))
        nll = -take_last(log_softmax(logits, axis=-1), targets)
        return reduce_sum(nll) * scale
    negatives = np.asarray(negatives, dtype=np.int64)
    if negatives.size == 0:
        return Tensor(np.asarray(0.0, dtype=masked_features.dtype))
    if negatives.ndim == 1:
        negatives = np.broadcast_to(negatives, (n_mask, negatives.shape[0]))
    pos_emb = take0(embeddings, targets)  # (n_mask, d)
    neg_emb = take0(embeddings, negatives)  # (n_mask, J, d)
    pos_score = reduce_sum(masked_features * pos_emb, axis=-1, keepdims=True)
    neg_score = reduce_sum(
        reshape(masked_features, (n_mask, 1, masked_features.shape[-1])) * neg_emb,
        axis=-1,
    )
    logits = concat([pos_score, neg_score], axis=-1)  # (n_mask, 1+J)
    nll = -take_last(log_softmax(logits, axis=-1), np.zeros(n_mask, dtype=np.int64))
    return reduce_sum(nll) * scale


def _transpose2d(t: Tensor) -> Tensor:
    from .autodiff.tensor import swapaxes

    return swapaxes(t, 0, 1)


def score_familiarity(r_cls: Tensor, store: ParameterStore) -> Tensor:
    """Confidence that a fragment was experienced: sigmoid of a linear map.

    Clamped away from exactly 0/1 so the score stays in the open interval
    even where float32 sigmoid saturates.
    """
    squeeze = r_cls.ndim == 1
    if squeeze:
        r_cls = reshape(r_cls, (1,) + r_cls.shape)
    logits = matmul(r_cls, store["fam.head.w"]) + store["fam.head.b"]
    s = clip(sigmoid(reshape(logits, logits.shape[:-1])), SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    return reshape(s, ()) if squeeze else s


def familiarity_loss(s_pos: Tensor, s_neg: Tensor) -> Tensor:
    """BCE pushing positive scores up and negative scores down (mean over pairs)."""
    s_pos = clip(s_pos, SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    s_neg = clip(s_neg, SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    one = Tensor(np.asarray(1.0, dtype=s_pos.dtype))
    return reduce_mean(-log(s_pos) - log(one - s_neg))


# batched fragment construction and losses ---------------------------------


@dataclass
class FragmentBatch:
    """Masked positives, corrupted negatives, and gather indices for a batch."""

    pos_tokens: np.ndarray  # (B, Bf, N+1)
    neg_tokens: np.ndarray  # (B, Bf, N+1)
    mask_positions: np.ndarray  # (B, Bf, n_mask) token indices in [1..N]
    targets: np.ndarray  # (B, Bf, n_mask)


def build_fragment_batch(
    segments: np.ndarray,
    seg_valid: np.ndarray,
    frag_idx: np.ndarray,
    streams: np.ndarray,
    vocab: Vocab,
    rng: Rng,
) -> FragmentBatch:
    """Assemble masked positive and corrupted negative fragments.

    ``segments``/``seg_valid`` come from chunk_stream, (B, C_f, N);
    ``frag_idx`` is (B, Bf) fragment picks; ``streams`` (B, L) feeds the
    cross-stream replacement pool. Needs batch >= 2 so the pool is nonempty.
    """
    b, _, n = segments.shape
    bf = frag_idx.shape[1]
    if b < 2:
        raise DataError("fragment corruption needs a batch of >= 2 streams")
    rows = np.arange(b)[:, None]
    frags = segments[rows, frag_idx]  # (B, Bf, N)
    if not seg_valid[rows, frag_idx].all():
        raise ShapeError("selected fragments must not contain padding")

    n_mask = n // 2
    u = n - n_mask
    n_rep = -(-u // 2)
    order = np.argsort(rng.uniform(0.0, 1.0, (b, bf, n)), axis=-1)
    mask_items = np.sort(order[..., :n_mask], axis=-1)  # item-space indices
    rep_items = np.sort(order[..., n_mask : n_mask + n_rep], axis=-1)

    frag_rows = np.arange(bf)[None, :, None]
    targets = frags[rows[..., None], frag_rows, mask_items]

    pos = np.concatenate(
        [np.full((b, bf, 1), vocab.cls, dtype=frags.dtype), frags], axis=-1
    )
    pos[rows[..., None], frag_rows, mask_items + 1] = vocab.mask

    neg = pos.copy()
    originals = frags[rows[..., None], frag_rows, rep_items]
    length = streams.shape[1]
    values = np.empty_like(originals)
    todo = np.ones(originals.shape, dtype=bool)
    for _ in range(_MAX_REDRAWS):
        if not todo.any():
            break
        other = rng.integers(0, b - 1, originals.shape)
        other += other >= rows[..., None]
        cols = rng.integers(0, length, originals.shape)
        draw = streams[other, cols]
        accept = todo & (draw != originals)
        values[accept] = draw[accept]
        todo &= ~accept
    if todo.any():
        raise DataError(
            "could not draw differing replacement items from other streams"
        )
    neg[rows[..., None], frag_rows, rep_items + 1] = values

    return FragmentBatch(
        pos_tokens=pos,
        neg_tokens=neg,
        mask_positions=mask_items + 1,
        targets=targets,
    )


def rehearsal_losses(
    batch: FragmentBatch,
    memory_slots: Tensor,
    store: ParameterStore,
    dims: ModelDims,
    vocab: Vocab,
    rcfg: RehearsalConfig,
    rng: Rng,
) -> tuple[Tensor, Tensor]:
    """Decode all fragments against their stream's memory; return
    (recollection loss, familiarity loss) as scalar tensors."""
    b, bf, length = batch.pos_tokens.shape
    n = length - 1
    n_mask = batch.mask_positions.shape[-1]
    tokens = np.concatenate([batch.pos_tokens, batch.neg_tokens], axis=1)
    flat_tokens = tokens.reshape(b * 2 * bf, length)
    row_of = np.repeat(np.arange(b), 2 * bf)
    mem_rows = take0(memory_slots, row_of)
    x = embed_fragment_tokens(flat_tokens, store, vocab)
    decoded = transformer_decoder_with_memory(
        x, mem_rows, store.view("dec"), dims.dec_layers, dims.heads
    )  # (B*2Bf, L, d)

    # familiarity on every [cls] feature
    r_cls = reshape(decoded[:, 0, :], (b, 2 * bf, dims.d))
    scores = score_familiarity(reshape(r_cls, (b * 2 * bf, dims.d)), store)
    scores = reshape(scores, (b, 2 * bf))
    l_fam = familiarity_loss(scores[:, :bf], scores[:, bf:])

    # recollection on masked positions of positive fragments only
    decoded = reshape(decoded, (b, 2 * bf, length, dims.d))
    pos_flat = reshape(decoded[:, :bf], (b * bf * length, dims.d))
    frag_base = np.arange(b * bf)[:, None] * length
    gather = (frag_base + batch.mask_positions.reshape(b * bf, n_mask)).reshape(-1)
    masked_feats = take0(pos_flat, gather)  # (B*Bf*n_mask, d)
    flat_targets = batch.targets.reshape(-1)

    embeddings = store["embed.items"]
    if rcfg.negatives == "all":
        fact_emb = embeddings[: vocab.n_items]
        logits = matmul(masked_feats, _transpose2d(fact_emb))
        nll = -take_last(log_softmax(logits, axis=-1), flat_targets)
    else:
        j = int(rcfg.j_negatives or 0)
        neg_ids = _sample_negatives(flat_targets, vocab.n_items, j, rng)
        pos_emb = take0(embeddings, flat_targets)
        neg_emb = take0(embeddings, neg_ids)
        pos_score = reduce_sum(masked_feats * pos_emb, axis=-1, keepdims=True)
        neg_score = reduce_sum(
            reshape(masked_feats, (len(flat_targets), 1, dims.d)) * neg_emb, axis=-1
        )
        logits = concat([pos_score, neg_score], axis=-1)
        nll = -take_last(
            log_softmax(logits, axis=-1), np.zeros(len(flat_targets), dtype=np.int64)
        )
    per_fragment = reduce_sum(reshape(nll, (b * bf, n_mask)), axis=-1)
    scale = Tensor(np.asarray(2.0 / n, dtype=per_fragment.dtype))
    l_rec = reduce_mean(per_fragment * scale)
    return l_rec, l_fam


def _sample_negatives(targets: np.ndarray, n_items: int, j: int, rng: Rng) -> np.ndarray:
    """J ids per masked item, uniform over the other items (never the target)."""
    if n_items < 2:
        raise ConfigError("sampled negatives require an item vocabulary >= 2")
    draw = rng.integers(0, n_items - 1, (len(targets), j))
    return draw + (draw >= targets[:, None])
