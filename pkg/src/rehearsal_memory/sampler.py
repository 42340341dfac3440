"""History sampler: an independently trained teacher that reads raw streams.

The teacher mean-pools each stream fragment, attends over fragments with a
query-conditioned additive attention, and classifies the answer from the
concatenated [clue; query] feature. After training its attention weights
rank fragments by usefulness; the top-B/2 per stream half are cached per
sample so student training never needs the teacher again.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff.layers import additive_scores
from .autodiff.optim import adam_step
from .autodiff.params import ParameterStore
from .autodiff.rng import Rng
from .autodiff.tensor import (
    Tensor,
    concat,
    log_softmax,
    matmul,
    reduce_mean,
    reduce_sum,
    reshape,
    softmax,
    take0,
    take_last,
)
from .errors import ConfigError, DataError, NumericError, ShapeError
from .memory import chunk_stream
from .model import Vocab
from .synthetic import SplitArrays


@dataclass
class SelectionResult:
    sample_index: int
    fragments: list[int]  # B indices, B/2 from each stream half
    weights: list[float]  # attention over all C_f fragments


def fragment_features(
    streams: np.ndarray, store: ParameterStore, n_segment: int, vocab: Vocab
) -> Tensor:
    """Mean item embedding per fragment, pad-aware: (B, L) -> (B, C_f, d)."""
    segments, valid = chunk_stream(streams, n_segment, vocab.pad)
    if segments.max(initial=0) >= vocab.size or segments.min(initial=0) < 0:
        raise ShapeError(f"stream id out of vocabulary [0, {vocab.size})")
    x = take0(store["teacher.embed.items"], segments)  # (B, C_f, N, d)
    mask = Tensor(valid[..., None].astype(x.dtype))
    counts = valid.sum(axis=-1, keepdims=True)  # (B, C_f, 1)
    if (counts == 0).any():
        raise ShapeError("fragment_features saw an entirely padded fragment")
    total = reduce_sum(x * mask, axis=-2)
    return total * Tensor((1.0 / counts).astype(x.dtype))


def teacher_attend(
    query: Tensor, fragments: Tensor, store: ParameterStore
) -> tuple[Tensor, Tensor]:
    """Query-conditioned additive attention over fragment features.

    query (B, d), fragments (B, C_f, d) -> clue e (B, d), weights (B, C_f).
    """
    b, d = query.shape
    scores = additive_scores(
        reshape(query, (b, 1, d)), fragments, store.view("teacher.attn")
    )  # (B, C_f)
    weights = softmax(scores, axis=-1)
    c_f = fragments.shape[1]
    clue = matmul(reshape(weights, (b, 1, c_f)), fragments)
    return reshape(clue, (b, d)), weights


def teacher_forward(
    streams: np.ndarray,
    queries: np.ndarray,
    store: ParameterStore,
    n_segment: int,
    vocab: Vocab,
) -> tuple[Tensor, Tensor]:
    """Answer logits (B, R_a) and fragment weights (B, C_f)."""
    fragments = fragment_features(streams, store, n_segment, vocab)
    q = take0(store["teacher.embed.query"], np.asarray(queries))
    clue, weights = teacher_attend(q, fragments, store)
    feature = concat([clue, q], axis=-1)
    logits = matmul(feature, store["teacher.head.w"]) + store["teacher.head.b"]
    return logits, weights


def select_fragments(weights: np.ndarray, b_fragments: int) -> SelectionResult:
    """Deterministic top-B/2 per stream half, ties broken by lower index."""
    weights = np.asarray(weights, dtype=np.float64)
    c_f = weights.shape[0]
    if b_fragments > c_f:
        raise ConfigError(
            f"cannot select {b_fragments} fragments from only {c_f} available"
        )
    if b_fragments % 2 != 0:
        raise ConfigError("fragment budget must be even (B/2 per half)")
    half = c_f // 2
    per_half = b_fragments // 2
    first = np.argsort(-weights[:half], kind="stable")[:per_half]
    second = half + np.argsort(-weights[half:], kind="stable")[:per_half]
    picked = sorted(int(i) for i in np.concatenate([first, second]))
    return SelectionResult(
        sample_index=-1, fragments=picked, weights=[float(w) for w in weights]
    )


def train_teacher(
    data: SplitArrays,
    store: ParameterStore,
    n_segment: int,
    vocab: Vocab,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    avg_from_epoch: int | None = None,
    head_grad_scale: float = 1.0,
) -> list[dict]:
    """Cross-entropy + Adam training; returns per-epoch metric dicts.

    Two desk-scale stabilizers: the answer head's gradients can be scaled
    down (the head memorizes small datasets much faster than the attention
    learns, which starves the attention of signal), and parameters can be
    replaced by their running average over the tail of training, which
    smooths out the drift the memorizing phase induces on the attention.
    """
    n = len(data)
    order_rng = Rng(seed).child("teacher.shuffle")
    metrics = []
    average: dict[str, np.ndarray] | None = None
    averaged = 0
    for epoch in range(epochs):
        order = order_rng.permutation(n)
        total_loss = 0.0
        total_correct = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            store.zero_grad()
            logits, _ = teacher_forward(
                data.streams[idx], data.queries[idx], store, n_segment, vocab
            )
            nll = -take_last(log_softmax(logits, axis=-1), data.answers[idx])
            loss = reduce_mean(nll)
            if not np.isfinite(loss.item()):
                raise NumericError(f"teacher loss diverged at epoch {epoch}")
            loss.backward()
            grads = store.gradients()
            if head_grad_scale != 1.0:
                for name in list(grads):
                    if name.startswith("teacher.head"):
                        grads[name] = grads[name] * head_grad_scale
            adam_step(store, grads, lr=lr)
            total_loss += loss.item() * len(idx)
            total_correct += int(
                (logits.data.argmax(axis=-1) == data.answers[idx]).sum()
            )
        if avg_from_epoch is not None and epoch + 1 >= avg_from_epoch:
            averaged += 1
            if average is None:
                average = {k: t.data.copy() for k, t in store.items()}
            else:
                for k, t in store.items():
                    average[k] += (t.data - average[k]) / averaged
        metrics.append(
            {
                "epoch": epoch,
                "teacher_loss": total_loss / n,
                "teacher_train_acc": total_correct / n,
            }
        )
    if average is not None:
        for k, t in store.items():
            t.data = average[k]
    return metrics


def teacher_accuracy(
    data: SplitArrays,
    store: ParameterStore,
    n_segment: int,
    vocab: Vocab,
    batch_size: int = 256,
) -> float:
    correct = 0
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        logits, _ = teacher_forward(
            data.streams[sl], data.queries[sl], store, n_segment, vocab
        )
        correct += int((logits.data.argmax(axis=-1) == data.answers[sl]).sum())
    return correct / len(data)


def compute_selections(
    data: SplitArrays,
    store: ParameterStore,
    n_segment: int,
    vocab: Vocab,
    b_fragments: int,
    batch_size: int = 256,
) -> list[SelectionResult]:
    """Frozen-teacher attention weights -> one SelectionResult per sample."""
    out = []
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        _, weights = teacher_forward(
            data.streams[sl], data.queries[sl], store, n_segment, vocab
        )
        for row, w in enumerate(weights.data):
            result = select_fragments(w, b_fragments)
            result.sample_index = start + row
            out.append(result)
    return out


def save_selections(path: str | Path, selections: list[SelectionResult]) -> None:
    with open(path, "w") as fh:
        for sel in selections:
            fh.write(
                json.dumps(
                    {
                        "sample_index": sel.sample_index,
                        "fragments": sel.fragments,
                        "weights": sel.weights,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_selections(path: str | Path) -> np.ndarray:
    """Selection cache -> (n_samples, B) fragment index array."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing selection cache: {path}")
    rows = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rows[int(rec["sample_index"])] = rec["fragments"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{line_no}: malformed selection: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty selection cache")
    n = max(rows) + 1
    if sorted(rows) != list(range(n)):
        raise DataError(f"{path}: selection cache has gaps in sample indices")
    return np.asarray([rows[i] for i in range(n)], dtype=np.int64)


def evidence_fragments(evidence_start: int, r_c: int, n_segment: int) -> set[int]:
    """Fragment indices overlapped by evidence occupying [start, start + r_c)."""
    first = evidence_start // n_segment
    last = (evidence_start + r_c - 1) // n_segment
    return set(range(first, last + 1))


def audit_evidence_top1(
    data: SplitArrays,
    store: ParameterStore,
    n_segment: int,
    vocab: Vocab,
    r_c: int,
    batch_size: int = 256,
) -> float:
    """Fraction of samples whose top-1 attention fragment contains evidence."""
    hits = 0
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        _, weights = teacher_forward(
            data.streams[sl], data.queries[sl], store, n_segment, vocab
        )
        top1 = weights.data.argmax(axis=-1)
        for row, frag in enumerate(top1):
            target = evidence_fragments(
                int(data.evidence_starts[start + row]), r_c, n_segment
            )
            hits += int(frag) in target
    return hits / len(data)
