"""Two-stage training orchestration: teacher stage, then student stage.

Stage 1 trains the history sampler on raw streams, then freezes it and
caches one fragment selection per training sample. Stage 2 trains the
student (memory machine + rehearsal + reasoner) against the combined loss;
it reads only the selection cache, never teacher parameters. Ablations
switch off loss terms or replace the cached selections with random ones.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autodiff.checkpoint import save_tensors
from .autodiff.optim import adam_step
from .autodiff.params import ParameterStore
from .autodiff.rng import Rng
from .config import ABLATIONS, RunConfig
from .errors import ConfigError, DataError, NumericError
from .memory import chunk_stream, write_stream
from .model import ModelDims, Vocab, build_student_params, build_teacher_params
from .reasoner import LossWeights, combined_loss, reason, reason_loss
from .rehearsal import build_fragment_batch, rehearsal_losses
from .sampler import (
    audit_evidence_top1,
    compute_selections,
    save_selections,
    teacher_accuracy,
    train_teacher,
)
from .synthetic import SplitArrays, config_from_manifest, load_manifest, load_split

TEACHER_CHECKPOINT = "teacher.rmck"
STUDENT_CHECKPOINT = "student.rmck"
SELECTIONS_FILE = "selections.jsonl"
METRICS_FILE = "metrics.jsonl"


def _dataset_context(run: RunConfig, data_dir: str | Path):
    manifest = load_manifest(data_dir)
    data_cfg = config_from_manifest(manifest)
    if asdict(data_cfg) != asdict(run.synthetic):
        raise ConfigError(
            "config.synthetic does not match the dataset manifest under "
            f"{data_dir}: {asdict(run.synthetic)} vs {asdict(data_cfg)}"
        )
    vocab = Vocab(n_items=data_cfg.r_f)
    return manifest, data_cfg, vocab


def checkpoint_meta(run: RunConfig, kind: str, seed: int, extra: dict | None = None) -> dict:
    meta = {
        "kind": kind,
        "seed": seed,
        "config": run.to_dict(),
    }
    if extra:
        meta.update(extra)
    return meta


def save_store(path: str | Path, store: ParameterStore, meta: dict) -> None:
    save_tensors(path, {name: t.data for name, t in store.items()}, metadata=meta)


def run_teacher_stage(
    run: RunConfig, data_dir: str | Path, out_dir: str | Path, seed: int
) -> dict:
    """Train the history sampler, cache selections for every train sample."""
    run.validate()
    _, data_cfg, vocab = _dataset_context(run, data_dir)
    train_split = load_split(data_dir, "train")
    val_split = load_split(data_dir, "val")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    store = ParameterStore()
    build_teacher_params(
        store, run.model.d, vocab, data_cfg.r_q, data_cfg.r_a, Rng(seed).child("teacher.init")
    )
    metrics = train_teacher(
        train_split,
        store,
        run.model.n_segment,
        vocab,
        epochs=run.training.teacher_epochs,
        batch_size=run.training.teacher_batch_size,
        lr=run.training.teacher_lr,
        seed=seed,
        avg_from_epoch=run.training.teacher_avg_from_epoch,
        head_grad_scale=run.training.teacher_head_grad_scale,
    )
    val_acc = teacher_accuracy(val_split, store, run.model.n_segment, vocab)
    top1 = audit_evidence_top1(
        val_split, store, run.model.n_segment, vocab, data_cfg.r_c
    )
    selections = compute_selections(
        train_split, store, run.model.n_segment, vocab, run.rehearsal.b_fragments
    )
    save_selections(out / SELECTIONS_FILE, selections)
    save_store(
        out / TEACHER_CHECKPOINT,
        store,
        checkpoint_meta(run, "teacher", seed, {"val_acc": val_acc, "evidence_top1": top1}),
    )
    with open(out / "teacher_metrics.jsonl", "w") as fh:
        for rec in metrics:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return {
        "val_acc": val_acc,
        "evidence_top1": top1,
        "selections": len(selections),
        "loss_trace": [m["teacher_loss"] for m in metrics],
    }


def ablation_weights(base: LossWeights, ablation: str) -> LossWeights:
    if ablation == "no-rehearsal":
        return LossWeights(rec=0.0, fam=0.0, reason=base.reason)
    if ablation == "only-rec":
        return LossWeights(rec=base.rec, fam=0.0, reason=base.reason)
    if ablation == "only-fam":
        return LossWeights(rec=0.0, fam=base.fam, reason=base.reason)
    return LossWeights(rec=base.rec, fam=base.fam, reason=base.reason)


def random_selections(
    n_samples: int, c_f: int, b_fragments: int, seed: int
) -> np.ndarray:
    """Random-sampler ablation: B/2 random fragments per half, fixed per sample."""
    rng = Rng(seed).child("random.sampler")
    half = c_f // 2
    per_half = b_fragments // 2
    out = np.empty((n_samples, b_fragments), dtype=np.int64)
    for i in range(n_samples):
        first = rng.choice(half, size=per_half, replace=False)
        second = half + rng.choice(c_f - half, size=per_half, replace=False)
        out[i] = np.sort(np.concatenate([first, second]))
    return out


def predict_answers(
    store: ParameterStore,
    dims: ModelDims,
    vocab: Vocab,
    streams: np.ndarray,
    queries: np.ndarray,
    c_hop: int,
    batch_size: int = 128,
) -> np.ndarray:
    """Argmax answers; memory is built once per unique stream and reused
    across every query attached to it."""
    from .autodiff.tensor import take0

    preds = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), batch_size):
        sl = slice(start, min(start + batch_size, len(queries)))
        unique_streams, inverse = np.unique(streams[sl], axis=0, return_inverse=True)
        state = write_stream(unique_streams, store, dims, vocab)
        slots = take0(state.slots, inverse)
        logits = reason(slots, queries[sl], store, c_hop)
        preds[sl] = logits.data.argmax(axis=-1)
    return preds


def split_accuracy(
    store: ParameterStore,
    dims: ModelDims,
    vocab: Vocab,
    split: SplitArrays,
    c_hop: int,
) -> dict:
    preds = predict_answers(store, dims, vocab, split.streams, split.queries, c_hop)
    correct = preds == split.answers
    early = split.early
    n_early = int(early.sum())
    n_later = int((~early).sum())
    return {
        "acc": float(correct.mean()),
        "acc_early": float(correct[early].mean()) if n_early else float("nan"),
        "acc_later": float(correct[~early].mean()) if n_later else float("nan"),
        "n": len(split),
        "n_early": n_early,
        "n_later": n_later,
    }


def _batches(order: np.ndarray, batch_size: int, min_last: int = 2):
    """Contiguous batches over ``order``; a too-small tail is folded into the
    previous batch (fragment corruption needs >= 2 streams per batch)."""
    n = len(order)
    start = 0
    while start < n:
        end = min(start + batch_size, n)
        if 0 < n - end < min_last:
            end = n
        yield order[start:end]
        start = end


def run_student_stage(
    run: RunConfig,
    data_dir: str | Path,
    out_dir: str | Path,
    ablation: str = "full",
    selections_path: str | Path | None = None,
    seed: int = 0,
) -> dict:
    """Train the student model; writes metrics.jsonl and student.rmck."""
    if ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
    run.validate()
    _, data_cfg, vocab = _dataset_context(run, data_dir)
    train_split = load_split(data_dir, "train")
    val_split = load_split(data_dir, "val")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dims = run.model
    weights = ablation_weights(run.loss_weights, ablation)
    rehearse = ablation != "no-rehearsal"
    c_f = -(-data_cfg.r_l // dims.n_segment)

    frag_source: np.ndarray | None = None
    if rehearse:
        if ablation == "random-sampler":
            frag_source = random_selections(
                len(train_split), c_f, run.rehearsal.b_fragments, seed
            )
        else:
            if selections_path is None:
                raise DataError(
                    f"ablation {ablation!r} needs a selection cache; run train-teacher first"
                )
            from .sampler import load_selections

            frag_source = load_selections(selections_path)
            if len(frag_source) != len(train_split):
                raise DataError(
                    f"selection cache covers {len(frag_source)} samples but the "
                    f"train split has {len(train_split)}"
                )

    store = ParameterStore()
    build_student_params(
        store, dims, vocab, data_cfg.r_q, data_cfg.r_a, Rng(seed).child("student.init")
    )

    base_rng = Rng(seed)
    records = []
    metrics_path = out / METRICS_FILE
    with open(metrics_path, "w") as metrics_fh:
        for epoch in range(run.training.epochs):
            order = base_rng.child("shuffle", epoch).permutation(len(train_split))
            sums = {"l_rec": 0.0, "l_fam": 0.0, "l_r": 0.0}
            seen = 0
            for batch_no, idx in enumerate(
                _batches(order, run.training.batch_size, min_last=2 if rehearse else 1)
            ):
                step_rng = base_rng.child("step", epoch, batch_no)
                losses = _student_step(
                    store, run, dims, vocab, train_split, idx, frag_source,
                    weights, rehearse, step_rng,
                )
                for key, value in losses.items():
                    sums[key] += value * len(idx)
                seen += len(idx)
            val = split_accuracy(store, dims, vocab, val_split, dims.c_hop)
            record = {
                "epoch": epoch,
                "l_rec": sums["l_rec"] / seen if rehearse else None,
                "l_fam": sums["l_fam"] / seen if rehearse else None,
                "l_r": sums["l_r"] / seen,
                "val_acc": val["acc"],
                "val_acc_early": val["acc_early"],
                "val_acc_later": val["acc_later"],
            }
            records.append(record)
            metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
            metrics_fh.flush()
            save_store(
                out / STUDENT_CHECKPOINT,
                store,
                checkpoint_meta(run, "student", seed, {"ablation": ablation, "epoch": epoch}),
            )
    return {"records": records, "checkpoint": str(out / STUDENT_CHECKPOINT)}


def _student_step(
    store: ParameterStore,
    run: RunConfig,
    dims: ModelDims,
    vocab: Vocab,
    split: SplitArrays,
    idx: np.ndarray,
    frag_source: np.ndarray | None,
    weights: LossWeights,
    rehearse: bool,
    rng: Rng,
) -> dict:
    streams = split.streams[idx]
    store.zero_grad()
    state = write_stream(streams, store, dims, vocab)
    logits = reason(state.slots, split.queries[idx], store, dims.c_hop)
    l_r = reason_loss(logits, split.answers[idx])

    if rehearse:
        segments, seg_valid = chunk_stream(streams, dims.n_segment, vocab.pad)
        batch = build_fragment_batch(
            segments, seg_valid, frag_source[idx], streams, vocab, rng.child("fragments")
        )
        l_rec, l_fam = rehearsal_losses(
            batch, state.slots, store, dims, vocab, run.rehearsal, rng.child("negatives")
        )
    else:
        from .autodiff.tensor import Tensor

        zero = np.asarray(0.0, dtype=l_r.dtype)
        l_rec, l_fam = Tensor(zero), Tensor(zero)

    loss = combined_loss(l_rec, l_fam, l_r, weights)
    if not np.isfinite(loss.data).all():
        raise NumericError("student loss became non-finite; aborting")
    loss.backward()
    adam_step(
        store,
        store.gradients(),
        lr=run.optim.lr,
        beta1=run.optim.beta1,
        beta2=run.optim.beta2,
        eps=run.optim.eps,
    )
    return {
        "l_rec": float(l_rec.data),
        "l_fam": float(l_fam.data),
        "l_r": float(l_r.data),
    }
