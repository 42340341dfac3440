"""Checkpoint evaluation with early/later forgetting buckets.

Loading rebuilds the model from checkpoint metadata, validates shapes
against the dataset, and reports accuracy overall and per placement bucket.
The serialized memory size is asserted constant across evaluated streams
(fixed-capacity storage law).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff.checkpoint import load_tensors
from .autodiff.params import ParameterStore
from .autodiff.rng import Rng
from .config import RunConfig
from .errors import ConfigError, DataError
from .memory import memory_snapshot_bytes, write_stream
from .model import Vocab, build_student_params
from .synthetic import config_from_manifest, load_manifest, load_split
from .train import split_accuracy


def load_student_checkpoint(path: str | Path) -> tuple[ParameterStore, RunConfig, dict]:
    values, meta = load_tensors(path)
    if meta.get("kind") != "student":
        raise DataError(f"{path}: not a student checkpoint (kind={meta.get('kind')!r})")
    run = RunConfig.from_dict(meta["config"])
    vocab = Vocab(n_items=run.synthetic.r_f)
    store = ParameterStore()
    build_student_params(
        store, run.model, vocab, run.synthetic.r_q, run.synthetic.r_a, Rng(0)
    )
    for name, arr in values.items():
        if name not in store:
            raise ConfigError(f"{path}: unexpected parameter {name!r} in checkpoint")
        want = store[name].shape
        got = tuple(arr.shape)
        if want != got:
            raise ConfigError(
                f"{path}: shape mismatch for {name}: checkpoint {got} vs model {want}"
            )
    store.load_values(values)
    return store, run, meta


def assert_fixed_memory_size(
    store: ParameterStore, run: RunConfig, lengths: tuple[int, ...] = (100, 1000)
) -> int:
    """Serialize final memories for different stream lengths; sizes must match."""
    vocab = Vocab(n_items=run.synthetic.r_f)
    rng = Rng(0).child("storage.probe")
    sizes = set()
    for length in lengths:
        stream = rng.integers(0, vocab.n_items, (1, length)).astype(np.int32)
        state = write_stream(stream, store, run.model, vocab)
        sizes.add(len(memory_snapshot_bytes(state)))
    if len(sizes) != 1:
        raise DataError(f"memory snapshot size varies with stream length: {sizes}")
    return sizes.pop()


def evaluate_checkpoint(
    checkpoint: str | Path, data_dir: str | Path, split: str = "test"
) -> dict:
    store, run, meta = load_student_checkpoint(checkpoint)
    manifest = load_manifest(data_dir)
    data_cfg = config_from_manifest(manifest)
    if data_cfg.r_f != run.synthetic.r_f or data_cfg.r_q != run.synthetic.r_q or (
        data_cfg.r_a != run.synthetic.r_a
    ):
        raise ConfigError(
            f"checkpoint was trained for (r_f={run.synthetic.r_f}, "
            f"r_q={run.synthetic.r_q}, r_a={run.synthetic.r_a}) but {data_dir} holds "
            f"(r_f={data_cfg.r_f}, r_q={data_cfg.r_q}, r_a={data_cfg.r_a})"
        )
    vocab = Vocab(n_items=run.synthetic.r_f)
    arrays = load_split(data_dir, split)
    metrics = split_accuracy(store, run.model, vocab, arrays, run.model.c_hop)
    metrics["split"] = split
    metrics["checkpoint"] = str(checkpoint)
    metrics["ablation"] = meta.get("ablation")
    metrics["seed"] = meta.get("seed")
    metrics["memory_bytes"] = assert_fixed_memory_size(
        store, run, lengths=(data_cfg.r_l, 2 * data_cfg.r_l)
    )
    return metrics


def write_metrics(path: str | Path, metrics: dict) -> None:
    Path(path).write_text(json.dumps(metrics, sort_keys=True, indent=1))


def plot_bucket_accuracy(records: list[dict], path: str | Path) -> None:
    """Early/later accuracy per evaluated checkpoint, as an SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [Path(r["checkpoint"]).stem + (f":{r['ablation']}" if r.get("ablation") else "") for r in records]
    early = [r["acc_early"] for r in records]
    later = [r["acc_later"] for r in records]
    x = np.arange(len(records))
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(records)), 3.2))
    width = 0.38
    ax.bar(x - width / 2, early, width, label="early")
    ax.bar(x + width / 2, later, width, label="later")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
