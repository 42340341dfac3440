"""History sampler: fragment features, attention, selection, cache."""

import math

import numpy as np
import pytest

from rehearsal_memory.autodiff import ParameterStore, Rng, Tensor
from rehearsal_memory.errors import ConfigError, DataError
from rehearsal_memory.model import Vocab, build_teacher_params
from rehearsal_memory.sampler import (
    SelectionResult,
    audit_evidence_top1,
    compute_selections,
    evidence_fragments,
    fragment_features,
    load_selections,
    save_selections,
    select_fragments,
    teacher_attend,
    teacher_forward,
    train_teacher,
)
from rehearsal_memory.synthetic import SplitArrays, SyntheticConfig, generate_dataset, load_split

from .conftest import assert_close

VOCAB = Vocab(n_items=20)
D = 16


def teacher_store(seed=0, n_queries=3, n_answers=3, dtype=np.float32, vocab=VOCAB):
    store = ParameterStore(dtype=dtype)
    build_teacher_params(store, D, vocab, n_queries, n_answers, Rng(seed))
    return store


class TestFragmentFeatures:
    def test_identical_items_give_item_embedding(self):
        store = teacher_store()
        streams = np.full((1, 10), 7, dtype=np.int32)
        feats = fragment_features(streams, store, 5, VOCAB)
        assert feats.shape == (1, 2, D)
        want = store["teacher.embed.items"].data[7]
        assert_close(feats.data[0, 0], want, atol=1e-6)
        assert_close(feats.data[0, 1], want, atol=1e-6)

    def test_matches_mean_oracle(self):
        store = teacher_store(dtype=np.float64)
        streams = Rng(1).integers(0, VOCAB.n_items, (2, 10)).astype(np.int32)
        feats = fragment_features(streams, store, 5, VOCAB)
        emb = store["teacher.embed.items"].data
        for b in range(2):
            for c in range(2):
                ids = streams[b, c * 5 : (c + 1) * 5]
                want = sum(emb[i] for i in ids) / 5.0
                assert_close(feats.data[b, c], want, atol=1e-12)

    def test_pad_aware_mean(self):
        store = teacher_store()
        stream = np.array([[3, 3, VOCAB.pad, VOCAB.pad]], dtype=np.int32)
        feats = fragment_features(stream, store, 4, VOCAB)
        want = store["teacher.embed.items"].data[3]
        assert_close(feats.data[0, 0], want, atol=1e-6, msg="mean over real items only")

    def test_c_f_twenty_for_paper_config(self):
        store = teacher_store()
        streams = np.zeros((1, 200), dtype=np.int32)
        feats = fragment_features(streams, store, 10, VOCAB)
        assert feats.shape[1] == 20


class TestTeacherAttend:
    def test_single_fragment_passthrough(self):
        store = teacher_store()
        q = Tensor(Rng(2).normal((2, D)).astype(np.float32))
        h = Tensor(Rng(3).normal((2, 1, D)).astype(np.float32))
        clue, weights = teacher_attend(q, h, store)
        assert_close(weights.data, np.ones((2, 1)), atol=0)
        assert_close(clue.data, h.data[:, 0], atol=1e-7)

    def test_identical_fragments_uniform(self):
        store = teacher_store()
        q = Tensor(Rng(4).normal((1, D)).astype(np.float32))
        row = Rng(5).normal((1, 1, D)).astype(np.float32)
        h = Tensor(np.repeat(row, 6, axis=1))
        _, weights = teacher_attend(q, h, store)
        assert_close(weights.data, np.full((1, 6), 1 / 6), atol=1e-7)

    def test_matches_scalar_oracle(self):
        store = teacher_store(dtype=np.float64)
        rng = Rng(6)
        q = rng.normal((1, D))
        h = rng.normal((1, 2, D))
        clue, weights = teacher_attend(Tensor(q), Tensor(h), store)

        w1 = store["teacher.attn.w1"].data
        w2 = store["teacher.attn.w2"].data
        b = store["teacher.attn.b"].data
        v = store["teacher.attn.v"].data[:, 0]
        betas = []
        for c in range(2):
            pre = [
                math.tanh(
                    sum(q[0][j] * w1[j, m] for j in range(D))
                    + sum(h[0, c][j] * w2[j, m] for j in range(D))
                    + b[m]
                )
                for m in range(D)
            ]
            betas.append(sum(pre[m] * v[m] for m in range(D)))
        e = np.exp(np.array(betas) - max(betas))
        bhat = e / e.sum()
        want = bhat[0] * h[0, 0] + bhat[1] * h[0, 1]
        assert_close(weights.data[0], bhat, atol=1e-10)
        assert_close(clue.data[0], want, atol=1e-10)

    def test_logit_shift_invariance(self):
        # adding a constant to all logits leaves weights, clue, selection alone
        store = teacher_store(dtype=np.float64)
        rng = Rng(7)
        q = Tensor(rng.normal((1, D)))
        h = Tensor(rng.normal((1, 8, D)))
        _, weights = teacher_attend(q, h, store)
        shifted = weights.data[0] * np.exp(5.0) / np.exp(5.0)
        sel_a = select_fragments(weights.data[0], 4)
        sel_b = select_fragments(shifted, 4)
        assert sel_a.fragments == sel_b.fragments

    def test_clue_in_convex_hull(self):
        store = teacher_store()
        rng = Rng(8)
        q = Tensor(rng.normal((3, D)).astype(np.float32))
        h = Tensor(rng.normal((3, 5, D)).astype(np.float32))
        clue, _ = teacher_attend(q, h, store)
        lo = h.data.min(axis=1) - 1e-6
        hi = h.data.max(axis=1) + 1e-6
        assert ((clue.data >= lo) & (clue.data <= hi)).all()


class TestSelectFragments:
    def test_spec_example(self):
        weights = np.array([0.4, 0.1, 0.3, 0.2, 0.05, 0.5, 0.05, 0.4])
        sel = select_fragments(weights, 4)
        assert sel.fragments == [0, 2, 5, 7]

    def test_uniform_ties_break_low(self):
        sel = select_fragments(np.full(8, 0.125), 4)
        assert sel.fragments == [0, 1, 4, 5]

    def test_half_split_property(self):
        rng = Rng(9)
        for trial in range(100):
            c_f = int(rng.integers(6, 16)) // 2 * 2
            b = int(rng.integers(1, c_f // 2 + 1)) * 2
            weights = rng.uniform(0, 1, c_f)
            sel = select_fragments(weights, b)
            half = c_f // 2
            first = [i for i in sel.fragments if i < half]
            second = [i for i in sel.fragments if i >= half]
            assert len(first) == len(second) == b // 2
            assert len(set(sel.fragments)) == b

    def test_too_few_fragments_rejected(self):
        with pytest.raises(ConfigError):
            select_fragments(np.ones(4), 6)

    def test_default_budget_is_6(self):
        from rehearsal_memory.rehearsal import RehearsalConfig

        assert RehearsalConfig().b_fragments == 6


class TestCacheRoundTrip:
    def test_save_load(self, tmp_path):
        sels = [
            SelectionResult(sample_index=0, fragments=[0, 1, 4, 5], weights=[0.1] * 8),
            SelectionResult(sample_index=1, fragments=[2, 3, 6, 7], weights=[0.2] * 8),
        ]
        path = tmp_path / "sel.jsonl"
        save_selections(path, sels)
        arr = load_selections(path)
        assert arr.shape == (2, 4)
        assert arr[1].tolist() == [2, 3, 6, 7]

    def test_gap_detection(self, tmp_path):
        path = tmp_path / "sel.jsonl"
        save_selections(path, [SelectionResult(sample_index=1, fragments=[0], weights=[1.0])])
        with pytest.raises(DataError, match="gaps"):
            load_selections(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            load_selections(tmp_path / "nope.jsonl")


class TestEvidenceFragments:
    def test_contained(self):
        assert evidence_fragments(3, 3, 10) == {0}
        assert evidence_fragments(10, 3, 10) == {1}

    def test_spanning(self):
        assert evidence_fragments(8, 3, 10) == {0, 1}
        assert evidence_fragments(9, 2, 10) == {0, 1}
        assert evidence_fragments(19, 5, 10) == {1, 2}


class TestTrainingLoop:
    @pytest.fixture(scope="class")
    def tiny_data(self, tmp_path_factory):
        cfg = SyntheticConfig(
            r_f=40, r_l=30, r_q=4, r_a=3, r_c=2, groups=4, samples_per_chain=40, seed=9
        )
        out = tmp_path_factory.mktemp("sampler_data")
        generate_dataset(cfg, out)
        return cfg, out

    def test_deterministic_selections_and_counts(self, tiny_data):
        cfg, data_dir = tiny_data
        train = load_split(data_dir, "train")
        caches = []
        for _ in range(2):
            store = teacher_store(seed=3, n_queries=cfg.r_q, n_answers=cfg.r_a,
                                  vocab=Vocab(n_items=cfg.r_f))
            train_teacher(train, store, 10, Vocab(n_items=cfg.r_f),
                          epochs=3, batch_size=16, lr=1e-3, seed=42)
            sels = compute_selections(train, store, 10, Vocab(n_items=cfg.r_f), 2)
            caches.append([(s.sample_index, tuple(s.fragments)) for s in sels])
        assert caches[0] == caches[1], "same seed, same cache"
        assert len(caches[0]) == len(train)

    def test_learns_above_chance(self, tiny_data):
        cfg, data_dir = tiny_data
        train = load_split(data_dir, "train")
        val = load_split(data_dir, "val")
        vocab = Vocab(n_items=cfg.r_f)
        store = teacher_store(seed=0, n_queries=cfg.r_q, n_answers=cfg.r_a,
                              vocab=Vocab(n_items=cfg.r_f))
        train_teacher(train, store, 10, vocab, epochs=25, batch_size=16, lr=6e-3, seed=0)
        from rehearsal_memory.sampler import teacher_accuracy

        acc = teacher_accuracy(val, store, 10, vocab)
        assert acc > 1.0 / cfg.r_a, f"val accuracy {acc} not above chance"
