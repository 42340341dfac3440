"""Layer contracts: GRU gating, attention normalization, transformer shapes.

Derived expectations are recomputed in-test with independent 64-bit scalar
code (math.* loops or plain numpy), never by calling the layer under test.
"""

import math

import numpy as np
import pytest

from rehearsal_memory.autodiff import (
    ParameterStore,
    Rng,
    Tensor,
    check_gradients,
    gru_cell,
    init_decoder,
    init_encoder,
    init_gru,
    init_mha,
    layer_norm,
    multi_head_attention,
    reduce_mean,
    sinusoid_positions,
    transformer_decoder_with_memory,
    transformer_encoder,
)
from rehearsal_memory.errors import ConfigError, ShapeError

from .conftest import assert_close, store64


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


class TestGru:
    def _store(self, d, rng, zero=False):
        store = store64()
        init_gru(store, "g", d, rng)
        if zero:
            for name in store.names():
                store[name].data[:] = 0.0
        return store

    def test_zero_params_halve_state(self):
        rng = Rng(0)
        store = self._store(3, rng, zero=True)
        h = Tensor(rng.normal((2, 3)))
        x = Tensor(rng.normal((2, 3)))
        out = gru_cell(h, x, store.view("g"))
        assert_close(out.data, 0.5 * h.data, atol=1e-12)

    def test_zero_everything_stays_zero(self):
        store = self._store(3, Rng(1), zero=True)
        zero = Tensor(np.zeros((1, 3)))
        out = gru_cell(zero, zero, store.view("g"))
        assert_close(out.data, np.zeros((1, 3)), atol=0)

    def test_matches_scalar_oracle(self):
        d = 3
        rng = Rng(99)
        store = self._store(d, rng)
        h = rng.normal((1, d))
        x = rng.normal((1, d))
        got = gru_cell(Tensor(h), Tensor(x), store.view("g")).data[0]

        def col(mat, vec, bias, i):
            return sum(vec[j] * mat[j, i] for j in range(d)) + bias[i]

        w = {n: store[f"g.{n}"].data for n in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")}
        want = []
        for i in range(d):
            z = _sigmoid(col(w["wz"], x[0], w["bz"], i) + col(w["uz"], h[0], np.zeros(d), i))
            r = [_sigmoid(col(w["wr"], x[0], w["br"], k) + col(w["ur"], h[0], np.zeros(d), k)) for k in range(d)]
            rh = [r[k] * h[0][k] for k in range(d)]
            hc = math.tanh(col(w["wh"], x[0], w["bh"], i) + sum(rh[j] * w["uh"][j, i] for j in range(d)))
            want.append((1 - z) * h[0][i] + z * hc)
        assert_close(got, want, atol=1e-12, msg="gru vs scalar oracle")

    def test_shape_mismatch_rejected(self):
        store = self._store(3, Rng(2))
        with pytest.raises(ShapeError):
            gru_cell(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))), store.view("g"))
        with pytest.raises(ShapeError):
            gru_cell(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))), store.view("g"))


class TestMultiHeadAttention:
    def _store(self, d, rng):
        store = store64()
        init_mha(store, "a", d, rng)
        return store

    def test_single_position_ignores_query(self):
        d, rng = 8, Rng(5)
        store = self._store(d, rng)
        k = Tensor(rng.normal((1, 1, d)))
        v = Tensor(rng.normal((1, 1, d)))
        out1, attn = multi_head_attention(Tensor(rng.normal((1, 4, d))), k, v, store.view("a"), 4)
        out2, _ = multi_head_attention(Tensor(rng.normal((1, 4, d))), k, v, store.view("a"), 4)
        assert_close(out1.data, out2.data, atol=1e-12, msg="value projection independent of query")
        assert_close(attn.data, np.ones_like(attn.data), atol=0)

    def test_identical_keys_uniform_attention(self):
        d, rng = 8, Rng(6)
        store = self._store(d, rng)
        key_row = rng.normal((1, 1, d))
        keys = Tensor(np.repeat(key_row, 5, axis=1))
        values = Tensor(rng.normal((1, 5, d)))
        _, attn = multi_head_attention(Tensor(rng.normal((1, 2, d))), keys, values, store.view("a"), 4)
        assert_close(attn.data, np.full_like(attn.data, 0.2), atol=1e-12)

    def test_rows_sum_to_one(self):
        d, rng = 8, Rng(7)
        store = self._store(d, rng)
        x = Tensor(rng.normal((2, 6, d)))
        _, attn = multi_head_attention(x, x, x, store.view("a"), 4)
        assert_close(attn.data.sum(axis=-1), np.ones(attn.shape[:-1]), atol=1e-9)

    def test_matches_numpy_oracle(self):
        d, heads, length = 4, 2, 2
        rng = Rng(8)
        store = self._store(d, rng)
        q_in = rng.normal((1, length, d))
        out, _ = multi_head_attention(Tensor(q_in), Tensor(q_in), Tensor(q_in), store.view("a"), heads)

        def proj(x, name):
            return x @ store[f"a.{name}.w"].data + store[f"a.{name}.b"].data

        q, k, v = proj(q_in[0], "q"), proj(q_in[0], "k"), proj(q_in[0], "v")
        dh = d // heads
        ctx = np.zeros((length, d))
        for h in range(heads):
            qs, ks, vs = (m[:, h * dh : (h + 1) * dh] for m in (q, k, v))
            scores = qs @ ks.T / math.sqrt(dh)
            e = np.exp(scores - scores.max(axis=-1, keepdims=True))
            w = e / e.sum(axis=-1, keepdims=True)
            ctx[:, h * dh : (h + 1) * dh] = w @ vs
        want = proj(ctx, "o")
        assert_close(out.data[0], want, atol=1e-10, msg="mha vs numpy oracle")

    def test_indivisible_heads_rejected(self):
        store = self._store(6, Rng(9))
        x = Tensor(np.zeros((1, 2, 6)))
        with pytest.raises(ConfigError):
            multi_head_attention(x, x, x, store.view("a"), 4)

    def test_key_value_length_mismatch_rejected(self):
        store = self._store(8, Rng(10))
        q = Tensor(np.zeros((1, 2, 8)))
        with pytest.raises(ShapeError):
            multi_head_attention(q, Tensor(np.zeros((1, 3, 8))), Tensor(np.zeros((1, 4, 8))), store.view("a"), 4)


class TestEncoder:
    def _build(self, d=8, layers=3, rng=None):
        store = store64()
        init_encoder(store, "enc", d, layers, rng or Rng(11))
        return store

    def test_shape_contract(self):
        store = self._build()
        for n in (1, 4, 9):
            x = Tensor(Rng(n).normal((2, n, 8)))
            out = transformer_encoder(x, store.view("enc"), 3, 4)
            assert out.shape == (2, n, 8)

    def test_deterministic(self):
        store = self._build()
        x = Tensor(Rng(12).normal((2, 5, 8)))
        a = transformer_encoder(x, store.view("enc"), 3, 4)
        b = transformer_encoder(x, store.view("enc"), 3, 4)
        assert np.array_equal(a.data, b.data)

    def test_empty_sequence_rejected(self):
        store = self._build()
        with pytest.raises(ShapeError):
            transformer_encoder(Tensor(np.zeros((2, 0, 8))), store.view("enc"), 3, 4)

    def test_pad_rows_zeroed_and_inert(self):
        store = self._build()
        rng = Rng(13)
        x = rng.normal((1, 6, 8))
        valid = np.array([[True, True, True, True, False, False]])
        out1 = transformer_encoder(Tensor(x), store.view("enc"), 3, 4, valid=valid)
        x2 = x.copy()
        x2[0, 4:] = rng.normal((2, 8))  # permute pad-only tail
        out2 = transformer_encoder(Tensor(x2), store.view("enc"), 3, 4, valid=valid)
        assert_close(out1.data[0, :4], out2.data[0, :4], atol=1e-12, msg="real rows unchanged")
        assert_close(out1.data[0, 4:], np.zeros((2, 8)), atol=0, msg="pad rows zeroed")


def test_layer_norm_pre_affine_statistics():
    rng = Rng(14)
    x = Tensor(rng.normal((4, 6, 16)) * 3.0 + 1.5)
    out = layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    assert_close(out.mean(axis=-1), np.zeros((4, 6)), atol=1e-4)
    assert_close(out.var(axis=-1), np.ones((4, 6)), atol=1e-4)


def test_sinusoid_positions_shape_and_range():
    table = sinusoid_positions(12, 8)
    assert table.shape == (12, 8)
    assert np.abs(table).max() <= 1.0
    assert_close(table[0, 0::2], np.zeros(4), atol=0)  # sin(0) = 0


class TestDecoder:
    def _build(self, d=8, layers=3):
        store = store64()
        init_decoder(store, "dec", d, layers, Rng(15))
        return store

    def test_shape_contract(self):
        store = self._build()
        mem = Tensor(Rng(16).normal((2, 4, 8)))
        for L in (1, 3, 7):
            x = Tensor(Rng(L).normal((2, L, 8)))
            out = transformer_decoder_with_memory(x, mem, store.view("dec"), 3, 4)
            assert out.shape == (2, L, 8)

    def test_requires_memory(self):
        store = self._build()
        x = Tensor(np.zeros((1, 3, 8)))
        with pytest.raises(ShapeError):
            transformer_decoder_with_memory(x, Tensor(np.zeros((1, 0, 8))), store.view("dec"), 3, 4)

    def test_cross_rows_sum_to_one(self):
        store = self._build()
        x = Tensor(Rng(17).normal((2, 5, 8)))
        mem = Tensor(Rng(18).normal((2, 4, 8)))
        _, cross = transformer_decoder_with_memory(
            x, mem, store.view("dec"), 3, 4, return_cross_attn=True
        )
        assert len(cross) == 3
        for attn in cross:
            assert_close(attn.data.sum(axis=-1), np.ones(attn.shape[:-1]), atol=1e-6)

    def test_zeroed_cross_value_projection_ignores_memory(self):
        store = self._build()
        for i in range(3):
            store[f"dec.l{i}.cross.v.w"].data[:] = 0.0
            store[f"dec.l{i}.cross.v.b"].data[:] = 0.0
        x = Tensor(Rng(19).normal((1, 4, 8)))
        out1 = transformer_decoder_with_memory(x, Tensor(Rng(20).normal((1, 3, 8))), store.view("dec"), 3, 4)
        out2 = transformer_decoder_with_memory(x, Tensor(Rng(21).normal((1, 3, 8))), store.view("dec"), 3, 4)
        assert_close(out1.data, out2.data, atol=1e-12, msg="output independent of memory")


@pytest.mark.parametrize(
    "builder",
    ["gru", "mha", "encoder", "decoder"],
)
def test_layer_gradchecks_64bit(builder):
    rng = Rng(abs(hash(builder)) % 2**31)
    store = store64()
    d = 8
    if builder == "gru":
        init_gru(store, "m", d, rng)
        h = Tensor(rng.normal((2, d)))
        x = Tensor(rng.normal((2, d)))
        forward = lambda: reduce_mean(
            gru_cell(h, x, store.view("m")) * gru_cell(h, x, store.view("m"))
        )
    elif builder == "mha":
        init_mha(store, "m", d, rng)
        q = Tensor(rng.normal((2, 3, d)))
        forward = lambda: reduce_mean(multi_head_attention(q, q, q, store.view("m"), 4)[0] * multi_head_attention(q, q, q, store.view("m"), 4)[0])
    elif builder == "encoder":
        init_encoder(store, "m", d, 2, rng)
        x = Tensor(rng.normal((2, 4, d)))
        forward = lambda: reduce_mean(
            transformer_encoder(x, store.view("m"), 2, 4) * transformer_encoder(x, store.view("m"), 2, 4)
        )
    else:
        init_decoder(store, "m", d, 2, rng)
        x = Tensor(rng.normal((2, 4, d)))
        mem = Tensor(rng.normal((2, 3, d)))
        forward = lambda: reduce_mean(
            transformer_decoder_with_memory(x, mem, store.view("m"), 2, 4)
            * transformer_decoder_with_memory(x, mem, store.view("m"), 2, 4)
        )
    worst, _ = check_gradients(forward, store, rng.child("pick"), n_coords=40, epsilon=1e-6)
    assert worst < 1e-5, f"{builder}: {worst}"
