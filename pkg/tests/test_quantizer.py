"""RSVQ: scalar stage formulas, VQ search, telescoping, refresh, bit packing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sc2codec.autodiff import Tape, Tensor, backward, ops
from sc2codec.quantizer import (
    EncodingError,
    FramingError,
    IvqCodebook,
    IvqConfig,
    QuantizerConfig,
    ResidualScalarVectorQuantizer,
    TokenFrame,
    codebook_refresh,
    kmeans,
    nearest_code,
    pack_tokens,
    sq_levels,
    sq_round,
    unpack_tokens,
)


def test_sq_round_examples():
    # v = 0 -> u = 0.5 -> floor(1.5 + 0.5) = 2 -> level +1/3 (tie resolved up)
    assert sq_round(np.array([0.0]), 4)[0] == 2
    assert sq_levels(np.array([2]), 4)[0] == pytest.approx(1.0 / 3.0)
    # v = -1 -> index 0 -> level -1
    assert sq_round(np.array([-1.0]), 4)[0] == 0
    assert sq_levels(np.array([0]), 4)[0] == -1.0
    assert sq_round(np.array([1.0]), 4)[0] == 3


def test_sq_symbol_level_roundtrip():
    sym = np.arange(4)
    lev = sq_levels(sym, 4)
    np.testing.assert_array_equal(sq_round(lev, 4), sym)


def test_sq_quantize_frame_api(toy_codec, rng):
    q = toy_codec.quantizer
    sym, deq = q.sq_quantize(rng.standard_normal(64).astype(np.float32))
    assert sym.shape == (7,) and ((sym >= 0) & (sym < 4)).all()
    assert deq.shape == (64,)


def test_nearest_code_oracle():
    cb = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert nearest_code(np.array([[0.9, 0.8]]), cb)[0] == 1
    assert nearest_code(np.array([[1.0, 1.0]]), cb)[0] == 1
    # equidistant -> lowest index
    assert nearest_code(np.array([[0.5, 0.5]]), cb)[0] == 0


def test_nearest_code_exhaustive_oracle(rng):
    cb = rng.standard_normal((64, 8))
    pts = rng.standard_normal((40, 8))
    got = nearest_code(pts, cb)
    want = np.array([int(np.argmin(((cb - p) ** 2).sum(axis=1))) for p in pts])
    np.testing.assert_array_equal(got, want)


def test_rsvq_shapes_and_telescoping(toy_codec, rng):
    latent = Tensor(rng.standard_normal((64, 13)).astype(np.float32))
    res = toy_codec.quantizer.forward(latent)
    assert res.quantized.shape == (64, 13)
    assert len(res.tokens) == 13
    # exact telescoping with left-to-right summation
    q0 = res.sq_dequant
    e1 = toy_codec.quantizer.codebooks[0].entries.data[[t.vq1 for t in res.tokens]]
    e2 = toy_codec.quantizer.codebooks[1].entries.data[[t.vq2 for t in res.tokens]]
    np.testing.assert_array_equal(res.quantized.data, ((q0 + e1) + e2).T)


def test_rsvq_representable_point_is_fixed(rng):
    # constant scalar stage (zero down-proj) + well-separated codebooks make
    # re-quantization reproduce the construction exactly
    q = ResidualScalarVectorQuantizer(QuantizerConfig(latent_dim=4, ivq=IvqConfig(entries=8)), seed=0)
    q.down.weight.data[:] = 0.0
    q.down.bias.data[:] = 0.0
    cb1 = np.zeros((8, 4), dtype=np.float32)
    cb1[np.arange(8) % 8, np.arange(8) % 4] = 10.0 * (1 + np.arange(8))
    q.codebooks[0].entries.data = cb1
    q.codebooks[1].entries.data = (1e-3 * rng.standard_normal((8, 4))).astype(np.float32)
    token = TokenFrame(tuple(sq_round(np.tanh(q.down.bias.data), 4).tolist()), 5, 3)
    rep = q.dequantize_tokens([token])  # (4, 1): exactly representable
    res = q.forward(Tensor(rep))
    assert res.tokens == [token]
    np.testing.assert_array_equal(res.quantized.data, rep)
    final_residual = res.vq_stages[1].target.data - res.vq_stages[1].code.data
    np.testing.assert_allclose(final_residual, 0.0, atol=1e-6)


def test_rsvq_residual_norm_decreases(toy_codec, rng):
    q = toy_codec.quantizer
    latent = Tensor(rng.standard_normal((64, 50)).astype(np.float32))
    res = q.forward(latent, training=True)
    r1 = res.vq_stages[0].target.data
    r2 = res.vq_stages[1].target.data
    e2 = res.vq_stages[1].code.data
    assert np.linalg.norm(r2 - e2) <= np.linalg.norm(r1)


def test_rsvq_straight_through_identity(rng):
    """Gradient of quantized w.r.t. latent equals the surrogate (identity) path."""
    q = ResidualScalarVectorQuantizer(QuantizerConfig(latent_dim=6), seed=0)
    q.to_dtype(np.float64)
    latent = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    g_out = rng.standard_normal((6, 4))
    with Tape():
        res = q.forward(latent, training=True)
        backward(ops.sum_all(ops.mul(res.quantized, Tensor(g_out))))
    np.testing.assert_allclose(latent.grad, g_out, atol=1e-10)

    latent2 = Tensor(latent.data.copy(), requires_grad=True)
    with Tape():
        res2 = q.forward(latent2, surrogate=True)
        backward(ops.sum_all(ops.mul(res2.quantized, Tensor(g_out))))
    np.testing.assert_allclose(latent.grad, latent2.grad, atol=1e-10)


def test_usage_ema_and_dead_entries(rng):
    cb = IvqCodebook(IvqConfig(entries=8, decay=0.5, refresh_threshold=0.5), 4, rng)
    for _ in range(12):
        cb.update_usage(np.zeros(10, dtype=np.int64))  # only entry 0 used
    dead = cb.dead_entries()
    assert 0 not in dead and len(dead) == 7


def test_kmeans_single_cluster_oracle(rng):
    data = np.full((30, 4), 5.0) + 1e-6 * rng.standard_normal((30, 4))
    cents = kmeans(data, 1, rng)
    np.testing.assert_allclose(cents[0], np.full(4, 5.0), atol=1e-4)


def test_codebook_refresh_replaces_only_dead(rng):
    cb = IvqCodebook(IvqConfig(entries=8, decay=0.5, refresh_threshold=0.5), 3, rng)
    for _ in range(12):
        cb.update_usage(np.zeros(16, dtype=np.int64))
    live_before = cb.entries.data[0].copy()
    batch = np.full((40, 3), 5.0) + 1e-5 * rng.standard_normal((40, 3))
    replaced = codebook_refresh(cb, batch.astype(np.float32), rng)
    assert replaced == 7
    np.testing.assert_array_equal(cb.entries.data[0], live_before)
    np.testing.assert_allclose(cb.entries.data[1:], 5.0, atol=1e-2)


def test_codebook_refresh_no_dead_is_noop(rng):
    cb = IvqCodebook(IvqConfig(entries=4, decay=0.99, refresh_threshold=0.01), 3, rng)
    before = cb.entries.data.copy()
    assert codebook_refresh(cb, rng.standard_normal((10, 3)), rng) == 0
    np.testing.assert_array_equal(cb.entries.data, before)


def test_codebook_refresh_small_batch_samples_with_replacement(rng):
    cb = IvqCodebook(IvqConfig(entries=8, decay=0.5, refresh_threshold=0.5), 3, rng)
    for _ in range(12):
        cb.update_usage(np.zeros(16, dtype=np.int64))
    replaced = codebook_refresh(cb, rng.standard_normal((2, 3)), rng)  # batch < dead count
    assert replaced == 7


def test_refresh_improves_perplexity_statistically():
    passes = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cb = IvqCodebook(IvqConfig(entries=32, decay=0.3, refresh_threshold=0.2), 4, rng)
        cb.entries.data[:] = rng.normal(10.0, 0.01, size=cb.entries.data.shape)  # all far away
        data = rng.standard_normal((256, 4)).astype(np.float32)
        for _ in range(8):
            cb.update_usage(cb.quantize(data))
        before = cb.perplexity(cb.quantize(data))
        codebook_refresh(cb, data, rng)
        after = cb.perplexity(cb.quantize(data))
        if after >= before:
            passes += 1
    assert passes >= 18


# packing --------------------------------------------------------------------


def test_pack_all_zero_and_all_max():
    z = pack_tokens([TokenFrame((0,) * 7, 0, 0)])
    assert z == b"\x00\x00\x00\x00\x00"
    m = pack_tokens([TokenFrame((3,) * 7, 1023, 1023)])
    assert int.from_bytes(m, "big") >> (40 - 34) == (1 << 34) - 1


def test_pack_bit_layout_oracle():
    frame = TokenFrame((0, 1, 2, 3, 0, 1, 2), 5, 1023)
    bits = format(int.from_bytes(pack_tokens([frame]), "big") >> 6, "034b")
    assert bits == "00011011000110" + "0000000101" + "1111111111"


def test_pack_rejects_out_of_range():
    with pytest.raises(EncodingError):
        pack_tokens([TokenFrame((4, 0, 0, 0, 0, 0, 0), 0, 0)])
    with pytest.raises(EncodingError):
        pack_tokens([TokenFrame((0,) * 7, 1024, 0)])


def test_unpack_empty():
    assert unpack_tokens(b"", 0) == []


def test_unpack_truncated_raises_framing_error():
    blob = pack_tokens([TokenFrame((0,) * 7, 0, 0)])[:4]  # 32 of 34 bits
    with pytest.raises(FramingError):
        unpack_tokens(blob, 1)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.tuples(*[st.integers(0, 3)] * 7),
            st.integers(0, 1023),
            st.integers(0, 1023),
        ),
        min_size=0,
        max_size=40,
    )
)
def test_pack_unpack_roundtrip_property(frames):
    tokens = [TokenFrame(*f) for f in frames]
    assert unpack_tokens(pack_tokens(tokens), len(tokens)) == tokens


def test_payload_size_is_34_bits_per_frame(rng):
    tokens = [
        TokenFrame(tuple(rng.integers(0, 4, size=7).tolist()), int(rng.integers(0, 1024)), int(rng.integers(0, 1024)))
        for _ in range(500)
    ]
    payload = pack_tokens(tokens)
    assert len(payload) == -(-500 * 34 // 8)
