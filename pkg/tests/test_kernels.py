"""Compiled vs numpy kernel backends: same semantics within float rounding."""

import numpy as np
import pytest

from sc2codec import kernels


@pytest.fixture(scope="module")
def both():
    if not kernels.HAVE_COMPILED:
        pytest.skip("compiled backend unavailable")
    return kernels.get_backend("numpy"), kernels.get_backend("cython")


def test_backend_selected():
    assert kernels.backend_name() in ("numpy", "cython")


def test_gemv_agreement(both, rng):
    pk, ck = both
    for dtype in (np.float32, np.float64):
        a = rng.standard_normal((17, 33)).astype(dtype)
        x = rng.standard_normal(33).astype(dtype)
        np.testing.assert_allclose(ck.gemv(a, x), pk.gemv(a, x), rtol=2e-6, atol=1e-7)


def test_depthwise_agreement(both, rng):
    pk, ck = both
    w = rng.standard_normal((12, 7)).astype(np.float32)
    win = rng.standard_normal((12, 7)).astype(np.float32)
    np.testing.assert_allclose(ck.depthwise_frame(w, win), pk.depthwise_frame(w, win), rtol=2e-6)


def test_gelu_agreement(both, rng):
    pk, ck = both
    x = rng.standard_normal(256).astype(np.float32) * 3
    np.testing.assert_allclose(ck.gelu_vec(x), pk.gelu_vec(x), rtol=1e-5, atol=1e-6)


def test_convnext_frame_agreement(both, rng):
    pk, ck = both
    c_l, c_h, k = 8, 16, 7
    args = dict(
        dw_w=rng.standard_normal((c_l, k)).astype(np.float32),
        dw_b=rng.standard_normal(c_l).astype(np.float32),
        ln_g=rng.standard_normal(c_l).astype(np.float32),
        ln_b=rng.standard_normal(c_l).astype(np.float32),
        w1=rng.standard_normal((c_h, c_l)).astype(np.float32),
        b1=rng.standard_normal(c_h).astype(np.float32),
        w2=rng.standard_normal((c_l, c_h)).astype(np.float32),
        b2=rng.standard_normal(c_l).astype(np.float32),
        grn_g=rng.standard_normal(c_h).astype(np.float32),
        grn_b=rng.standard_normal(c_h).astype(np.float32),
    )
    ss_p = np.zeros(c_h, dtype=np.float32)
    ss_c = np.zeros(c_h, dtype=np.float32)
    for _ in range(5):
        win = rng.standard_normal((c_l, k)).astype(np.float32)
        out_p = pk.convnext_frame(
            win, args["dw_w"], args["dw_b"], args["ln_g"], args["ln_b"], 1e-6,
            args["w1"], args["b1"], args["w2"], args["b2"],
            args["grn_g"], args["grn_b"], 1e-6, ss_p, True,
        )
        out_c = ck.convnext_frame(
            win, args["dw_w"], args["dw_b"], args["ln_g"], args["ln_b"], 1e-6,
            args["w1"], args["b1"], args["w2"], args["b2"],
            args["grn_g"], args["grn_b"], 1e-6, ss_c, True,
        )
        np.testing.assert_allclose(out_c, out_p, rtol=1e-4, atol=1e-5)
        np.testing.assert_allclose(ss_c, ss_p, rtol=1e-5, atol=1e-6)


def test_convnext_frame_matches_batch_block(rng):
    """Streaming block step must track the autodiff batch block (cumulative GRN)."""
    from sc2codec.autodiff import Tensor
    from sc2codec.layers import ConvNeXtBlock
    from sc2codec.streaming import _StreamBlock

    block = ConvNeXtBlock(6, 12, 7, np.random.default_rng(2), grn_cumulative=True)
    x = rng.standard_normal((6, 9)).astype(np.float32)
    batch_out = block(Tensor(x)).data
    stream = _StreamBlock(block, kernels.get_backend())
    outs = np.stack([stream.push(x[:, f]) for f in range(9)], axis=1)
    np.testing.assert_allclose(outs, batch_out, rtol=1e-4, atol=1e-5)
