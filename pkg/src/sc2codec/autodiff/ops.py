"""Differentiable operations over :class:`~sc2codec.autodiff.tensor.Tensor`.

Conventions: 1-D feature maps are channels-first ``(C, F)``; per-frame ops
(layer norm, GRN, linear) take frames-first ``(F, C)``.  Every op computes the
forward value with numpy and registers a closure with the active tape that maps
the output gradient to input gradients.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor, record

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DimensionError(ValueError):
    """Shape/contract mismatch between operands."""


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient ``g`` to ``shape`` by summing broadcast axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return record(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return record(a.data * c, (a,), lambda g: (g * c,))
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return record(out, (a, b), bwd)


def square(x: Tensor) -> Tensor:
    return record(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def bwd(g):
        return (g * 0.5 / np.maximum(out, 1e-30),)

    return record(out, (x,), bwd)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)
    return record(out, (x,), lambda g: (g / x.data,))


def abs_(x: Tensor) -> Tensor:
    out = np.abs(x.data)
    return record(out, (x,), lambda g: (g * np.sign(x.data),))


def clip_min(x: Tensor, floor: float) -> Tensor:
    out = np.maximum(x.data, floor)

    def bwd(g):
        return (g * (x.data > floor),)

    return record(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record(out, (x,), lambda g: (g * (1.0 - out * out),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with the erf formulation."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * phi

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (phi + x.data * pdf),)

    return record(out, (x,), bwd)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def bwd(g):
        return (g * np.where(pos, 1.0, slope),)

    return record(out, (x,), bwd)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity on values, barrier for gradients."""
    return Tensor(x.data, requires_grad=False)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return record(out, (x,), lambda g: (np.full_like(x.data, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def bwd(g):
        return (np.full_like(x.data, float(g) / n),)

    return record(out, (x,), bwd)


def frobenius_norm(x: Tensor) -> Tensor:
    """sqrt of the sum of squares, with a gradient-safe zero guard."""
    n = float(np.sqrt((x.data.astype(np.float64) ** 2).sum()))
    out = np.asarray(n, dtype=x.dtype)

    def bwd(g):
        return (float(g) * x.data / max(n, 1e-20),)

    return record(out, (x,), bwd)


def mean_abs_error(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return mean_all(abs_(sub(a, b)))


def mean_square_error(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return mean_all(square(sub(a, b)))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return record(out, (a, b), bwd)


def transpose(x: Tensor) -> Tensor:
    return record(np.ascontiguousarray(x.data.T), (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y[f, t] = sum_s x[f, s] * weight[t, s] (+ bias[t])."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear: input {x.shape} incompatible with weight {weight.shape}"
        )
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} vs weight {weight.shape}")
        out = out + bias.data

        def bwd(g):
            return g @ weight.data, g.T @ x.data, g.sum(axis=0)

        return record(out, (x, weight, bias), bwd)

    def bwd_nb(g):
        return g @ weight.data, g.T @ x.data

    return record(out, (x, weight), bwd_nb)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup table[indices]; backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    out = table.data[idx]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return record(out, (table,), bwd)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _conv1d_pads(kernel: int, stride: int, causal: bool) -> int:
    if kernel < 1 or stride < 1:
        raise ValueError(f"invalid conv config kernel={kernel} stride={stride}")
    return kernel - 1 if causal else (kernel - 1) // 2


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None,
    stride: int = 1,
    groups: int = 1,
    causal: bool = True,
) -> Tensor:
    """1-D convolution over (C_in, F) with left (causal) or centered padding.

    Output length is ceil(F / stride); in causal mode output frame t depends
    only on input frames <= t * stride.
    """
    c_in, n_frames = x.shape
    c_out, c_in_g, kernel = weight.shape
    if c_in % groups or c_out % groups or c_in_g != c_in // groups:
        raise DimensionError(
            f"conv1d: weight {weight.shape} incompatible with input {x.shape}, groups={groups}"
        )
    pad_l = _conv1d_pads(kernel, stride, causal)
    out_len = -(-n_frames // stride)
    reach = (out_len - 1) * stride + kernel
    pad_r = max(0, reach - pad_l - n_frames)
    xp = np.pad(x.data, ((0, 0), (pad_l, pad_r)))
    depthwise = groups == c_in and c_out == c_in

    y = np.zeros((c_out, out_len), dtype=x.dtype)
    for k in range(kernel):
        xk = xp[:, k : k + out_len * stride : stride]
        if depthwise:
            y += weight.data[:, 0, k][:, None] * xk
        elif groups == 1:
            y += weight.data[:, :, k] @ xk
        else:
            cig, cog = c_in // groups, c_out // groups
            for gi in range(groups):
                y[gi * cog : (gi + 1) * cog] += (
                    weight.data[gi * cog : (gi + 1) * cog, :, k]
                    @ xk[gi * cig : (gi + 1) * cig]
                )
    if bias is not None:
        y += bias.data[:, None]

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for k in range(kernel):
            xk = xp[:, k : k + out_len * stride : stride]
            if depthwise:
                gw[:, 0, k] = (g * xk).sum(axis=1)
                gxp[:, k : k + out_len * stride : stride] += weight.data[:, 0, k][:, None] * g
            elif groups == 1:
                gw[:, :, k] = g @ xk.T
                gxp[:, k : k + out_len * stride : stride] += weight.data[:, :, k].T @ g
            else:
                cig, cog = c_in // groups, c_out // groups
                for gi in range(groups):
                    go_g = g[gi * cog : (gi + 1) * cog]
                    gw[gi * cog : (gi + 1) * cog, :, k] = go_g @ xk[gi * cig : (gi + 1) * cig].T
                    gxp[gi * cig : (gi + 1) * cig, k : k + out_len * stride : stride] += (
                        weight.data[gi * cog : (gi + 1) * cog, :, k].T @ go_g
                    )
        gx = gxp[:, pad_l : pad_l + n_frames]
        if bias is not None:
            return gx, gw, g.sum(axis=1)
        return gx, gw

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(y, inputs, bwd)


def conv1d_transposed(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None,
    stride: int,
    causal: bool = True,
) -> Tensor:
    """Transposed 1-D convolution; weight is (C_in, C_out, K).

    Output length is exactly F * stride.  Causal mode: output frame f depends
    only on input frames <= floor(f / stride); the trailing overlap tail is
    discarded.
    """
    c_in, n_frames = x.shape
    w_cin, c_out, kernel = weight.shape
    if w_cin != c_in:
        raise DimensionError(f"conv1d_transposed: weight {weight.shape} vs input {x.shape}")
    if stride < 1 or kernel < 1:
        raise ValueError(f"invalid conv config kernel={kernel} stride={stride}")
    shift = 0 if causal else (kernel - stride) // 2
    out_len = n_frames * stride
    full_len = max((n_frames - 1) * stride + kernel, shift + out_len)
    y_full = np.zeros((c_out, full_len), dtype=x.dtype)
    for k in range(kernel):
        y_full[:, k : k + n_frames * stride : stride] += weight.data[:, :, k].T @ x.data
    y = np.ascontiguousarray(y_full[:, shift : shift + out_len])
    if bias is not None:
        y += bias.data[:, None]

    def bwd(g):
        g_full = np.zeros((c_out, full_len), dtype=g.dtype)
        g_full[:, shift : shift + out_len] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(weight.data)
        for k in range(kernel):
            gk = g_full[:, k : k + n_frames * stride : stride]
            gx += weight.data[:, :, k] @ gk
            gw[:, :, k] = x.data @ gk.T
        if bias is not None:
            return gx, gw, g.sum(axis=1)
        return gx, gw

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(y, inputs, bwd)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None,
    stride: tuple[int, int],
    padding: tuple[int, int],
) -> Tensor:
    """Strided 2-D convolution over (C_in, H, W) with zero padding."""
    c_in, h, w = x.shape
    c_out, w_cin, kh, kw = weight.shape
    if w_cin != c_in:
        raise DimensionError(f"conv2d: weight {weight.shape} vs input {x.shape}")
    sh, sw = stride
    ph, pw = padding
    out_h = (h + 2 * ph - kh) // sh + 1
    out_w = (w + 2 * pw - kw) // sw + 1
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"conv2d: input {x.shape} too small for kernel ({kh},{kw})")
    xp = np.zeros((c_in, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    xp[:, ph : ph + h, pw : pw + w] = x.data

    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = np.ascontiguousarray(view[:, ::sh, ::sw].transpose(0, 3, 4, 1, 2))
    w_mat = weight.data.reshape(c_out, -1)
    cols_mat = cols.reshape(c_in * kh * kw, out_h * out_w)
    y = (w_mat @ cols_mat).reshape(c_out, out_h, out_w)
    if bias is not None:
        y += bias.data[:, None, None]

    def bwd(g):
        g_mat = g.reshape(c_out, -1)
        gw = (g_mat @ cols_mat.T).reshape(weight.data.shape)
        gcols = (w_mat.T @ g_mat).reshape(c_in, kh, kw, out_h, out_w)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + out_h * sh : sh, j : j + out_w * sw : sw] += gcols[:, i, j]
        gx = gxp[:, ph : ph + h, pw : pw + w]
        if bias is not None:
            return gx, gw, g.sum(axis=(1, 2))
        return gx, gw

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(y, inputs, bwd)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-frame normalization of (F, C) over channels, then affine."""
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = gamma.data * xhat + beta.data

    def bwd(g):
        gxhat = g * gamma.data
        m1 = gxhat.mean(axis=1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
        gx = inv_std * (gxhat - m1 - xhat * m2)
        return gx.astype(x.dtype, copy=False), (g * xhat).sum(axis=0), g.sum(axis=0)

    return record(y, (x, gamma, beta), bwd)


def grn(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-6,
    cumulative: bool = False,
) -> Tensor:
    """Global response normalization over (F, C).

    Global mode: G[c] is the L2 norm of channel c over all frames.  Cumulative
    mode: G[f, c] uses frames 0..f only, so streaming inference can reproduce
    it exactly with running accumulators.
    Output: gamma * (x * N) + beta + x, with N = G / (mean_c G + eps).
    """
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"grn: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    n_ch = x.shape[1]
    if cumulative:
        s = np.cumsum(x.data * x.data, axis=0)
        g_norm = np.sqrt(s)
        m = g_norm.mean(axis=1, keepdims=True)
        n_fac = g_norm / (m + eps)
    else:
        s = (x.data * x.data).sum(axis=0)
        g_norm = np.sqrt(s)
        m = g_norm.mean()
        n_fac = g_norm / (m + eps)
    y = gamma.data * (x.data * n_fac) + beta.data + x.data

    def bwd(g):
        b_term = g * gamma.data * x.data
        inv_g = np.where(g_norm > 0, 1.0 / np.where(g_norm > 0, g_norm, 1.0), 0.0)
        if cumulative:
            t = inv_g * (b_term / (m + eps) - ((b_term * g_norm).sum(axis=1, keepdims=True)) / ((m + eps) ** 2 * n_ch))
            rev = np.cumsum(t[::-1], axis=0)[::-1]
            gx = g * (gamma.data * n_fac + 1.0) + x.data * rev
        else:
            a_vec = b_term.sum(axis=0)
            corr = (a_vec * g_norm).sum() / ((m + eps) ** 2 * n_ch)
            gx = g * (gamma.data * n_fac + 1.0) + x.data * (inv_g * (a_vec / (m + eps) - corr))
        g_gamma = (g * x.data * n_fac).sum(axis=0)
        g_beta = g.sum(axis=0)
        return gx.astype(x.dtype, copy=False), g_gamma, g_beta

    return record(y, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# signal ops with spectral adjoint backward rules
# ---------------------------------------------------------------------------


def stft_magnitude_op(
    audio: Tensor, fft_size: int, hop: int, window: np.ndarray, mag_eps: float = 1e-12
) -> Tensor:
    """Differentiable center-padded STFT magnitude, (frames, bins).

    ``mag_eps`` is added under the square root to keep the gradient finite at
    exact spectral zeros; it is negligible against real signal energy.
    """
    n = audio.data.shape[0]
    n_frames = n // hop + 1
    pad_l = fft_size // 2
    need = (n_frames - 1) * hop + fft_size
    pad_r = max(0, need - pad_l - n)
    xp = np.pad(audio.data, (pad_l, pad_r))
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * window
    spec = np.fft.rfft(frames, axis=1)
    re, im = spec.real, spec.imag
    mag = np.sqrt(re * re + im * im + mag_eps).astype(audio.dtype)

    def bwd(g):
        scale = g / mag
        h = (scale * re) + 1j * (scale * im)
        h[:, 1:-1] *= 0.5
        g_frames = fft_size * np.fft.irfft(h, n=fft_size, axis=1)
        g_frames = (g_frames * window).astype(audio.dtype)
        gxp = np.zeros_like(xp)
        np.add.at(gxp, idx, g_frames)
        return (gxp[pad_l : pad_l + n],)

    return record(mag, (audio,), bwd)


def imdct_op(spec: Tensor, basis: np.ndarray, window: np.ndarray, hop: int) -> Tensor:
    """Differentiable IMDCT overlap-add: (F, bins) -> audio of length F * hop.

    Emits samples [0, F*hop); the pre-time warm-up half of the first frame is
    dropped, the aliased final half-frame is included.
    """
    n_frames = spec.shape[0]
    frames = (spec.data @ basis.T) * ((2.0 / hop) * window)
    buf = np.zeros(((n_frames + 1) * hop,), dtype=spec.dtype)
    for f in range(n_frames):
        buf[f * hop : f * hop + 2 * hop] += frames[f]
    out = buf[hop:]

    def bwd(g):
        gbuf = np.concatenate([np.zeros(hop, dtype=g.dtype), g])
        g_frames = np.empty((n_frames, 2 * hop), dtype=g.dtype)
        for f in range(n_frames):
            g_frames[f] = gbuf[f * hop : f * hop + 2 * hop]
        g_frames = g_frames * ((2.0 / hop) * window)
        return ((g_frames @ basis).astype(spec.dtype),)

    return record(out, (spec,), bwd)
