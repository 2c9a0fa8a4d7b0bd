"""Pure-numpy implementations of the per-frame streaming kernels.

These are the reference semantics for the compiled extension: one call
processes exactly one frame, so results never depend on how the input was
chunked.  The compiled twin in ``_ckern.pyx`` must match these within float
rounding (erf/library differences of a few ulp are tolerated across backends,
never within one).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)

NAME = "numpy"


def gemv(a2d: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product; one fixed-shape BLAS call per frame."""
    return a2d @ x


def depthwise_frame(w: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Depthwise conv tap: w, win are (C, K); returns (C,)."""
    return (w * win).sum(axis=1)


def gelu_vec(x: np.ndarray) -> np.ndarray:
    return x * (0.5 * (1.0 + erf(x * _INV_SQRT2)))


def convnext_frame(
    dw_win: np.ndarray,
    dw_w: np.ndarray,
    dw_b: np.ndarray,
    ln_g: np.ndarray,
    ln_b: np.ndarray,
    ln_eps: float,
    w1: np.ndarray,
    b1: np.ndarray,
    w2: np.ndarray,
    b2: np.ndarray,
    grn_g: np.ndarray,
    grn_b: np.ndarray,
    grn_eps: float,
    grn_sumsq: np.ndarray,
    grn_cumulative: bool,
) -> np.ndarray:
    """One ConvNeXt-v2 block step on the frame ending the window ``dw_win``.

    dw conv -> layer norm -> expand linear -> GELU -> GRN (running channel
    norms accumulated into ``grn_sumsq`` in place) -> contract linear ->
    residual add.  ``grn_cumulative`` False freezes the accumulator read-only
    (global-GRN models are not streamable; the flag exists for completeness).
    """
    x_cur = dw_win[:, -1]
    h = (dw_w * dw_win).sum(axis=1) + dw_b
    mu = h.mean()
    d = h - mu
    var = (d * d).mean()
    h = ln_g * (d / np.sqrt(var + ln_eps)) + ln_b
    z = w1 @ h + b1
    z = gelu_vec(z)
    if grn_cumulative:
        grn_sumsq += z * z
    g = np.sqrt(grn_sumsq)
    m = g.mean()
    z = grn_g * (z * (g / (m + grn_eps))) + grn_b + z
    y = w2 @ z + b2
    return y + x_cur
