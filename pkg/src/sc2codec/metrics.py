"""Objective metrics (LSD, SNR, mel distance) and the paired t-test.

The t-test p-value is computed from the Student-t CDF via the regularized
incomplete beta function, evaluated with a modified-Lentz continued fraction
to 1e-10 absolute tolerance (no scipy on this path; scipy appears only as an
independent oracle in the tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import MelConfig, mel_spectrogram, stft_magnitude

LSD_FFT = 1024
LSD_HOP = 256
LSD_POWER_FLOOR = 1e-9
SNR_CAP_DB = 99.0


def lsd(ref: np.ndarray, hyp: np.ndarray) -> float:
    """Log-spectral distance in dB-like units.

    P = |STFT|^2 + 1e-9 (fft 1024, hop 256); per frame the RMS over bins of
    10*(log10 P_ref - log10 P_hyp), averaged over frames.
    """
    if len(ref) != len(hyp):
        raise ValueError(f"length mismatch {len(ref)} vs {len(hyp)}")
    p_ref = stft_magnitude(ref, LSD_FFT, LSD_HOP) ** 2 + LSD_POWER_FLOOR
    p_hyp = stft_magnitude(hyp, LSD_FFT, LSD_HOP) ** 2 + LSD_POWER_FLOOR
    d = 10.0 * (np.log10(p_ref) - np.log10(p_hyp))
    return float(np.mean(np.sqrt(np.mean(d * d, axis=0))))


def snr(ref: np.ndarray, hyp: np.ndarray) -> float:
    """10*log10(||ref||^2 / ||ref-hyp||^2), capped at +/-99 dB."""
    if len(ref) != len(hyp):
        raise ValueError(f"length mismatch {len(ref)} vs {len(hyp)}")
    ref = np.asarray(ref, dtype=np.float64)
    hyp = np.asarray(hyp, dtype=np.float64)
    err = float(((ref - hyp) ** 2).sum())
    sig = float((ref**2).sum())
    if err == 0.0:
        return SNR_CAP_DB
    if sig == 0.0:
        return -SNR_CAP_DB
    return float(np.clip(10.0 * np.log10(sig / err), -SNR_CAP_DB, SNR_CAP_DB))


def mel_distance(ref: np.ndarray, hyp: np.ndarray, cfg: MelConfig | None = None) -> float:
    """Mean absolute log-mel difference (the validation-metric twin of mel loss)."""
    if len(ref) != len(hyp):
        raise ValueError(f"length mismatch {len(ref)} vs {len(hyp)}")
    cfg = cfg or MelConfig()
    return float(np.mean(np.abs(mel_spectrogram(ref, cfg) - mel_spectrogram(hyp, cfg))))


def align_lengths(ref: np.ndarray, hyp: np.ndarray) -> np.ndarray:
    """Trim or zero-pad hyp to the reference length."""
    if len(hyp) >= len(ref):
        return hyp[: len(ref)]
    return np.concatenate([hyp, np.zeros(len(ref) - len(hyp), dtype=hyp.dtype)])


# ---------------------------------------------------------------------------
# Student-t via regularized incomplete beta
# ---------------------------------------------------------------------------

_BETACF_TOL = 1e-10
_BETACF_MAX_ITER = 500
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_TOL:
            return h
    raise RuntimeError(f"incomplete beta continued fraction failed for a={a} b={b} x={x}")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, dof: float) -> float:
    """Two-sided tail probability of Student-t with ``dof`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betainc_reg(dof / 2.0, 0.5, dof / (dof + t * t))


@dataclass
class TTestResult:
    t_statistic: float
    p_value: float
    n: int
    mean_difference: float


def paired_t_test(scores_a, scores_b) -> TTestResult:
    """Two-sided paired t-test.

    Zero-variance differences short-circuit: p = 0 when the means differ,
    p = 1 when they are equal.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired t-test needs two equal-length 1-D score lists")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs n >= 2")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n, mean)
        return TTestResult(math.inf if mean > 0 else -math.inf, 0.0, n, mean)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, t_sf_two_sided(t, n - 1), n, mean)
