"""MDCT/IMDCT analysis-synthesis filterbank, STFT magnitude, and log-mel.

The MDCT uses a sine window at 50% overlap (hop = 160 samples = 10 ms at
16 kHz), computed by direct matrix multiplication against a precomputed cosine
basis.  Internal accumulation is float64; results are returned in the input
dtype.  Framing: the signal is zero-padded by one hop at the start (frame f
spans samples [f*hop - hop, f*hop + hop)) and to a multiple of hop at the end,
giving ceil(len / hop) frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    pass


class DimensionError(ValueError):
    pass


def sine_window(window_length: int) -> np.ndarray:
    n = np.arange(window_length)
    return np.sin(np.pi / window_length * (n + 0.5))


def mdct_basis(hop: int) -> np.ndarray:
    """Cosine basis B[n, k] = cos(pi/M * (n + 0.5 + M/2) * (k + 0.5)), (2M, M)."""
    m = hop
    n = np.arange(2 * m)[:, None]
    k = np.arange(m)[None, :]
    return np.cos(np.pi / m * (n + 0.5 + m / 2.0) * (k + 0.5))


@dataclass
class MdctConfig:
    hop: int = 160
    sample_rate: int = 16000
    window: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.hop < 1:
            raise ConfigurationError(f"hop must be positive, got {self.hop}")
        if self.window is None:
            self.window = sine_window(2 * self.hop)
        self.window = np.asarray(self.window, dtype=np.float64)
        if self.window.shape != (2 * self.hop,):
            raise ConfigurationError(
                f"window length {self.window.shape} must be 2*hop = {2 * self.hop}"
            )
        pb = self.window[: self.hop] ** 2 + self.window[self.hop :] ** 2
        if np.max(np.abs(pb - 1.0)) > 1e-7:
            raise ConfigurationError("window violates the Princen-Bradley condition")
        self._basis = mdct_basis(self.hop)

    @property
    def window_length(self) -> int:
        return 2 * self.hop

    @property
    def basis(self) -> np.ndarray:
        return self._basis


@dataclass
class MdctSpectrum:
    coefficients: np.ndarray  # (frames, bins)

    def __post_init__(self):
        self.coefficients = np.atleast_2d(np.asarray(self.coefficients))

    @property
    def frames(self) -> int:
        return self.coefficients.shape[0]

    @property
    def bins(self) -> int:
        return self.coefficients.shape[1]


def frame_count(n_samples: int, hop: int) -> int:
    return -(-n_samples // hop)


def mdct_forward(audio: np.ndarray, cfg: MdctConfig) -> MdctSpectrum:
    """Analyze audio into an (F, hop) MDCT spectrum, F = ceil(len / hop)."""
    audio = np.asarray(audio)
    m = cfg.hop
    n = audio.shape[0]
    n_frames = frame_count(n, m)
    if n_frames == 0:
        return MdctSpectrum(np.zeros((0, m), dtype=audio.dtype))
    pad_end = n_frames * m - n
    xp = np.concatenate(
        [np.zeros(m), audio.astype(np.float64), np.zeros(pad_end)]
    )
    idx = np.arange(2 * m)[None, :] + m * np.arange(n_frames)[:, None]
    frames = xp[idx] * cfg.window
    coeffs = frames @ cfg.basis
    return MdctSpectrum(coeffs.astype(audio.dtype, copy=False))


def imdct(spec: MdctSpectrum, cfg: MdctConfig) -> np.ndarray:
    """Synthesize audio of length F * hop by windowed overlap-add.

    Interior samples (one hop in from each end) reconstruct the analysis input
    exactly up to rounding; the final hop has a single-frame alias tail and is
    emitted as-is.
    """
    m = cfg.hop
    if spec.frames and spec.bins != m:
        raise DimensionError(f"spectrum has {spec.bins} bins, config hop is {m}")
    n_frames = spec.frames
    if n_frames == 0:
        return np.zeros(0, dtype=spec.coefficients.dtype)
    frames = (spec.coefficients.astype(np.float64) @ cfg.basis.T) * ((2.0 / m) * cfg.window)
    buf = np.zeros((n_frames + 1) * m)
    for f in range(n_frames):
        buf[f * m : f * m + 2 * m] += frames[f]
    return buf[m:].astype(spec.coefficients.dtype, copy=False)


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(audio: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Center-padded periodic-Hann STFT magnitudes, (bins, frames)."""
    if fft_size < 2 or (fft_size & (fft_size - 1)) != 0:
        raise ConfigurationError(f"fft_size must be a power of two, got {fft_size}")
    audio = np.asarray(audio, dtype=np.float64)
    n = audio.shape[0]
    n_frames = n // hop + 1
    pad_l = fft_size // 2
    need = (n_frames - 1) * hop + fft_size
    pad_r = max(0, need - pad_l - n)
    xp = np.pad(audio, (pad_l, pad_r))
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * hann_periodic(fft_size)
    return np.abs(np.fft.rfft(frames, axis=1)).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass
class MelConfig:
    fft_size: int = 1024
    hop: int = 256
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = 1e-5
    sample_rate: int = 16000

    def __post_init__(self):
        if not (self.f_min < self.f_max <= self.sample_rate / 2):
            raise ConfigurationError(
                f"need f_min < f_max <= nyquist, got [{self.f_min}, {self.f_max}]"
            )
        self._fb = mel_filterbank(self)

    @property
    def filterbank(self) -> np.ndarray:
        return self._fb


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular HTK-mel filterbank, (n_mels, fft_size // 2 + 1)."""
    n_bins = cfg.fft_size // 2 + 1
    freqs = np.linspace(0, cfg.sample_rate / 2, n_bins)
    mel_pts = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins))
    for i in range(cfg.n_mels):
        lo, ce, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (freqs - lo) / max(ce - lo, 1e-12)
        down = (hi - freqs) / max(hi - ce, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    if np.any(fb.sum(axis=1) <= 0):
        raise ConfigurationError("mel filterbank has an empty row; increase fft_size")
    return fb


def mel_spectrogram(audio: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Natural-log mel spectrogram of magnitudes, floored: (n_mels, frames)."""
    mag = stft_magnitude(audio, cfg.fft_size, cfg.hop)
    return np.log(np.maximum(cfg.filterbank @ mag, cfg.log_floor))
