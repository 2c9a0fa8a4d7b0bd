"""Seeded synthetic speech-like utterances for desk-scale training.

Each utterance is a harmonic stack at a random f0 in [80, 300] Hz (harmonics
up to 4 kHz with 1/h amplitude roll-off and random phases), amplitude-
modulated by a slow envelope, plus lowpass-filtered noise mixed at 20 dB SNR.
Utterance i of a dataset is derived from SeedSequence([seed, i]): the same
(seed, index) always produces bit-identical samples.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.signal import lfilter

from .wavio import write_wav

F0_RANGE = (80.0, 300.0)
HARMONIC_CEILING_HZ = 4000.0
NOISE_SNR_DB = 20.0
PEAK_LEVEL = 0.6


def synth_utterance(seed: int, index: int, n_samples: int, sample_rate: int = 16000) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    t = np.arange(n_samples) / sample_rate
    f0 = rng.uniform(*F0_RANGE)
    n_harm = max(1, int(HARMONIC_CEILING_HZ // f0))
    sig = np.zeros(n_samples)
    for h in range(1, n_harm + 1):
        sig += (1.0 / h) * np.sin(2.0 * np.pi * f0 * h * t + rng.uniform(0.0, 2.0 * np.pi))
    am_rate = rng.uniform(2.0, 6.0)
    sig *= 0.55 + 0.45 * np.sin(2.0 * np.pi * am_rate * t + rng.uniform(0.0, 2.0 * np.pi))

    noise = rng.standard_normal(n_samples)
    a = 0.9  # one-pole lowpass
    smooth = lfilter([1.0 - a], [1.0, -a], noise)
    sig_pow = float((sig**2).mean())
    noise_pow = float((smooth**2).mean())
    if noise_pow > 0:
        smooth *= np.sqrt(sig_pow / (noise_pow * 10.0 ** (NOISE_SNR_DB / 10.0)))
    out = sig + smooth
    peak = float(np.abs(out).max())
    if peak > 0:
        out *= PEAK_LEVEL / peak
    return out.astype(np.float32)


def synth_dataset(seed: int, count: int, seconds: float, sample_rate: int = 16000) -> list[np.ndarray]:
    n = int(round(seconds * sample_rate))
    return [synth_utterance(seed, i, n, sample_rate) for i in range(count)]


def write_synth_dataset(
    out_dir: str, seed: int, count: int, seconds: float, sample_rate: int = 16000
) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, utt in enumerate(synth_dataset(seed, count, seconds, sample_rate)):
        path = os.path.join(out_dir, f"synth_{seed:04d}_{i:05d}.wav")
        write_wav(path, utt, sample_rate)
        paths.append(path)
    return paths
