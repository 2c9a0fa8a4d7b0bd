"""16-bit PCM WAV I/O pinned to 16 kHz mono; no resampling."""

from __future__ import annotations

import wave

import numpy as np

REQUIRED_RATE = 16000
REQUIRED_CHANNELS = 1
REQUIRED_SAMPWIDTH = 2
INT16_SCALE = 32768.0


class WavFormatError(ValueError):
    pass


def read_wav(path: str) -> np.ndarray:
    """Read a 16 kHz mono 16-bit PCM WAV into float32 in [-1, 1)."""
    try:
        with wave.open(path, "rb") as wf:
            rate, channels, width = wf.getframerate(), wf.getnchannels(), wf.getsampwidth()
            if rate != REQUIRED_RATE:
                raise WavFormatError(
                    f"{path}: sample rate {rate} Hz unsupported; resample to 16 kHz "
                    "externally (this toolkit performs no rate conversion)"
                )
            if channels != REQUIRED_CHANNELS:
                raise WavFormatError(
                    f"{path}: {channels} channels unsupported; downmix to mono externally"
                )
            if width != REQUIRED_SAMPWIDTH:
                raise WavFormatError(f"{path}: {8 * width}-bit samples unsupported; use 16-bit PCM")
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / INT16_SCALE


def write_wav(path: str, samples: np.ndarray, sample_rate: int = REQUIRED_RATE) -> None:
    """Write float samples as 16-bit PCM with saturating conversion."""
    x = np.asarray(samples, dtype=np.float64) * INT16_SCALE
    pcm = np.clip(np.round(x), -32768, 32767).astype("<i2")
    with wave.open(path, "wb") as wf:
        wf.setnchannels(REQUIRED_CHANNELS)
        wf.setsampwidth(REQUIRED_SAMPWIDTH)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())
