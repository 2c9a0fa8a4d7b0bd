"""Multi-resolution STFT discriminator for adversarial training.

Three sub-discriminators consume STFT magnitudes at fft sizes 512/1024/2048
(hop = fft/4).  Each is a 4-layer strided 2-D conv stack at 32 channels with
LeakyReLU slope 0.2; the final layer emits a logits map, the first three
post-activation maps are the feature-matching features.  Shape arithmetic per
layer: out = floor((in + 2*pad - kernel) / stride) + 1, with (freq, time)
strides (4,2), (2,2), (2,2), (1,1), kernels (5,3)x3 then (3,3), padding
(2,1)x3 then (1,1).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops
from .dsp import hann_periodic
from .layers import INIT_STD

LEAKY_SLOPE = 0.2


class AudioTooShortError(ValueError):
    pass


class _Conv2dParams:
    def __init__(self, c_in, c_out, kernel, stride, pad, rng):
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.weight = Tensor(
            rng.normal(0.0, INIT_STD, size=(c_out, c_in, *kernel)).astype(np.float32),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class SubDiscriminator:
    def __init__(self, fft_size: int, channels: int, rng):
        self.fft_size = fft_size
        self.hop = fft_size // 4
        self.window = hann_periodic(fft_size)
        self.convs = [
            _Conv2dParams(1, channels, (5, 3), (4, 2), (2, 1), rng),
            _Conv2dParams(channels, channels, (5, 3), (2, 2), (2, 1), rng),
            _Conv2dParams(channels, channels, (5, 3), (2, 2), (2, 1), rng),
            _Conv2dParams(channels, 1, (3, 3), (1, 1), (1, 1), rng),
        ]

    def named_params(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for i, c in enumerate(self.convs):
            out.append((f"{prefix}.conv{i}.weight", c.weight))
            out.append((f"{prefix}.conv{i}.bias", c.bias))
        return out

    def forward(self, audio: Tensor) -> tuple[Tensor, list[Tensor]]:
        mag = ops.stft_magnitude_op(audio, self.fft_size, self.hop, self.window)
        h = ops.reshape(ops.transpose(mag), (1, mag.shape[1], mag.shape[0]))
        feats = []
        for conv in self.convs[:-1]:
            h = ops.leaky_relu(conv(h), LEAKY_SLOPE)
            feats.append(h)
        logits = self.convs[-1](h)
        return logits, feats


class SpectralDiscriminator:
    def __init__(self, seed: int = 0, fft_sizes=(512, 1024, 2048), channels: int = 32):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.fft_sizes = tuple(fft_sizes)
        self.subs = [SubDiscriminator(n, channels, rng) for n in self.fft_sizes]

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for sub in self.subs:
            out.extend(sub.named_params(f"disc.fft{sub.fft_size}"))
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def forward(self, audio: Tensor) -> tuple[list[Tensor], list[list[Tensor]]]:
        """Returns per-sub logits maps and per-sub lists of feature maps."""
        n = audio.data.shape[0]
        largest = max(self.fft_sizes)
        if n < largest:
            raise AudioTooShortError(f"need at least {largest} samples, got {n}")
        logits, feats = [], []
        for sub in self.subs:
            lg, ft = sub.forward(audio)
            logits.append(lg)
            feats.append(ft)
        return logits, feats
