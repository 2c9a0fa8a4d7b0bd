"""Mirror-symmetric encoder/decoder built from causal ConvNeXt-v2 blocks.

Encoder: input conv (bins -> c_l) -> K blocks -> downsampling conv (stride 2)
-> output conv (c_l -> latent).  The decoder mirrors it: input conv (latent ->
c_l) -> transposed upsampling conv -> K blocks -> output conv (c_l -> bins).
Every named module contributes one distillation tap; tap count is 2K + 6.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, ops
from .layers import Conv1d, ConvNeXtBlock, ConvTranspose1d, Layer


class ConfigurationError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass
class CodecConfig:
    causal: bool = True
    c_l: int = 200
    c_h: int = 400
    k_blocks: int = 8
    mdct_bins: int = 160
    latent_dim: int = 64
    downsample_factor: int = 2
    conv_kernel: int = 7
    updown_kernel: int = 4
    block_depthwise: bool = True
    grn_mode: str = "auto"  # cumulative | global | auto (cumulative iff causal)

    def __post_init__(self):
        if self.c_l >= self.c_h:
            raise ConfigurationError(f"need c_l < c_h, got {self.c_l} >= {self.c_h}")
        if self.k_blocks < 1:
            raise ConfigurationError("k_blocks must be >= 1")
        if min(self.mdct_bins, self.latent_dim, self.downsample_factor) < 1:
            raise ConfigurationError("channel counts and factors must be positive")
        if self.grn_mode not in ("auto", "cumulative", "global"):
            raise ConfigurationError(f"unknown grn_mode {self.grn_mode!r}")

    @property
    def n_taps(self) -> int:
        return 2 * self.k_blocks + 6

    @property
    def grn_cumulative(self) -> bool:
        if self.grn_mode == "auto":
            return self.causal
        return self.grn_mode == "cumulative"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(**d)


# Paper-scale variants: student (causal low), teacher (non-causal high), the
# two intermediates used by the staged distillation schemes, and a desk-scale
# toy pair for statistical runs.
VARIANTS = {
    "student": dict(causal=True, c_l=200, c_h=400, k_blocks=8),
    "teacher": dict(causal=False, c_l=256, c_h=512, k_blocks=8),
    "causal_high": dict(causal=True, c_l=256, c_h=512, k_blocks=8),
    "noncausal_low": dict(causal=False, c_l=200, c_h=400, k_blocks=8),
    "toy_student": dict(causal=True, c_l=32, c_h=64, k_blocks=2),
    "toy_teacher": dict(causal=False, c_l=48, c_h=96, k_blocks=2),
}


def variant_config(name: str, **overrides) -> CodecConfig:
    if name not in VARIANTS:
        raise ConfigurationError(f"unknown variant {name!r}; options: {sorted(VARIANTS)}")
    kw = dict(VARIANTS[name])
    kw.update(overrides)
    return CodecConfig(**kw)


class CodecModel:
    """Built encoder/decoder with named modules in pipeline order."""

    def __init__(self, config: CodecConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(np.random.PCG64(seed))
        c = config
        grn_cum = c.grn_cumulative
        self.encoder: list[tuple[str, Layer]] = [
            ("enc.in", Conv1d(c.mdct_bins, c.c_l, c.conv_kernel, rng, causal=c.causal)),
            *[
                (
                    f"enc.block{i + 1}",
                    ConvNeXtBlock(
                        c.c_l,
                        c.c_h,
                        c.conv_kernel,
                        rng,
                        causal=c.causal,
                        depthwise=c.block_depthwise,
                        grn_cumulative=grn_cum,
                    ),
                )
                for i in range(c.k_blocks)
            ],
            (
                "enc.down",
                Conv1d(
                    c.c_l, c.c_l, c.updown_kernel, rng, stride=c.downsample_factor, causal=c.causal
                ),
            ),
            ("enc.out", Conv1d(c.c_l, c.latent_dim, c.conv_kernel, rng, causal=c.causal)),
        ]
        self.decoder: list[tuple[str, Layer]] = [
            ("dec.in", Conv1d(c.latent_dim, c.c_l, c.conv_kernel, rng, causal=c.causal)),
            (
                "dec.up",
                ConvTranspose1d(
                    c.c_l, c.c_l, c.updown_kernel, c.downsample_factor, rng, causal=c.causal
                ),
            ),
            *[
                (
                    f"dec.block{i + 1}",
                    ConvNeXtBlock(
                        c.c_l,
                        c.c_h,
                        c.conv_kernel,
                        rng,
                        causal=c.causal,
                        depthwise=c.block_depthwise,
                        grn_cumulative=grn_cum,
                    ),
                )
                for i in range(c.k_blocks)
            ],
            ("dec.out", Conv1d(c.c_l, c.mdct_bins, c.conv_kernel, rng, causal=c.causal)),
        ]

    # -- structure ---------------------------------------------------------

    def modules(self) -> list[tuple[str, Layer]]:
        return [*self.encoder, *self.decoder]

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, mod in self.modules():
            out.extend(mod.named_params(name))
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def tap_names(self) -> list[str]:
        return [name for name, _ in self.modules()]

    def to_dtype(self, dtype) -> None:
        for _, mod in self.modules():
            mod.to_dtype(dtype)

    # -- forward -----------------------------------------------------------

    def encode(self, spec) -> tuple[Tensor, list[tuple[str, Tensor]]]:
        """Spectrum (F, bins) -> latent (latent_dim, ceil(F/2)) plus encoder taps."""
        x = spec if isinstance(spec, Tensor) else Tensor(np.asarray(spec))
        if x.ndim != 2 or x.shape[1] != self.config.mdct_bins:
            raise DimensionError(
                f"expected (frames, {self.config.mdct_bins}) spectrum, got {x.shape}"
            )
        h = ops.transpose(x)
        taps = []
        for name, mod in self.encoder:
            h = mod(h)
            taps.append((name, h))
        return h, taps

    def decode(self, latent: Tensor) -> tuple[Tensor, list[tuple[str, Tensor]]]:
        """Latent (latent_dim, F') -> spectrum (F' * 2, bins) plus decoder taps."""
        if latent.ndim != 2 or latent.shape[0] != self.config.latent_dim:
            raise DimensionError(
                f"expected ({self.config.latent_dim}, frames) latent, got {latent.shape}"
            )
        h = latent
        taps = []
        for name, mod in self.decoder:
            h = mod(h)
            taps.append((name, h))
        return ops.transpose(h), taps


def build(config: CodecConfig, seed: int = 0) -> CodecModel:
    return CodecModel(config, seed=seed)


def count_params(model: CodecModel) -> dict[str, int]:
    """Exact per-module parameter counts plus 'total'."""
    out = {name: mod.param_count() for name, mod in model.modules()}
    out["total"] = sum(out.values())
    return out


def count_flops(model: CodecModel, seconds: float = 1.0, sample_rate: int = 16000) -> dict[str, int]:
    """Per-module FLOPs for `seconds` of audio under the documented convention.

    One multiply-accumulate = 2 FLOPs (bias excluded); norms and activations
    use the per-element costs documented in layers.py.  Frame counts follow the
    pipeline: 1 MDCT frame per `mdct_bins` samples, halved by the downsampler.
    """
    frames = int(round(seconds * sample_rate / model.config.mdct_bins))
    out: dict[str, int] = {}
    f = frames
    for name, mod in model.modules():
        out[name] = mod.flops(f)
        f = mod.out_frames(f)
    out["total"] = sum(out.values())
    return out


def mirror_report(model: CodecModel) -> tuple[list[str], list[str]]:
    """Encoder names with down->up substitution vs reversed decoder names with
    in/out roles swapped; equal lists certify mirror symmetry."""

    def role(name: str) -> str:
        return name.split(".", 1)[1].rstrip("0123456789")

    enc = [role(n) for n, _ in model.encoder]
    enc_sub = ["up" if r == "down" else r for r in enc]
    dec = [role(n) for n, _ in model.decoder][::-1]
    swap = {"in": "out", "out": "in"}
    dec_sub = [swap.get(r, r) for r in dec]
    return enc_sub, dec_sub
