"""Residual scalar-vector quantization: one scalar stage plus two VQ stages.

The scalar stage projects the latent to 7 dims, squashes with tanh, and rounds
each dim to 4 uniform levels in [-1, 1] (14 bits).  Two 1024-entry vector
quantizers refine successive residuals (10 + 10 bits), for 34 bits per frame.
Training uses straight-through gradients and an EMA-usage-triggered k-means
refresh of dead codebook entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import Tensor, ops
from .layers import Linear


class TokenFrame(NamedTuple):
    sq: tuple[int, ...]  # 7 symbols in [0, 4)
    vq1: int  # [0, 1024)
    vq2: int  # [0, 1024)


@dataclass
class SqConfig:
    dims: int = 7
    levels: int = 4

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("scalar quantizer needs at least 2 levels")
        if (self.levels & (self.levels - 1)) != 0:
            raise ValueError("levels must be a power of two for exact bit packing")

    @property
    def bits(self) -> int:
        return self.dims * (self.levels - 1).bit_length()


@dataclass
class IvqConfig:
    entries: int = 1024
    decay: float = 0.99
    refresh_threshold: float = 0.01  # fraction of uniform usage

    def __post_init__(self):
        if (self.entries & (self.entries - 1)) != 0:
            raise ValueError("codebook size must be a power of two")

    @property
    def bits(self) -> int:
        return (self.entries - 1).bit_length()


@dataclass
class QuantizerConfig:
    latent_dim: int = 64
    sq: SqConfig = None
    ivq: IvqConfig = None
    n_vq_stages: int = 2

    def __post_init__(self):
        if self.sq is None:
            self.sq = SqConfig()
        if self.ivq is None:
            self.ivq = IvqConfig()

    @property
    def bits_per_frame(self) -> int:
        return self.sq.bits + self.n_vq_stages * self.ivq.bits

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "sq": {"dims": self.sq.dims, "levels": self.sq.levels},
            "ivq": {
                "entries": self.ivq.entries,
                "decay": self.ivq.decay,
                "refresh_threshold": self.ivq.refresh_threshold,
            },
            "n_vq_stages": self.n_vq_stages,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizerConfig":
        return cls(
            latent_dim=d["latent_dim"],
            sq=SqConfig(**d["sq"]),
            ivq=IvqConfig(**d["ivq"]),
            n_vq_stages=d["n_vq_stages"],
        )


def sq_round(v: np.ndarray, levels: int) -> np.ndarray:
    """Symbols for tanh-bounded values: floor(u*(L-1)+0.5), ties resolved up."""
    u = (v + 1.0) * 0.5
    return np.clip(np.floor(u * (levels - 1) + 0.5), 0, levels - 1).astype(np.int64)


def sq_levels(symbols: np.ndarray, levels: int, dtype=np.float32):
    return (2.0 * symbols / (levels - 1) - 1.0).astype(dtype)


def nearest_code(residual: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Argmin squared-distance index per frame; ties take the lowest index."""
    d = (
        (residual * residual).sum(axis=1, keepdims=True)
        - 2.0 * residual @ entries.T
        + (entries * entries).sum(axis=1)
    )
    return np.argmin(d, axis=1)


class IvqCodebook:
    """VQ codebook trained by gradient on the codebook loss, with usage EMA."""

    def __init__(self, cfg: IvqConfig, latent_dim: int, rng: np.random.Generator):
        self.cfg = cfg
        self.entries = Tensor(
            rng.normal(0.0, 0.02, size=(cfg.entries, latent_dim)).astype(np.float32),
            requires_grad=True,
        )
        self.usage_ema = np.full(cfg.entries, 1.0 / cfg.entries)

    def quantize(self, residual: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(self.entries.data)):
            raise FloatingPointError("codebook contains non-finite entries")
        return nearest_code(residual, self.entries.data)

    def update_usage(self, indices: np.ndarray) -> None:
        freq = np.bincount(indices, minlength=self.cfg.entries) / max(len(indices), 1)
        self.usage_ema = self.cfg.decay * self.usage_ema + (1.0 - self.cfg.decay) * freq

    def dead_entries(self) -> np.ndarray:
        return np.flatnonzero(self.usage_ema < self.cfg.refresh_threshold / self.cfg.entries)

    def perplexity(self, indices: np.ndarray) -> float:
        freq = np.bincount(indices, minlength=self.cfg.entries) / max(len(indices), 1)
        nz = freq[freq > 0]
        return float(np.exp(-(nz * np.log(nz)).sum()))


def kmeans(data: np.ndarray, k: int, rng: np.random.Generator, iters: int = 10) -> np.ndarray:
    """Plain seeded Lloyd iterations; empty clusters re-seeded from the data."""
    n = data.shape[0]
    replace = n < k
    centroids = data[rng.choice(n, size=k, replace=replace)].copy()
    for _ in range(iters):
        d = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d, axis=1)
        for j in range(k):
            sel = assign == j
            if sel.any():
                centroids[j] = data[sel].mean(axis=0)
            else:
                centroids[j] = data[rng.integers(0, n)]
    return centroids


def codebook_refresh(
    codebook: IvqCodebook, batch_residuals: np.ndarray, rng: np.random.Generator
) -> int:
    """Re-seat under-used entries on k-means centroids of recent residuals.

    Returns the number of replaced entries.  Live entries are untouched;
    replaced entries get their usage reset to uniform so they are not culled
    again before seeing traffic.
    """
    dead = codebook.dead_entries()
    k = len(dead)
    if k == 0 or len(batch_residuals) == 0:
        return 0
    cents = kmeans(batch_residuals.astype(np.float64), k, rng)
    noise = rng.normal(0.0, 1e-4, size=cents.shape)
    codebook.entries.data[dead] = (cents + noise).astype(codebook.entries.dtype)
    codebook.usage_ema[dead] = 1.0 / codebook.cfg.entries
    return k


class StageIntermediate(NamedTuple):
    target: Tensor  # residual entering the stage (frames, dim)
    code: Tensor  # code chosen by the stage, gradient flows to the codebook


class RsvqResult(NamedTuple):
    quantized: Tensor  # (latent_dim, F)
    tokens: list[TokenFrame]
    sq_v: Tensor  # pre-rounding tanh features (F, dims)
    sq_q: np.ndarray  # rounded level values (F, dims)
    sq_dequant: np.ndarray  # scalar-stage output (F, latent_dim)
    vq_stages: list[StageIntermediate]
    indices: list[np.ndarray]


class ResidualScalarVectorQuantizer:
    def __init__(self, cfg: QuantizerConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.down = Linear(cfg.latent_dim, cfg.sq.dims, rng)
        self.up = Linear(cfg.sq.dims, cfg.latent_dim, rng)
        self.codebooks = [
            IvqCodebook(cfg.ivq, cfg.latent_dim, rng) for _ in range(cfg.n_vq_stages)
        ]

    def named_params(self, prefix: str = "quant") -> list[tuple[str, Tensor]]:
        out = self.down.named_params(f"{prefix}.sq_down") + self.up.named_params(
            f"{prefix}.sq_up"
        )
        for i, cb in enumerate(self.codebooks):
            out.append((f"{prefix}.cb{i + 1}.entries", cb.entries))
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def to_dtype(self, dtype) -> None:
        self.down.to_dtype(dtype)
        self.up.to_dtype(dtype)
        for cb in self.codebooks:
            cb.entries.data = cb.entries.data.astype(dtype)
            cb.entries.grad = None

    # -- single-frame scalar stage (used directly by tests and streaming) ----

    def sq_quantize(self, latent_frame: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One frame -> (7 symbols, dequantized latent)."""
        x = np.asarray(latent_frame, dtype=self.down.weight.dtype).reshape(1, -1)
        v = np.tanh(x @ self.down.weight.data.T + self.down.bias.data)
        sym = sq_round(v, self.cfg.sq.levels)
        lev = sq_levels(sym, self.cfg.sq.levels, dtype=v.dtype)
        deq = lev @ self.up.weight.data.T + self.up.bias.data
        return sym[0], deq[0]

    # -- full forward --------------------------------------------------------

    def forward(self, latent: Tensor, training: bool = False, surrogate: bool = False) -> RsvqResult:
        """Quantize (latent_dim, F).

        training=True applies straight-through estimators, records stage
        intermediates for the codebook/commitment losses, and updates usage
        EMAs.  surrogate=True replaces rounding and code lookup with identity
        (the smooth path used by gradient checking).
        """
        if latent.shape[0] != self.cfg.latent_dim:
            raise ValueError(f"latent dim {latent.shape[0]} != {self.cfg.latent_dim}")
        lt = ops.transpose(latent)  # (F, D)
        n_frames = lt.shape[0]
        levels = self.cfg.sq.levels

        v = ops.tanh(ops.linear(lt, self.down.weight, self.down.bias))
        symbols = sq_round(v.data, levels)
        if surrogate:
            v_q = v
            q_levels = v.data.copy()
        else:
            q_levels = sq_levels(symbols, levels, dtype=v.dtype)
            # straight-through: exact rounded values, gradient of v
            # (value = levels + (v - v) keeps the forward bit-exact)
            v_q = ops.add(Tensor(q_levels), ops.sub(v, v.detach()))
        dequant = ops.linear(v_q, self.up.weight, self.up.bias)

        residual = ops.sub(lt, dequant)
        quantized = dequant
        stages: list[StageIntermediate] = []
        indices: list[np.ndarray] = []
        for cb in self.codebooks:
            if surrogate:
                code = residual
                idx = np.zeros(n_frames, dtype=np.int64)
            else:
                idx = cb.quantize(residual.data)
                code = ops.gather_rows(cb.entries, idx)
                if training:
                    cb.update_usage(idx)
            indices.append(idx)
            stages.append(StageIntermediate(target=residual, code=code))
            # straight-through around the lookup, with bit-exact code values
            code_ste = ops.add(code.detach(), ops.sub(residual, residual.detach()))
            quantized = ops.add(quantized, code_ste)
            residual = ops.sub(residual, code_ste)

        tokens = [
            TokenFrame(tuple(int(s) for s in symbols[f]), int(indices[0][f]), int(indices[1][f]))
            for f in range(n_frames)
        ]
        return RsvqResult(
            quantized=ops.transpose(quantized),
            tokens=tokens,
            sq_v=v,
            sq_q=q_levels,
            sq_dequant=dequant.data,
            vq_stages=stages,
            indices=indices,
        )

    def dequantize_tokens(self, tokens: list[TokenFrame]) -> np.ndarray:
        """Tokens -> quantized latent (latent_dim, F), inference path."""
        if not tokens:
            return np.zeros((self.cfg.latent_dim, 0), dtype=np.float32)
        sym = np.array([t.sq for t in tokens], dtype=np.int64)
        lev = sq_levels(sym, self.cfg.sq.levels, dtype=self.up.weight.dtype)
        q = lev @ self.up.weight.data.T + self.up.bias.data
        q = q + self.codebooks[0].entries.data[[t.vq1 for t in tokens]]
        q = q + self.codebooks[1].entries.data[[t.vq2 for t in tokens]]
        return np.ascontiguousarray(q.T)


# ---------------------------------------------------------------------------
# token packing: per frame, MSB-first, 7x2-bit symbols then 10+10-bit indices
# ---------------------------------------------------------------------------

BITS_PER_FRAME = 34


class EncodingError(ValueError):
    pass


class FramingError(ValueError):
    pass


def pack_tokens(frames: list[TokenFrame]) -> bytes:
    """Concatenate 34-bit frames MSB-first, zero-padding the final byte."""
    acc = 0
    nbits = 0
    out = bytearray()
    for frame in frames:
        if len(frame.sq) != 7:
            raise EncodingError(f"expected 7 scalar symbols, got {len(frame.sq)}")
        word = 0
        for s in frame.sq:
            if not 0 <= s < 4:
                raise EncodingError(f"scalar symbol {s} out of range [0, 4)")
            word = (word << 2) | int(s)
        for idx in (frame.vq1, frame.vq2):
            if not 0 <= idx < 1024:
                raise EncodingError(f"codebook index {idx} out of range [0, 1024)")
            word = (word << 10) | int(idx)
        acc = (acc << BITS_PER_FRAME) | word
        nbits += BITS_PER_FRAME
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
            acc &= (1 << nbits) - 1
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def unpack_tokens(data: bytes, frame_count: int) -> list[TokenFrame]:
    """Inverse of pack_tokens; raises FramingError on truncation."""
    need_bits = BITS_PER_FRAME * frame_count
    if len(data) * 8 < need_bits:
        raise FramingError(
            f"need {need_bits} bits for {frame_count} frames, "
            f"stream ends at byte offset {len(data)}"
        )
    frames = []
    acc = 0
    nbits = 0
    pos = 0
    for _ in range(frame_count):
        while nbits < BITS_PER_FRAME:
            acc = (acc << 8) | data[pos]
            pos += 1
            nbits += 8
        nbits -= BITS_PER_FRAME
        word = (acc >> nbits) & ((1 << BITS_PER_FRAME) - 1)
        acc &= (1 << nbits) - 1
        vq2 = word & 0x3FF
        vq1 = (word >> 10) & 0x3FF
        sym_bits = word >> 20
        sq = tuple((sym_bits >> (2 * (6 - i))) & 0x3 for i in range(7))
        frames.append(TokenFrame(sq, vq1, vq2))
    return frames
