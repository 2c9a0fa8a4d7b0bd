"""Stateful chunk-by-chunk encode/decode, latency probe, and the bitstream.

Every layer is evaluated strictly one frame at a time (fixed-shape kernel
calls), so outputs are bit-identical regardless of how the input was chunked;
"offline" processing is simply a single chunk followed by ``finalize``.

Framing (normative): one MDCT frame per 160 input samples (frame f spans
samples [160f-160, 160f+160), the first half of frame 0 being the zero
pre-pad), one token per 2 MDCT frames.  The encoder emits token t once
(2t+1)*160 samples have arrived: the first token after 160 samples, then one
per 320.  The decoder primes on its first token and thereafter emits 320
samples per token, one token behind; ``finalize`` flushes the last 320.
Measured end to end, the first decoded sample emerges once 480 input samples
have been consumed, and this first-output delay is reported alongside the
20 ms frame latency.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .checkpoint import Codec
from .dsp import MdctConfig, frame_count
from .layers import GRN_EPS, LN_EPS, Conv1d, ConvNeXtBlock, ConvTranspose1d
from .quantizer import (
    BITS_PER_FRAME,
    FramingError,
    TokenFrame,
    pack_tokens,
    sq_levels,
    sq_round,
    unpack_tokens,
)


class UnsupportedVariantError(RuntimeError):
    """Streaming requires the causal, cumulative-GRN variant."""


class BitstreamFormatError(ValueError):
    pass


class ConfigHashMismatch(ValueError):
    pass


def _require_streamable(codec: Codec) -> None:
    cfg = codec.model.config
    if not cfg.causal:
        raise UnsupportedVariantError("non-causal models cannot stream")
    if not cfg.grn_cumulative:
        raise UnsupportedVariantError("global-GRN models cannot stream; use cumulative GRN")


# ---------------------------------------------------------------------------
# per-layer streaming wrappers
# ---------------------------------------------------------------------------


class _StreamConv1d:
    def __init__(self, layer: Conv1d, backend):
        self.backend = backend
        self.kernel = layer.kernel
        self.stride = layer.stride
        self.depthwise = layer.groups == layer.c_in and layer.c_out == layer.c_in
        if not self.depthwise and layer.groups != 1:
            raise UnsupportedVariantError("streaming supports dense or depthwise convs only")
        w = layer.weight.data
        self.w_dw = np.ascontiguousarray(w[:, 0, :]) if self.depthwise else None
        self.w2d = None if self.depthwise else np.ascontiguousarray(w.reshape(layer.c_out, -1))
        self.bias = np.ascontiguousarray(layer.bias.data)
        self.c_in = layer.c_in
        self.reset()

    def reset(self):
        self.win = np.zeros((self.c_in, self.kernel), dtype=self.bias.dtype)
        self.count = 0

    def push(self, x: np.ndarray):
        if self.kernel > 1:
            self.win[:, :-1] = self.win[:, 1:]
        self.win[:, -1] = x
        t = self.count
        self.count += 1
        if t % self.stride != 0:
            return None
        if self.depthwise:
            return self.backend.depthwise_frame(self.w_dw, self.win) + self.bias
        return self.backend.gemv(self.w2d, np.ascontiguousarray(self.win.reshape(-1))) + self.bias


class _StreamConvTranspose1d:
    def __init__(self, layer: ConvTranspose1d, backend):
        self.backend = backend
        self.kernel = layer.kernel
        self.stride = layer.stride
        self.c_out = layer.c_out
        # (C_in, C_out, K) -> (C_out*K, C_in) so one gemv yields the frame's fan-out
        self.w2d = np.ascontiguousarray(
            layer.weight.data.transpose(1, 2, 0).reshape(layer.c_out * layer.kernel, layer.c_in)
        )
        self.bias = np.ascontiguousarray(layer.bias.data)
        self.reset()

    def reset(self):
        self.acc = np.zeros((self.c_out, self.kernel), dtype=self.bias.dtype)

    def push(self, x: np.ndarray) -> list[np.ndarray]:
        contrib = self.backend.gemv(self.w2d, np.ascontiguousarray(x)).reshape(
            self.c_out, self.kernel
        )
        self.acc += contrib
        out = [self.acc[:, j] + self.bias for j in range(self.stride)]
        shifted = np.zeros_like(self.acc)
        shifted[:, : self.kernel - self.stride] = self.acc[:, self.stride :]
        self.acc = shifted
        return out


class _StreamBlock:
    def __init__(self, block: ConvNeXtBlock, backend):
        self.backend = backend
        self.block = block
        self.kernel = block.kernel
        dtype = block.dw_bias.dtype
        self.p = {
            "dw_w": np.ascontiguousarray(
                block.dw_weight.data[:, 0, :] if block.depthwise else block.dw_weight.data
            ),
            "dw_b": np.ascontiguousarray(block.dw_bias.data),
            "ln_g": np.ascontiguousarray(block.ln_gamma.data),
            "ln_b": np.ascontiguousarray(block.ln_beta.data),
            "w1": np.ascontiguousarray(block.up_weight.data),
            "b1": np.ascontiguousarray(block.up_bias.data),
            "w2": np.ascontiguousarray(block.down_weight.data),
            "b2": np.ascontiguousarray(block.down_bias.data),
            "grn_g": np.ascontiguousarray(block.grn_gamma.data),
            "grn_b": np.ascontiguousarray(block.grn_beta.data),
        }
        self.depthwise = block.depthwise
        self.c_l, self.c_h = block.c_l, block.c_h
        self.dtype = dtype
        self.reset()

    def reset(self):
        self.win = np.zeros((self.c_l, self.kernel), dtype=self.dtype)
        self.grn_sumsq = np.zeros(self.c_h, dtype=self.dtype)

    def push(self, x: np.ndarray):
        if self.kernel > 1:
            self.win[:, :-1] = self.win[:, 1:]
        self.win[:, -1] = x
        p = self.p
        if self.depthwise:
            return self.backend.convnext_frame(
                self.win,
                p["dw_w"],
                p["dw_b"],
                p["ln_g"],
                p["ln_b"],
                LN_EPS,
                p["w1"],
                p["b1"],
                p["w2"],
                p["b2"],
                p["grn_g"],
                p["grn_b"],
                GRN_EPS,
                self.grn_sumsq,
                True,
            )
        # dense-conv block variant: unfused per-frame path
        h = p["dw_w"].reshape(self.c_l, -1) @ np.ascontiguousarray(self.win.reshape(-1)) + p["dw_b"]
        mu = h.mean()
        d = h - mu
        var = (d * d).mean()
        h = p["ln_g"] * (d / np.sqrt(var + LN_EPS)) + p["ln_b"]
        z = self.backend.gelu_vec(p["w1"] @ h + p["b1"])
        self.grn_sumsq += z * z
        g = np.sqrt(self.grn_sumsq)
        z = p["grn_g"] * (z * (g / (g.mean() + GRN_EPS))) + p["grn_b"] + z
        return p["w2"] @ z + p["b2"] + x


def _wrap(layer, backend):
    if isinstance(layer, ConvNeXtBlock):
        return _StreamBlock(layer, backend)
    if isinstance(layer, ConvTranspose1d):
        return _StreamConvTranspose1d(layer, backend)
    return _StreamConv1d(layer, backend)


# ---------------------------------------------------------------------------
# quantizer streaming
# ---------------------------------------------------------------------------


class _StreamQuantizer:
    def __init__(self, quantizer, backend):
        self.backend = backend
        self.q = quantizer
        self.wd = np.ascontiguousarray(quantizer.down.weight.data)
        self.bd = np.ascontiguousarray(quantizer.down.bias.data)
        self.wu = np.ascontiguousarray(quantizer.up.weight.data)
        self.bu = np.ascontiguousarray(quantizer.up.bias.data)
        self.levels = quantizer.cfg.sq.levels
        self.cbs = [np.ascontiguousarray(cb.entries.data) for cb in quantizer.codebooks]
        self.cb_sq = [np.ascontiguousarray((c * c).sum(axis=1)) for c in self.cbs]

    def encode_frame(self, latent: np.ndarray) -> TokenFrame:
        v = np.tanh(self.backend.gemv(self.wd, latent) + self.bd)
        sym = sq_round(v, self.levels)
        lev = sq_levels(sym, self.levels, dtype=v.dtype)
        deq = self.backend.gemv(self.wu, np.ascontiguousarray(lev)) + self.bu
        r = latent - deq
        idx = []
        for cb, cb_sq in zip(self.cbs, self.cb_sq):
            scores = cb_sq - 2.0 * self.backend.gemv(cb, np.ascontiguousarray(r))
            i = int(np.argmin(scores))
            idx.append(i)
            r = r - cb[i]
        return TokenFrame(tuple(int(s) for s in sym), idx[0], idx[1])

    def decode_frame(self, token: TokenFrame) -> np.ndarray:
        lev = sq_levels(np.asarray(token.sq), self.levels, dtype=self.wu.dtype)
        q = self.backend.gemv(self.wu, np.ascontiguousarray(lev)) + self.bu
        return q + self.cbs[0][token.vq1] + self.cbs[1][token.vq2]


# ---------------------------------------------------------------------------
# stream encoder / decoder
# ---------------------------------------------------------------------------


class StreamEncoder:
    """Feeds arbitrary sample chunks, emits TokenFrames as they become ready."""

    def __init__(self, codec: Codec, backend=None):
        _require_streamable(codec)
        self.backend = backend or kernels.get_backend()
        cfg = codec.model.config
        self.hop = cfg.mdct_bins
        self.mdct = MdctConfig(hop=self.hop)
        self._basis = self.mdct.basis  # float64 (2M, M)
        self._window = self.mdct.window
        self.layers = [_wrap(layer, self.backend) for _, layer in codec.model.encoder]
        self.quant = _StreamQuantizer(codec.quantizer, self.backend)
        self.reset()

    def reset(self):
        for lay in self.layers:
            lay.reset()
        self._prev = np.zeros(self.hop, dtype=np.float64)
        self._pending = np.zeros(0, dtype=np.float64)
        self.samples_consumed = 0
        self.frames_emitted = 0

    def _push_hop(self, cur: np.ndarray) -> list[TokenFrame]:
        seg = np.concatenate([self._prev, cur]) * self._window
        self._prev = cur
        frame = (seg @ self._basis).astype(np.float32)
        out = []
        h = frame
        for lay in self.layers:
            h = lay.push(h)
            if h is None:
                return out
        out.append(self.quant.encode_frame(h))
        self.frames_emitted += 1
        return out

    def push(self, samples) -> list[TokenFrame]:
        x = np.asarray(samples, dtype=np.float64).reshape(-1)
        self.samples_consumed += x.size
        if x.size:
            self._pending = np.concatenate([self._pending, x])
        tokens = []
        while self._pending.size >= self.hop:
            tokens.extend(self._push_hop(self._pending[: self.hop]))
            self._pending = self._pending[self.hop :]
        return tokens

    def finalize(self) -> list[TokenFrame]:
        """Zero-pad any partial hop (matching offline end padding) and flush."""
        if self._pending.size == 0:
            return []
        cur = np.zeros(self.hop, dtype=np.float64)
        cur[: self._pending.size] = self._pending
        self._pending = np.zeros(0, dtype=np.float64)
        return self._push_hop(cur)


class StreamDecoder:
    """Feeds TokenFrames, emits float32 samples; 320 per token after priming."""

    def __init__(self, codec: Codec, backend=None):
        _require_streamable(codec)
        self.backend = backend or kernels.get_backend()
        cfg = codec.model.config
        self.hop = cfg.mdct_bins
        self.mdct = MdctConfig(hop=self.hop)
        self._basis = self.mdct.basis
        self._window = self.mdct.window
        self.layers = [_wrap(layer, self.backend) for _, layer in codec.model.decoder]
        self.quant = _StreamQuantizer(codec.quantizer, self.backend)
        self.samples_per_token = cfg.downsample_factor * self.hop
        self.reset()

    def reset(self):
        for lay in self.layers:
            lay.reset()
        self._ola_tail = np.zeros(self.hop, dtype=np.float64)
        self._mdct_frames_seen = 0
        self.tokens_seen = 0
        self._staged: list[np.ndarray] = []
        self._released = 0

    def _push_mdct_frame(self, coeffs: np.ndarray) -> None:
        y = (self._basis @ coeffs.astype(np.float64)) * ((2.0 / self.hop) * self._window)
        if self._mdct_frames_seen > 0:
            self._staged.append((self._ola_tail + y[: self.hop]).astype(np.float32))
        self._ola_tail = y[self.hop :].copy()
        self._mdct_frames_seen += 1

    def _run_token(self, token: TokenFrame) -> None:
        frames = [self.quant.decode_frame(token)]
        for lay in self.layers:
            nxt = []
            for fr in frames:
                out = lay.push(fr)
                if out is None:
                    continue
                if isinstance(out, list):
                    nxt.extend(out)
                else:
                    nxt.append(out)
            frames = nxt
        for fr in frames:
            self._push_mdct_frame(fr)

    def _release(self, target: int) -> np.ndarray:
        chunks = []
        need = target - self._released
        while need > 0 and self._staged:
            head = self._staged[0]
            if head.size <= need:
                chunks.append(head)
                self._staged.pop(0)
                need -= head.size
            else:
                chunks.append(head[:need])
                self._staged[0] = head[need:]
                need = 0
        got = int(sum(c.size for c in chunks))
        self._released += got
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float32)

    def push(self, tokens: list[TokenFrame]) -> np.ndarray:
        for tok in tokens:
            self._run_token(tok)
            self.tokens_seen += 1
        return self._release(max(0, self.samples_per_token * (self.tokens_seen - 1)))

    def finalize(self) -> np.ndarray:
        """Flush the overlap-add tail; total output becomes 320 * tokens."""
        if self._mdct_frames_seen > 0:
            self._staged.append(self._ola_tail.astype(np.float32))
            self._ola_tail = np.zeros(self.hop, dtype=np.float64)
        return self._release(self.samples_per_token * self.tokens_seen)


# ---------------------------------------------------------------------------
# offline wrappers and latency
# ---------------------------------------------------------------------------


def encode_audio(codec: Codec, samples, backend=None) -> list[TokenFrame]:
    """Offline encode = one streaming chunk + finalize."""
    enc = StreamEncoder(codec, backend=backend)
    tokens = enc.push(samples)
    tokens.extend(enc.finalize())
    return tokens


def decode_tokens_to_audio(codec: Codec, tokens: list[TokenFrame], backend=None) -> np.ndarray:
    dec = StreamDecoder(codec, backend=backend)
    out = [dec.push(tokens), dec.finalize()]
    return np.concatenate(out)


def expected_token_count(n_samples: int, hop: int = 160, factor: int = 2) -> int:
    return -(-frame_count(n_samples, hop) // factor)


@dataclass
class LatencyReport:
    frame_latency_samples: int
    frame_latency_ms: float
    first_output_delay_samples: int
    sample_rate: int = 16000

    def to_dict(self) -> dict:
        return {
            "frame_latency_samples": self.frame_latency_samples,
            "frame_latency_ms": self.frame_latency_ms,
            "first_output_delay_samples": self.first_output_delay_samples,
            "sample_rate": self.sample_rate,
        }


def measure_latency(codec: Codec, sample_rate: int = 16000, max_probe: int = 4000) -> LatencyReport:
    """Dual latency accounting for the causal variant.

    Frame latency is one token hop (downsample_factor * hop samples).  The
    first-output delay is measured: an impulse stream is fed sample by sample
    through a fresh encoder+decoder chain, and the report records how many
    input samples had been consumed when the first output sample appeared.
    """
    _require_streamable(codec)
    cfg = codec.model.config
    frame_samples = cfg.downsample_factor * cfg.mdct_bins
    enc = StreamEncoder(codec)
    dec = StreamDecoder(codec)
    first = None
    for i in range(max_probe):
        sample = 1.0 if i == 0 else 0.0
        toks = enc.push([sample])
        if toks:
            out = dec.push(toks)
            if out.size:
                first = i + 1
                break
    if first is None:
        raise RuntimeError(f"no decoder output within {max_probe} probe samples")
    return LatencyReport(
        frame_latency_samples=frame_samples,
        frame_latency_ms=1000.0 * frame_samples / sample_rate,
        first_output_delay_samples=first,
        sample_rate=sample_rate,
    )


# ---------------------------------------------------------------------------
# bitstream container
# ---------------------------------------------------------------------------

BITSTREAM_MAGIC = b"SC2\x01"
BITSTREAM_VERSION = 1
_HEADER_FMT = "<4sBIHBBQQ"
HEADER_SIZE = struct.calcsize(_HEADER_FMT)


@dataclass
class BitstreamHeader:
    sample_rate: int
    hop: int
    downsample_factor: int
    frame_count: int
    config_hash: int
    bits_per_frame: int = BITS_PER_FRAME
    version: int = BITSTREAM_VERSION

    def pack(self) -> bytes:
        return struct.pack(
            _HEADER_FMT,
            BITSTREAM_MAGIC,
            self.version,
            self.sample_rate,
            self.hop,
            self.downsample_factor,
            self.bits_per_frame,
            self.frame_count,
            self.config_hash,
        )

    @classmethod
    def unpack(cls, blob: bytes) -> "BitstreamHeader":
        if len(blob) < HEADER_SIZE:
            raise FramingError(f"truncated header: {len(blob)} < {HEADER_SIZE} bytes")
        magic, version, sr, hop, factor, bpf, n_frames, cfg_hash = struct.unpack_from(
            _HEADER_FMT, blob
        )
        if magic != BITSTREAM_MAGIC:
            raise BitstreamFormatError(f"bad magic {magic!r}")
        if version != BITSTREAM_VERSION:
            raise BitstreamFormatError(f"unsupported bitstream version {version}")
        if bpf != BITS_PER_FRAME:
            raise BitstreamFormatError(f"unsupported bits-per-frame {bpf}")
        return cls(
            sample_rate=sr,
            hop=hop,
            downsample_factor=factor,
            frame_count=n_frames,
            config_hash=cfg_hash,
            bits_per_frame=bpf,
            version=version,
        )


def header_for(codec: Codec, frame_count_: int, sample_rate: int = 16000) -> BitstreamHeader:
    cfg = codec.model.config
    return BitstreamHeader(
        sample_rate=sample_rate,
        hop=cfg.mdct_bins,
        downsample_factor=cfg.downsample_factor,
        frame_count=frame_count_,
        config_hash=codec.config_hash,
    )


def write_bitstream(path: str, header: BitstreamHeader, tokens: list[TokenFrame]) -> int:
    if header.frame_count != len(tokens):
        raise BitstreamFormatError(
            f"header frame_count {header.frame_count} != token count {len(tokens)}"
        )
    payload = pack_tokens(tokens)
    blob = header.pack() + payload
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def read_bitstream(path: str) -> tuple[BitstreamHeader, list[TokenFrame]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = BitstreamHeader.unpack(blob)
    payload = blob[HEADER_SIZE:]
    tokens = unpack_tokens(payload, header.frame_count)
    return header, tokens


def check_compatible(header: BitstreamHeader, codec: Codec) -> None:
    if header.config_hash != codec.config_hash:
        raise ConfigHashMismatch(
            f"bitstream config hash {header.config_hash:#018x} does not match "
            f"the model's {codec.config_hash:#018x}"
        )
