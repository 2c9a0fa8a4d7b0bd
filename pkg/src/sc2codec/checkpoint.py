"""Checkpoint container: "SC2CKPT" header + config record + named float32 blobs.

Layout (all integers little-endian):
    magic    8 bytes  b"SC2CKPT\\0"
    version  u8       (1)
    cfg_len  u32      canonical-JSON config record {"model": ..., "quantizer": ...}
    cfg      cfg_len bytes (UTF-8)
    n_params u32
    then per parameter, in insertion order:
        name_len u16, name bytes, ndim u8, dims u32 each, dtype u8 (0 = f32), raw LE values

Byte-exact round-trip: load followed by save reproduces the file verbatim.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .model import CodecConfig, CodecModel
from .quantizer import QuantizerConfig, ResidualScalarVectorQuantizer

MAGIC = b"SC2CKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_record(model_cfg: CodecConfig, quant_cfg: QuantizerConfig) -> dict:
    return {"model": model_cfg.to_dict(), "quantizer": quant_cfg.to_dict()}


def config_hash(record: dict) -> int:
    """Low 8 bytes (LE) of the SHA-256 of the canonical config record."""
    digest = hashlib.sha256(canonical_json(record).encode()).digest()
    return struct.unpack("<Q", digest[:8])[0]


class Codec:
    """A built model + quantizer pair (the deployable artifact)."""

    def __init__(self, model: CodecModel, quantizer: ResidualScalarVectorQuantizer):
        if model.config.latent_dim != quantizer.cfg.latent_dim:
            raise CheckpointError("model and quantizer latent dims disagree")
        self.model = model
        self.quantizer = quantizer

    @property
    def config_record(self) -> dict:
        return config_record(self.model.config, self.quantizer.cfg)

    @property
    def config_hash(self) -> int:
        return config_hash(self.config_record)

    def named_params(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"model.{n}", p) for n, p in self.model.named_params()]
        out.extend((n, p) for n, p in self.quantizer.named_params("quant"))
        return out


def new_codec(model_cfg: CodecConfig, quant_cfg: QuantizerConfig | None = None, seed: int = 0) -> Codec:
    quant_cfg = quant_cfg or QuantizerConfig(latent_dim=model_cfg.latent_dim)
    return Codec(
        CodecModel(model_cfg, seed=seed),
        ResidualScalarVectorQuantizer(quant_cfg, seed=seed + 1),
    )


def save_checkpoint(path: str, codec: Codec) -> int:
    cfg_bytes = canonical_json(codec.config_record).encode()
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(cfg_bytes)), cfg_bytes]
    named = codec.named_params()
    parts.append(struct.pack("<I", len(named)))
    for name, p in named:
        data = np.ascontiguousarray(p.data, dtype="<f4")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", data.ndim))
        for d in data.shape:
            parts.append(struct.pack("<I", d))
        parts.append(struct.pack("<B", 0))
        parts.append(data.tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def load_checkpoint(path: str) -> Codec:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a codec checkpoint (bad magic)")
    off = 8
    (version,) = struct.unpack_from("<B", blob, off)
    off += 1
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    record = json.loads(blob[off : off + cfg_len].decode())
    off += cfg_len
    codec = new_codec(
        CodecConfig.from_dict(record["model"]),
        QuantizerConfig.from_dict(record["quantizer"]),
    )
    (n_params,) = struct.unpack_from("<I", blob, off)
    off += 4
    table = dict(codec.named_params())
    seen = set()
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<I", blob, off)
            off += 4
            shape.append(d)
        (dtype_tag,) = struct.unpack_from("<B", blob, off)
        off += 1
        if dtype_tag != 0:
            raise CheckpointError(f"{path}: unknown dtype tag {dtype_tag} for {name}")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        if name not in table:
            raise CheckpointError(f"{path}: unexpected parameter {name!r}")
        if tuple(shape) != table[name].data.shape:
            raise CheckpointError(
                f"{path}: {name} shape {tuple(shape)} != expected {table[name].data.shape}"
            )
        table[name].data = np.array(data, dtype=np.float32)
        seen.add(name)
    missing = set(table) - seen
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)[:4]}...")
    return codec
