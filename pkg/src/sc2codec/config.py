"""Experiment configuration: schema-validated JSON driving the train command.

Unknown keys are rejected everywhere.  ``model`` is either a named variant
(with optional field overrides) or a full architecture record.  ``distill``
switches on teacher-guided training; ``lambda_kd_sweep`` repeats the run per
weight value.
"""

from __future__ import annotations

import hashlib
import json

import jsonschema

from .distill import SCHEMES, TrainSettings
from .losses import MASK_PRESETS, LossWeights
from .model import VARIANTS, CodecConfig
from .quantizer import QuantizerConfig

_MODEL_FIELDS = {
    "causal": {"type": "boolean"},
    "c_l": {"type": "integer", "minimum": 1},
    "c_h": {"type": "integer", "minimum": 1},
    "k_blocks": {"type": "integer", "minimum": 1},
    "mdct_bins": {"type": "integer", "minimum": 1},
    "latent_dim": {"type": "integer", "minimum": 1},
    "downsample_factor": {"type": "integer", "minimum": 1},
    "conv_kernel": {"type": "integer", "minimum": 1},
    "updown_kernel": {"type": "integer", "minimum": 1},
    "block_depthwise": {"type": "boolean"},
    "grn_mode": {"enum": ["auto", "cumulative", "global"]},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "dataset", "steps", "seed"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "steps": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "adversarial": {"type": "boolean"},
        "refresh_every": {"type": "integer", "minimum": 0},
        "log_every": {"type": "integer", "minimum": 1},
        "val_every": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"variant": {"enum": sorted(VARIANTS)}, **_MODEL_FIELDS},
        },
        "quantizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "latent_dim": {"type": "integer", "minimum": 1},
                "sq": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "dims": {"type": "integer", "minimum": 1},
                        "levels": {"type": "integer", "minimum": 2},
                    },
                },
                "ivq": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "entries": {"type": "integer", "minimum": 2},
                        "decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "refresh_threshold": {"type": "number", "minimum": 0},
                    },
                },
                "n_vq_stages": {"type": "integer", "minimum": 1},
            },
        },
        "loss_weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                k: {"type": "number", "minimum": 0} for k in ("mdct", "mel", "cb", "com", "kd")
            },
        },
        "distill": {
            "type": "object",
            "additionalProperties": False,
            "required": ["scheme", "teacher_checkpoint"],
            "properties": {
                "scheme": {"enum": list(SCHEMES)},
                "teacher_checkpoint": {"type": "string"},
                "tap_mask": {"enum": list(MASK_PRESETS)},
            },
        },
        "lambda_kd_sweep": {
            "type": "array",
            "items": {"type": "number", "minimum": 0},
            "minItems": 1,
        },
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["synth", "dir"]},
                "count": {"type": "integer", "minimum": 1},
                "seconds": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "path": {"type": "string"},
                "val_count": {"type": "integer", "minimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def validate_experiment(doc: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"  {where}: {e.message}")
        raise ConfigError("invalid experiment config:\n" + "\n".join(lines))


def load_experiment(path: str) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    validate_experiment(doc)
    return doc


def experiment_hash(doc: dict) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def model_config_from(doc: dict) -> CodecConfig:
    spec = dict(doc["model"])
    variant = spec.pop("variant", None)
    if variant is not None:
        base = dict(VARIANTS[variant])
        base.update(spec)
        return CodecConfig(**base)
    return CodecConfig(**spec)


def quantizer_config_from(doc: dict, model_cfg: CodecConfig) -> QuantizerConfig:
    raw = dict(doc.get("quantizer", {}))
    raw.setdefault("latent_dim", model_cfg.latent_dim)
    sq = raw.pop("sq", None)
    ivq = raw.pop("ivq", None)
    cfg = {
        "latent_dim": raw["latent_dim"],
        "sq": sq or {"dims": 7, "levels": 4},
        "ivq": ivq or {"entries": 1024, "decay": 0.99, "refresh_threshold": 0.01},
        "n_vq_stages": raw.get("n_vq_stages", 2),
    }
    return QuantizerConfig.from_dict(cfg)


def loss_weights_from(doc: dict) -> LossWeights:
    return LossWeights(**doc.get("loss_weights", {}))


def train_settings_from(doc: dict) -> TrainSettings:
    return TrainSettings(
        steps=doc["steps"],
        batch_size=doc.get("batch_size", 2),
        lr=doc.get("lr", 2e-4),
        weight_decay=doc.get("weight_decay", 0.0),
        seed=doc["seed"],
        refresh_every=doc.get("refresh_every", 200),
        log_every=doc.get("log_every", 25),
        val_every=doc.get("val_every", 0),
        adversarial=doc.get("adversarial", True),
    )
