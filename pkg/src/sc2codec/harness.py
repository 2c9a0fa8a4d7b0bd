"""Experiment orchestration shared by the train CLI and the test harness."""

from __future__ import annotations

import glob
import json
import os

import numpy as np

from .checkpoint import load_checkpoint, new_codec, save_checkpoint
from .config import (
    experiment_hash,
    loss_weights_from,
    model_config_from,
    quantizer_config_from,
    train_settings_from,
)
from .distill import DistillScheme, MetricLog, TrainSettings, run_distillation, train_codec
from .losses import TapMask
from .synth import synth_dataset
from .wavio import read_wav


def build_dataset(doc: dict) -> tuple[list[np.ndarray], list[np.ndarray]]:
    spec = doc["dataset"]
    val_count = spec.get("val_count", 0)
    if spec["kind"] == "synth":
        utts = synth_dataset(
            seed=spec.get("seed", 0),
            count=spec.get("count", 16),
            seconds=spec.get("seconds", 0.4),
        )
    else:
        paths = sorted(glob.glob(os.path.join(spec["path"], "*.wav")))
        if not paths:
            raise FileNotFoundError(f"no WAV files under {spec['path']}")
        utts = [read_wav(p) for p in paths]
    if val_count >= len(utts):
        raise ValueError(f"val_count {val_count} leaves no training data from {len(utts)} files")
    if val_count:
        return utts[:-val_count], utts[-val_count:]
    return utts, []


def run_experiment(doc: dict, echo=print) -> dict:
    """Execute a validated experiment config; returns a summary dict."""
    out_dir = doc.get("out_dir", "runs/experiment")
    os.makedirs(out_dir, exist_ok=True)
    train_set, val_set = build_dataset(doc)
    settings = train_settings_from(doc)
    weights = loss_weights_from(doc)
    model_cfg = model_config_from(doc)
    quant_cfg = quantizer_config_from(doc, model_cfg)

    summary = {
        "experiment_hash": experiment_hash(doc),
        "out_dir": out_dir,
        "runs": [],
    }
    with open(os.path.join(out_dir, "experiment.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)

    if "lambda_kd_sweep" in doc:
        if "distill" not in doc:
            raise ValueError("lambda_kd_sweep requires a distill section (teacher checkpoint)")
        for lam in doc["lambda_kd_sweep"]:
            sub = os.path.join(out_dir, f"kd_{lam:g}")
            w = loss_weights_from(doc)
            w.kd = float(lam)
            ckpt, logs = run_distillation(
                DistillScheme(doc["distill"]["scheme"]),
                doc["distill"]["teacher_checkpoint"],
                model_cfg,
                train_set,
                settings,
                w,
                sub,
                mask_preset=doc["distill"].get("tap_mask", "all"),
                val_set=val_set,
            )
            row = _summary_row(logs[-1])
            row.update({"lambda_kd": float(lam), "checkpoint": ckpt})
            summary["runs"].append(row)
            echo(_format_row(row))
        with open(os.path.join(out_dir, "sweep_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        return summary

    if "distill" in doc:
        ckpt, logs = run_distillation(
            DistillScheme(doc["distill"]["scheme"]),
            doc["distill"]["teacher_checkpoint"],
            model_cfg,
            train_set,
            settings,
            weights,
            out_dir,
            mask_preset=doc["distill"].get("tap_mask", "all"),
            val_set=val_set,
        )
        row = _summary_row(logs[-1])
        row.update({"lambda_kd": weights.kd, "checkpoint": ckpt, "stages": len(logs)})
        summary["runs"].append(row)
        echo(_format_row(row))
        return summary

    codec = new_codec(model_cfg, quant_cfg, seed=settings.seed)
    log = MetricLog(os.path.join(out_dir, "metrics.jsonl"))
    train_codec(codec, train_set, settings, weights, val_set=val_set, log=log)
    ckpt = os.path.join(out_dir, "student.sc2ckpt")
    save_checkpoint(ckpt, codec)
    row = _summary_row(log)
    row.update({"lambda_kd": weights.kd, "checkpoint": ckpt})
    summary["runs"].append(row)
    echo(_format_row(row))
    return summary


def _summary_row(log: MetricLog) -> dict:
    row: dict = {}
    val = log.last_val()
    if val:
        row["val_mel_loss"] = val["val_mel_loss"]
    for r in reversed(log.rows):
        if r.get("kind") == "train":
            row.update({k: v for k, v in r.items() if k.startswith("loss_") or k == "step"})
            break
    return row


def _format_row(row: dict) -> str:
    parts = []
    for key in ("lambda_kd", "step", "loss_total", "loss_mel", "loss_kd", "val_mel_loss"):
        if key in row:
            val = row[key]
            parts.append(f"{key}={val:.6g}" if isinstance(val, float) else f"{key}={val}")
    return "  ".join(parts)


def train_teacher_checkpoint(
    path: str,
    model_cfg,
    dataset: list[np.ndarray],
    settings: TrainSettings,
    weights,
) -> str:
    """Convenience: train a codec from scratch and save it (teacher prep)."""
    codec = new_codec(model_cfg, seed=settings.seed)
    train_codec(codec, dataset, settings, weights)
    save_checkpoint(path, codec)
    return path
