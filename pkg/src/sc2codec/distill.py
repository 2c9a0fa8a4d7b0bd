"""Training loop and the three teacher-student distillation schemes.

One generator step and one discriminator step alternate.  The teacher (when
present) runs frozen in inference mode on the same MDCT input; its taps feed
the projected-feature distillation loss, whose projections are trained jointly
with the student.  All randomness is derived from the run seed through fixed
per-purpose streams, so a distillation run with kd weight 0 reproduces the
plain student run bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamW, Tape, Tensor, backward
from .checkpoint import Codec, load_checkpoint, new_codec, save_checkpoint
from .dsp import MdctConfig, MelConfig, mdct_forward
from .losses import (
    LossComponents,
    LossWeights,
    ProjectionSet,
    TapMask,
    codebook_and_commitment,
    discriminator_loss,
    feature_matching_loss,
    generator_adversarial_loss,
    kd_loss,
    mdct_loss,
    mel_loss,
    tap_dims,
    total_loss,
)
from .autodiff import ops
from .discriminator import SpectralDiscriminator
from .model import CodecConfig
from .quantizer import codebook_refresh

SCHEMES = ("direct", "nh_ch_cl", "nh_nl_cl")


@dataclass
class TrainSettings:
    steps: int = 1000
    batch_size: int = 2
    lr: float = 2e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    seed: int = 0
    refresh_every: int = 200
    log_every: int = 25
    val_every: int = 0  # 0: validate only at the end
    adversarial: bool = True
    proj_lr_scale: float = 1.0
    lr_schedule: str = "constant"  # constant | cosine (decays to 0.1x)

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant" or self.steps <= 1:
            return self.lr
        if self.lr_schedule != "cosine":
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        floor = 0.1 * self.lr
        frac = (step - 1) / max(self.steps - 1, 1)
        return floor + 0.5 * (self.lr - floor) * (1.0 + np.cos(np.pi * frac))


class MetricLog:
    """Append-only JSONL rows: one dict per logged train/val event.

    Train rows: step, kind="train", loss_total, loss_adv, loss_fm, loss_mdct,
    loss_mel, loss_cb, loss_com, loss_kd, loss_disc, lambda_kd,
    perplexity_vq1, perplexity_vq2.  Val rows: step, kind="val", val_mel_loss,
    per_utterance (list of floats).
    """

    def __init__(self, path: str | None = None):
        self.rows: list[dict] = []
        self.path = path
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            # truncate: one log per run
            with open(path, "w"):
                pass

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def last_val(self) -> dict | None:
        for row in reversed(self.rows):
            if row.get("kind") == "val":
                return row
        return None


def _teacher_taps(teacher: Codec, spec_ref: np.ndarray) -> list[tuple[str, Tensor]]:
    """Frozen inference pass; taps come back as constants."""
    latent, enc_taps = teacher.model.encode(spec_ref)
    qres = teacher.quantizer.forward(latent, training=False)
    _, dec_taps = teacher.model.decode(qres.quantized)
    return [(n, t.detach()) for n, t in enc_taps + dec_taps]


def validation_mel_losses(codec: Codec, val_set: list[np.ndarray], mdct_cfg, mel_cfg) -> list[float]:
    out = []
    for audio in val_set:
        spec_ref = mdct_forward(audio, mdct_cfg).coefficients
        latent, _ = codec.model.encode(spec_ref)
        qres = codec.quantizer.forward(latent, training=False)
        spec_hat, _ = codec.model.decode(qres.quantized)
        audio_hat = ops.imdct_op(spec_hat, mdct_cfg.basis, mdct_cfg.window, mdct_cfg.hop)
        n = min(audio_hat.shape[0], audio.shape[0])
        out.append(float(mel_loss(Tensor(audio_hat.data[:n]), audio[:n], mel_cfg).data))
    return out


def train_codec(
    codec: Codec,
    dataset: list[np.ndarray],
    settings: TrainSettings,
    weights: LossWeights,
    teacher: Codec | None = None,
    tap_mask: TapMask | None = None,
    val_set: list[np.ndarray] | None = None,
    log: MetricLog | None = None,
    projection_seed: int | None = None,
) -> MetricLog:
    """Train ``codec`` in place; returns the metric log."""
    log = log or MetricLog()
    mdct_cfg = MdctConfig(hop=codec.model.config.mdct_bins)
    mel_cfg = MelConfig()
    seed = settings.seed

    disc = SpectralDiscriminator(seed=seed + 2) if settings.adversarial else None
    projections = None
    opt_proj = None
    if teacher is not None:
        if tap_mask is None:
            tap_mask = TapMask.preset("all", codec.model.tap_names())
        projections = ProjectionSet(
            tap_dims(codec.model),
            tap_dims(teacher.model),
            seed=projection_seed if projection_seed is not None else seed + 3,
        )
        if dataset and settings.steps > 0:
            spec0 = mdct_forward(dataset[0], mdct_cfg).coefficients
            latent0, s_taps0 = codec.model.encode(spec0)
            q0 = codec.quantizer.forward(latent0, training=False)
            _, d_taps0 = codec.model.decode(q0.quantized)
            projections.warm_start(s_taps0 + d_taps0, _teacher_taps(teacher, spec0))
        opt_proj = AdamW(
            projections.params(),
            lr=settings.lr * settings.proj_lr_scale,
            betas=settings.betas,
            weight_decay=settings.weight_decay,
        )
        before = [p.data.copy() for p in teacher.model.params()]

    gen_params = codec.model.params() + codec.quantizer.params()
    opt_g = AdamW(gen_params, lr=settings.lr, betas=settings.betas, weight_decay=settings.weight_decay)
    opt_d = (
        AdamW(disc.params(), lr=settings.lr, betas=settings.betas, weight_decay=settings.weight_decay)
        if disc
        else None
    )
    rng_data = np.random.default_rng(np.random.PCG64(seed + 4))
    rng_refresh = np.random.default_rng(np.random.PCG64(seed + 5))

    order = rng_data.permutation(len(dataset))
    cursor = 0

    def next_batch() -> list[np.ndarray]:
        nonlocal order, cursor
        batch = []
        for _ in range(min(settings.batch_size, len(dataset))):
            if cursor >= len(order):
                order = rng_data.permutation(len(dataset))
                cursor = 0
            batch.append(dataset[order[cursor]])
            cursor += 1
        return batch

    for step in range(1, settings.steps + 1):
        lr_now = settings.lr_at(step)
        opt_g.lr = lr_now
        if opt_proj is not None:
            opt_proj.lr = lr_now * settings.proj_lr_scale
        if opt_d is not None:
            opt_d.lr = lr_now
        batch = next_batch()
        stage_residuals: list[list[np.ndarray]] = [[], []]
        hat_audio_np: list[np.ndarray] = []
        components_acc: dict[str, float] = {}
        perplexities = None

        # generator step
        opt_g.zero_grad()
        if opt_proj is not None:
            opt_proj.zero_grad()
        with Tape():
            batch_total = None
            for audio in batch:
                spec_ref = mdct_forward(audio, mdct_cfg).coefficients
                latent, enc_taps = codec.model.encode(spec_ref)
                qres = codec.quantizer.forward(latent, training=True)
                spec_hat, dec_taps = codec.model.decode(qres.quantized)
                audio_hat = ops.imdct_op(spec_hat, mdct_cfg.basis, mdct_cfg.window, mdct_cfg.hop)
                hat_audio_np.append(audio_hat.data.copy())
                for i, stage in enumerate(qres.vq_stages):
                    stage_residuals[i].append(stage.target.data.copy())
                perplexities = [
                    cb.perplexity(idx) for cb, idx in zip(codec.quantizer.codebooks, qres.indices)
                ]

                l_cb, l_com = codebook_and_commitment(qres)
                comp = LossComponents(
                    mdct=mdct_loss(spec_hat, spec_ref),
                    mel=mel_loss(audio_hat, audio, mel_cfg),
                    cb=l_cb,
                    com=l_com,
                )
                if disc is not None:
                    logits_ref, feats_ref = disc.forward(Tensor(audio))
                    logits_hat, feats_hat = disc.forward(audio_hat)
                    comp.adv = generator_adversarial_loss(logits_hat)
                    comp.fm = feature_matching_loss(feats_ref, feats_hat)
                if teacher is not None:
                    t_taps = _teacher_taps(teacher, spec_ref)
                    comp.kd = kd_loss(enc_taps + dec_taps, t_taps, projections, tap_mask)
                item_total = total_loss(comp, weights)
                batch_total = item_total if batch_total is None else ops.add(batch_total, item_total)
                for k, v in comp.values().items():
                    components_acc[k] = components_acc.get(k, 0.0) + v / len(batch)
            batch_total = batch_total * (1.0 / len(batch))
            backward(batch_total)
        loss_total = float(batch_total.data)
        opt_g.step()
        if opt_proj is not None:
            opt_proj.step()

        # discriminator step on detached reconstructions
        loss_disc = 0.0
        if disc is not None:
            opt_d.zero_grad()
            with Tape():
                d_total = None
                for audio, hat in zip(batch, hat_audio_np):
                    logits_ref, _ = disc.forward(Tensor(audio))
                    logits_hat, _ = disc.forward(Tensor(hat))
                    term = discriminator_loss(logits_ref, logits_hat)
                    d_total = term if d_total is None else ops.add(d_total, term)
                d_total = d_total * (1.0 / len(batch))
                backward(d_total)
            loss_disc = float(d_total.data)
            opt_d.step()

        if settings.refresh_every and step % settings.refresh_every == 0:
            for cb, residuals in zip(codec.quantizer.codebooks, stage_residuals):
                if residuals:
                    codebook_refresh(cb, np.concatenate(residuals, axis=0), rng_refresh)

        if step % settings.log_every == 0 or step == settings.steps:
            row = {
                "step": step,
                "kind": "train",
                "loss_total": loss_total,
                "loss_disc": loss_disc,
                "lambda_kd": weights.kd,
                "perplexity_vq1": perplexities[0] if perplexities else 0.0,
                "perplexity_vq2": perplexities[1] if perplexities else 0.0,
            }
            row.update({f"loss_{k}": v for k, v in components_acc.items()})
            log.append(row)

        if val_set and (
            (settings.val_every and step % settings.val_every == 0) or step == settings.steps
        ):
            per_utt = validation_mel_losses(codec, val_set, mdct_cfg, mel_cfg)
            log.append(
                {
                    "step": step,
                    "kind": "val",
                    "val_mel_loss": float(np.mean(per_utt)),
                    "per_utterance": per_utt,
                }
            )

    if teacher is not None:
        after = teacher.model.params()
        for b, a in zip(before, after):
            if not np.array_equal(b, a.data):
                raise RuntimeError("teacher parameters changed during distillation")
    return log


@dataclass
class DistillScheme:
    """One of the three teacher-to-student paths.

    direct:    teacher -> student in one run.
    nh_ch_cl:  teacher -> causal copy of the teacher -> student (two runs).
    nh_nl_cl:  teacher -> non-causal copy of the student -> student (two runs).
    """

    name: str

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ValueError(f"unknown scheme {self.name!r}; options: {SCHEMES}")

    def stage_configs(self, teacher_cfg: CodecConfig, student_cfg: CodecConfig) -> list[CodecConfig]:
        if self.name == "direct":
            return [student_cfg]
        if self.name == "nh_ch_cl":
            base = teacher_cfg.to_dict()
            base["causal"] = True  # causal high-complexity intermediate
        else:
            base = student_cfg.to_dict()
            base["causal"] = False  # non-causal low-complexity intermediate
        return [CodecConfig.from_dict(base), student_cfg]


def run_distillation(
    scheme: DistillScheme | str,
    teacher_ckpt: str,
    student_cfg: CodecConfig,
    dataset: list[np.ndarray],
    settings: TrainSettings,
    weights: LossWeights,
    out_dir: str,
    mask_preset: str = "all",
    val_set: list[np.ndarray] | None = None,
) -> tuple[str, list[MetricLog]]:
    """Execute a distillation scheme; returns (student checkpoint path, logs)."""
    if isinstance(scheme, str):
        scheme = DistillScheme(scheme)
    os.makedirs(out_dir, exist_ok=True)
    teacher = load_checkpoint(teacher_ckpt)
    logs = []
    stage_cfgs = scheme.stage_configs(teacher.model.config, student_cfg)
    current_teacher = teacher
    final_path = ""
    for i, cfg in enumerate(stage_cfgs):
        student = new_codec(cfg, seed=settings.seed)
        mask = TapMask.preset(mask_preset, student.model.tap_names())
        log = MetricLog(os.path.join(out_dir, f"stage{i + 1}_metrics.jsonl"))
        train_codec(
            student,
            dataset,
            settings,
            weights,
            teacher=current_teacher,
            tap_mask=mask,
            val_set=val_set,
            log=log,
        )
        logs.append(log)
        final_path = os.path.join(out_dir, f"stage{i + 1}_student.sc2ckpt")
        save_checkpoint(final_path, student)
        current_teacher = student
    return final_path, logs
