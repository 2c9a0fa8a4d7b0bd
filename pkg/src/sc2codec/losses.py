"""Training objectives: spectrum/mel reconstruction, quantizer losses, LSGAN
adversarial + feature matching, and the projected feature-distillation loss.

The distillation loss averages, over active tap positions, the Frobenius norm
of (W_n @ student_tap - teacher_tap) per utterance; masked positions are
excluded and the divisor is the active count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, ops
from .dsp import MelConfig, hann_periodic
from .quantizer import RsvqResult


class DimensionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# weights / masks / projections
# ---------------------------------------------------------------------------


@dataclass
class LossWeights:
    mdct: float = 45.0
    mel: float = 45.0
    cb: float = 1.0
    com: float = 0.25
    kd: float = 0.01

    def __post_init__(self):
        for name in ("mdct", "mel", "cb", "com", "kd"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    def to_dict(self) -> dict:
        return {"mdct": self.mdct, "mel": self.mel, "cb": self.cb, "com": self.com, "kd": self.kd}


UPDO_TAPS = frozenset({"enc.down", "dec.up"})
IO_TAPS = frozenset({"enc.in", "enc.out", "dec.in", "dec.out"})

MASK_PRESETS = ("all", "no_updo", "no_io")


@dataclass(frozen=True)
class TapMask:
    """Active distillation positions by tap name."""

    active: frozenset

    @classmethod
    def preset(cls, name: str, tap_names: list[str]) -> "TapMask":
        names = frozenset(tap_names)
        if name == "all":
            return cls(names)
        if name == "no_updo":
            return cls(names - UPDO_TAPS)
        if name == "no_io":
            return cls(names - IO_TAPS)
        raise ValueError(f"unknown tap mask preset {name!r}; options: {MASK_PRESETS}")

    def n_active(self) -> int:
        return len(self.active)


class ProjectionSet:
    """Trainable per-tap projections W_n (teacher dim x student dim)."""

    def __init__(self, student_dims: dict, teacher_dims: dict, seed: int = 0):
        if set(student_dims) != set(teacher_dims):
            raise DimensionError("student and teacher tap names differ")
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.weights: dict[str, Tensor] = {}
        for name in student_dims:
            s, t = student_dims[name], teacher_dims[name]
            self.weights[name] = Tensor(
                rng.normal(0.0, 0.02, size=(t, s)).astype(np.float32), requires_grad=True
            )

    def warm_start(
        self,
        student_taps: list[tuple[str, "Tensor"]],
        teacher_taps: list[tuple[str, "Tensor"]],
        ridge: float = 1e-3,
    ) -> None:
        """Ridge least-squares init of each W_n from one (student, teacher) pass.

        Solving min_W ||W S - T||_F at initialization puts the distillation
        loss on an aligned footing from step one instead of spending early
        updates discovering the feature correspondence.
        """
        teacher = dict(teacher_taps)
        for name, s_tap in student_taps:
            s = s_tap.data.astype(np.float64)
            t = teacher[name].data.astype(np.float64)
            gram = s @ s.T + ridge * np.eye(s.shape[0])
            w = np.linalg.solve(gram, s @ t.T).T
            self.weights[name].data = w.astype(self.weights[name].dtype)

    def named_params(self) -> list[tuple[str, Tensor]]:
        return [(f"proj.{n}", w) for n, w in sorted(self.weights.items())]

    def params(self) -> list[Tensor]:
        return [w for _, w in self.named_params()]

    def to_dtype(self, dtype) -> None:
        for w in self.weights.values():
            w.data = w.data.astype(dtype)
            w.grad = None


def tap_dims(model) -> dict:
    """Tap name -> feature dim (S_n) for a codec model."""
    c = model.config
    dims = {"enc.in": c.c_l, "enc.down": c.c_l, "enc.out": c.latent_dim}
    dims.update({f"enc.block{i + 1}": c.c_l for i in range(c.k_blocks)})
    dims.update({"dec.in": c.c_l, "dec.up": c.c_l, "dec.out": c.mdct_bins})
    dims.update({f"dec.block{i + 1}": c.c_l for i in range(c.k_blocks)})
    return dims


# ---------------------------------------------------------------------------
# reconstruction losses
# ---------------------------------------------------------------------------


def mdct_loss(spec_hat: Tensor, spec_ref) -> Tensor:
    ref = spec_ref if isinstance(spec_ref, Tensor) else Tensor(np.asarray(spec_ref))
    if spec_hat.shape != ref.shape:
        raise DimensionError(f"spectrum shapes differ: {spec_hat.shape} vs {ref.shape}")
    return ops.mean_abs_error(spec_hat, ref)


def _log_mel(audio: Tensor, cfg: MelConfig, window: np.ndarray) -> Tensor:
    mag = ops.stft_magnitude_op(audio, cfg.fft_size, cfg.hop, window)
    mel = ops.matmul(mag, Tensor(cfg.filterbank.T.astype(audio.dtype)))
    return ops.log(ops.clip_min(mel, cfg.log_floor))


def mel_loss(audio_hat: Tensor, audio_ref, cfg: MelConfig | None = None) -> Tensor:
    cfg = cfg or MelConfig()
    ref = audio_ref if isinstance(audio_ref, Tensor) else Tensor(np.asarray(audio_ref))
    if audio_hat.shape != ref.shape:
        raise DimensionError(f"audio lengths differ: {audio_hat.shape} vs {ref.shape}")
    window = hann_periodic(cfg.fft_size)
    return ops.mean_abs_error(_log_mel(audio_hat, cfg, window), _log_mel(ref, cfg, window))


# ---------------------------------------------------------------------------
# quantizer losses
# ---------------------------------------------------------------------------


def codebook_and_commitment(result: RsvqResult) -> tuple[Tensor, Tensor]:
    """Stop-gradient split: L_cb trains codebooks, L_com trains the encoder.

    Per VQ stage the squared L2 over dims is averaged over frames; the scalar
    stage contributes to L_com through its continuous surrogate (pre-rounding
    tanh features against the rounded levels) and has no codebook term.
    """
    n_frames = max(result.sq_v.shape[0], 1)
    l_cb = None
    l_com = None
    for stage in result.vq_stages:
        diff_cb = ops.sub(stage.target.detach(), stage.code)
        diff_com = ops.sub(stage.target, stage.code.detach())
        term_cb = ops.sum_all(ops.square(diff_cb)) * (1.0 / n_frames)
        term_com = ops.sum_all(ops.square(diff_com)) * (1.0 / n_frames)
        l_cb = term_cb if l_cb is None else ops.add(l_cb, term_cb)
        l_com = term_com if l_com is None else ops.add(l_com, term_com)
    sq_diff = ops.sub(result.sq_v, Tensor(result.sq_q))
    l_com = ops.add(l_com, ops.sum_all(ops.square(sq_diff)) * (1.0 / n_frames))
    return l_cb, l_com


# ---------------------------------------------------------------------------
# adversarial + feature matching (LSGAN over the spectral discriminator)
# ---------------------------------------------------------------------------


def _mean_over(tensors: list[Tensor], fn) -> Tensor:
    acc = None
    for t in tensors:
        term = fn(t)
        acc = term if acc is None else ops.add(acc, term)
    return acc * (1.0 / len(tensors))


def generator_adversarial_loss(logits_hat: list[Tensor]) -> Tensor:
    return _mean_over(logits_hat, lambda lg: ops.mean_all(ops.square(ops.sub(lg, 1.0))))


def discriminator_loss(logits_ref: list[Tensor], logits_hat: list[Tensor]) -> Tensor:
    l_ref = _mean_over(logits_ref, lambda lg: ops.mean_all(ops.square(ops.sub(lg, 1.0))))
    l_hat = _mean_over(logits_hat, lambda lg: ops.mean_all(ops.square(lg)))
    return ops.add(l_ref, l_hat)


def feature_matching_loss(feats_ref: list[list[Tensor]], feats_hat: list[list[Tensor]]) -> Tensor:
    """Per layer: mean |ref - hat| normalized by mean |ref| + 1e-6; mean over layers."""
    terms = []
    for sub_ref, sub_hat in zip(feats_ref, feats_hat):
        for fr, fh in zip(sub_ref, sub_hat):
            denom = float(np.mean(np.abs(fr.data))) + 1e-6
            terms.append(ops.mean_abs_error(fh, fr.detach()) * (1.0 / denom))
    acc = terms[0]
    for t in terms[1:]:
        acc = ops.add(acc, t)
    return acc * (1.0 / len(terms))


def adversarial_losses(disc, audio_ref: Tensor, audio_hat: Tensor):
    """(L_adv_gen, L_disc, L_FM) on one (ref, hat) pair, single forward each."""
    if audio_ref.shape != audio_hat.shape:
        raise DimensionError(f"audio lengths differ: {audio_ref.shape} vs {audio_hat.shape}")
    logits_ref, feats_ref = disc.forward(audio_ref)
    logits_hat, feats_hat = disc.forward(audio_hat)
    l_adv = generator_adversarial_loss(logits_hat)
    l_disc = discriminator_loss(logits_ref, logits_hat)
    l_fm = feature_matching_loss(feats_ref, feats_hat)
    return l_adv, l_disc, l_fm


# ---------------------------------------------------------------------------
# knowledge distillation (projected intermediate features)
# ---------------------------------------------------------------------------


def kd_loss(
    student_taps: list[tuple[str, Tensor]],
    teacher_taps: list[tuple[str, Tensor]],
    projections: ProjectionSet,
    mask: TapMask,
) -> Tensor:
    """Mean over active taps of ||W_n @ student_n - teacher_n||_F (one item)."""
    teacher = dict(teacher_taps)
    terms = []
    for name, s_tap in student_taps:
        if name not in mask.active:
            continue
        t_tap = teacher[name]
        if s_tap.shape[1] != t_tap.shape[1]:
            raise DimensionError(
                f"tap {name}: student has {s_tap.shape[1]} frames, teacher {t_tap.shape[1]}"
            )
        w = projections.weights[name]
        if w.shape != (t_tap.shape[0], s_tap.shape[0]):
            raise DimensionError(
                f"tap {name}: projection {w.shape} cannot map {s_tap.shape} to {t_tap.shape}"
            )
        diff = ops.sub(ops.matmul(w, s_tap), t_tap.detach())
        terms.append(ops.frobenius_norm(diff))
    if not terms:
        raise ValueError("tap mask leaves no active distillation positions")
    acc = terms[0]
    for t in terms[1:]:
        acc = ops.add(acc, t)
    return acc * (1.0 / len(terms))


# ---------------------------------------------------------------------------
# total
# ---------------------------------------------------------------------------


@dataclass
class LossComponents:
    adv: object = 0.0
    fm: object = 0.0
    mdct: object = 0.0
    mel: object = 0.0
    cb: object = 0.0
    com: object = 0.0
    kd: object = 0.0

    def values(self) -> dict:
        out = {}
        for name in ("adv", "fm", "mdct", "mel", "cb", "com", "kd"):
            v = getattr(self, name)
            out[name] = float(v.data) if isinstance(v, Tensor) else float(v)
        return out


def total_loss(components: LossComponents, weights: LossWeights):
    """L = adv + fm + w.mdct*mdct + w.mel*mel + w.cb*cb + w.com*com + w.kd*kd."""

    def term(v, w=1.0):
        if isinstance(v, Tensor):
            return v * w if w != 1.0 else v
        return float(v) * w

    parts = [
        term(components.adv),
        term(components.fm),
        term(components.mdct, weights.mdct),
        term(components.mel, weights.mel),
        term(components.cb, weights.cb),
        term(components.com, weights.com),
        term(components.kd, weights.kd),
    ]
    acc = None
    for p in parts:
        if isinstance(p, Tensor):
            acc = p if acc is None else ops.add(acc, p)
        elif acc is None:
            acc = p
        elif isinstance(acc, Tensor):
            acc = ops.add(acc, Tensor(np.asarray(p, dtype=acc.dtype)))
        else:
            acc = acc + p
    return acc
