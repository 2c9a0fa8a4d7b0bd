"""Training/distillation mechanics: frozen teacher, kd-zero equivalence,
schemes, ablation gradients, determinism, steps=0."""

import os

import numpy as np
import pytest

from sc2codec.checkpoint import load_checkpoint, new_codec, save_checkpoint
from sc2codec.distill import (
    DistillScheme,
    MetricLog,
    TrainSettings,
    run_distillation,
    train_codec,
)
from sc2codec.losses import LossWeights, TapMask
from sc2codec.model import variant_config
from sc2codec.synth import synth_dataset

FAST = dict(steps=4, batch_size=1, lr=1e-3, log_every=2, seed=3, refresh_every=0)


@pytest.fixture(scope="module")
def tiny_data():
    return synth_dataset(seed=42, count=3, seconds=0.3)


@pytest.fixture(scope="module")
def teacher_ckpt(tmp_path_factory, tiny_data):
    path = str(tmp_path_factory.mktemp("t") / "teacher.sc2ckpt")
    teacher = new_codec(variant_config("toy_teacher"), seed=7)
    train_codec(teacher, tiny_data, TrainSettings(**FAST), LossWeights())
    save_checkpoint(path, teacher)
    return path


def _params_snapshot(codec):
    return [(n, p.data.copy()) for n, p in codec.named_params()]


def test_teacher_frozen_during_distillation(tiny_data, teacher_ckpt):
    teacher = load_checkpoint(teacher_ckpt)
    before = _params_snapshot(teacher)
    student = new_codec(variant_config("toy_student"), seed=3)
    mask = TapMask.preset("all", student.model.tap_names())
    train_codec(
        student,
        tiny_data,
        TrainSettings(**FAST),
        LossWeights(kd=0.01),
        teacher=teacher,
        tap_mask=mask,
    )
    for (n, b), (n2, a) in zip(before, _params_snapshot(teacher)):
        assert n == n2
        np.testing.assert_array_equal(b, a)


def test_kd_zero_matches_plain_student_bit_exact(tiny_data, teacher_ckpt):
    teacher = load_checkpoint(teacher_ckpt)
    plain = new_codec(variant_config("toy_student"), seed=3)
    train_codec(plain, tiny_data, TrainSettings(**FAST), LossWeights(kd=0.0))

    distilled = new_codec(variant_config("toy_student"), seed=3)
    mask = TapMask.preset("all", distilled.model.tap_names())
    train_codec(
        distilled,
        tiny_data,
        TrainSettings(**FAST),
        LossWeights(kd=0.0),
        teacher=teacher,
        tap_mask=mask,
    )
    for (n, a), (_, b) in zip(plain.named_params(), distilled.named_params()):
        np.testing.assert_array_equal(a.data, b.data, err_msg=n)


def test_training_determinism(tiny_data):
    runs = []
    for _ in range(2):
        codec = new_codec(variant_config("toy_student"), seed=5)
        train_codec(codec, tiny_data, TrainSettings(**FAST), LossWeights())
        runs.append(b"".join(p.data.tobytes() for _, p in codec.named_params()))
    assert runs[0] == runs[1]


def test_kd_loss_logged_exactly_as_configured(tiny_data, teacher_ckpt):
    teacher = load_checkpoint(teacher_ckpt)
    student = new_codec(variant_config("toy_student"), seed=3)
    mask = TapMask.preset("all", student.model.tap_names())
    log = MetricLog()
    train_codec(
        student,
        tiny_data,
        TrainSettings(**FAST),
        LossWeights(kd=0.0123),
        teacher=teacher,
        tap_mask=mask,
        log=log,
    )
    rows = [r for r in log.rows if r["kind"] == "train"]
    assert rows and all(r["lambda_kd"] == 0.0123 for r in rows)
    assert all(r["loss_kd"] > 0 for r in rows)


def test_scheme_stage_configs():
    teacher_cfg = variant_config("toy_teacher")
    student_cfg = variant_config("toy_student")
    assert [c.to_dict() for c in DistillScheme("direct").stage_configs(teacher_cfg, student_cfg)] == [
        student_cfg.to_dict()
    ]
    mid_ch, final = DistillScheme("nh_ch_cl").stage_configs(teacher_cfg, student_cfg)
    assert mid_ch.causal is True and mid_ch.c_l == teacher_cfg.c_l and final == student_cfg
    mid_nl, _ = DistillScheme("nh_nl_cl").stage_configs(teacher_cfg, student_cfg)
    assert mid_nl.causal is False and mid_nl.c_l == student_cfg.c_l
    with pytest.raises(ValueError):
        DistillScheme("bogus")


def test_direct_scheme_single_stage(tmp_path, tiny_data, teacher_ckpt):
    out = str(tmp_path / "direct")
    ckpt, logs = run_distillation(
        "direct",
        teacher_ckpt,
        variant_config("toy_student"),
        tiny_data,
        TrainSettings(**FAST),
        LossWeights(kd=0.01),
        out,
    )
    assert len(logs) == 1
    assert os.path.exists(ckpt)
    loaded = load_checkpoint(ckpt)
    assert loaded.model.config.causal


def test_staged_scheme_runs_two_stages(tmp_path, tiny_data, teacher_ckpt):
    out = str(tmp_path / "staged")
    ckpt, logs = run_distillation(
        "nh_ch_cl",
        teacher_ckpt,
        variant_config("toy_student"),
        tiny_data,
        TrainSettings(**FAST),
        LossWeights(kd=0.01),
        out,
    )
    assert len(logs) == 2  # exactly two training runs
    assert os.path.exists(os.path.join(out, "stage1_student.sc2ckpt"))
    assert ckpt.endswith("stage2_student.sc2ckpt")
    final = load_checkpoint(ckpt)
    assert final.model.config.to_dict() == variant_config("toy_student").to_dict()


def test_masked_run_projection_gradients_zero(tiny_data, teacher_ckpt):
    """With a mask, masked-tap projections keep zero moments (never updated)."""
    from sc2codec.autodiff import Tape, backward
    from sc2codec.distill import _teacher_taps
    from sc2codec.dsp import MdctConfig, mdct_forward
    from sc2codec.losses import ProjectionSet, kd_loss, tap_dims

    teacher = load_checkpoint(teacher_ckpt)
    student = new_codec(variant_config("toy_student"), seed=3)
    names = student.model.tap_names()
    for preset, expect_active in (("no_updo", 8), ("no_io", 6)):
        # toy preset has K=2 -> N = 10 taps; masks drop 2 and 4 respectively
        mask = TapMask.preset(preset, names)
        assert mask.n_active() == expect_active
        proj = ProjectionSet(tap_dims(student.model), tap_dims(teacher.model), seed=0)
        spec = mdct_forward(tiny_data[0], MdctConfig()).coefficients
        latent, enc_taps = student.model.encode(spec)
        qres = student.quantizer.forward(latent, training=False)
        _, dec_taps = student.model.decode(qres.quantized)
        t_taps = _teacher_taps(teacher, spec)
        with Tape():
            backward(kd_loss(enc_taps + dec_taps, t_taps, proj, mask))
        for name, w in proj.weights.items():
            if name in mask.active:
                assert w.grad is not None and np.abs(w.grad).sum() > 0, name
            else:
                assert w.grad is None, name


def test_full_mask_counts_paper_config():
    student = new_codec(variant_config("student"), seed=0)
    names = student.model.tap_names()
    assert TapMask.preset("no_updo", names).n_active() == 20
    assert TapMask.preset("no_io", names).n_active() == 18


def test_steps_zero_checkpoint_equals_init(tmp_path, tiny_data):
    codec = new_codec(variant_config("toy_student"), seed=9)
    init = _params_snapshot(codec)
    settings = TrainSettings(steps=0, seed=9)
    log = train_codec(codec, tiny_data, settings, LossWeights())
    assert log.rows == []
    for (n, a), (_, b) in zip(init, _params_snapshot(codec)):
        np.testing.assert_array_equal(a, b, err_msg=n)
    path = str(tmp_path / "init.sc2ckpt")
    save_checkpoint(path, codec)
    reloaded = load_checkpoint(path)
    for (n, a), (_, p) in zip(init, reloaded.named_params()):
        np.testing.assert_array_equal(a, p.data, err_msg=n)
