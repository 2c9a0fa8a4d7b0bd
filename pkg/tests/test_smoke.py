"""End-to-end smoke: synth -> train(200 steps) -> encode -> decode -> eval."""

import json
import os
import time

import numpy as np
from click.testing import CliRunner

from sc2codec.cli import main
from sc2codec.metrics import align_lengths, lsd, mel_distance, snr
from sc2codec.wavio import read_wav


def test_smoke_end_to_end(tmp_path):
    t0 = time.time()
    runner = CliRunner()
    data_dir = str(tmp_path / "data")
    r = runner.invoke(
        main, ["synth-dataset", "--seed", "21", "--count", "6", "--seconds", "0.4", "--out", data_dir]
    )
    assert r.exit_code == 0, r.output

    out_dir = str(tmp_path / "run")
    cfg = {
        "seed": 2,
        "steps": 200,
        "batch_size": 1,
        "lr": 1e-3,
        "log_every": 50,
        "model": {"variant": "toy_student"},
        "dataset": {"kind": "dir", "path": data_dir, "val_count": 2},
        "out_dir": out_dir,
    }
    cfg_path = str(tmp_path / "cfg.json")
    json.dump(cfg, open(cfg_path, "w"))
    r = runner.invoke(main, ["train", "--config", cfg_path])
    assert r.exit_code == 0, r.output
    ckpt = os.path.join(out_dir, "student.sc2ckpt")
    assert os.path.exists(ckpt)
    assert os.path.exists(os.path.join(out_dir, "metrics.jsonl"))

    hyp_dir = str(tmp_path / "hyp")
    os.makedirs(hyp_dir)
    names = sorted(os.listdir(data_dir))
    for name in names:
        sc2 = str(tmp_path / "t.sc2")
        wav_in = os.path.join(data_dir, name)
        r = runner.invoke(main, ["encode", "--input", wav_in, "--model", ckpt, "--output", sc2])
        assert r.exit_code == 0, r.output
        r = runner.invoke(
            main, ["decode", "--input", sc2, "--model", ckpt, "--output", os.path.join(hyp_dir, name)]
        )
        assert r.exit_code == 0, r.output

    report = str(tmp_path / "eval.json")
    r = runner.invoke(main, ["eval", "--ref", data_dir, "--hyp", hyp_dir, "--json", report])
    assert r.exit_code == 0, r.output
    means = json.load(open(report))["mean"]
    assert np.isfinite(means["lsd"]) and np.isfinite(means["mel_distance"])

    # metrics sanity against direct recomputation on one pair
    ref = read_wav(os.path.join(data_dir, names[0]))
    hyp = align_lengths(ref, read_wav(os.path.join(hyp_dir, names[0])))
    row = json.load(open(report))["files"][0]
    assert row["lsd"] == lsd(ref, hyp)
    assert row["snr_db"] == snr(ref, hyp)
    assert row["mel_distance"] == mel_distance(ref, hyp)

    assert time.time() - t0 < 900, "smoke chain exceeded the 15 minute budget"
