"""Command-line surface: encode, decode, train, eval, report, synth-dataset, t-test."""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import ConfigError, load_experiment
from .harness import run_experiment
from .metrics import align_lengths, lsd, mel_distance, paired_t_test, snr
from .model import count_flops, count_params
from .quantizer import BITS_PER_FRAME
from .streaming import (
    check_compatible,
    decode_tokens_to_audio,
    encode_audio,
    header_for,
    measure_latency,
    read_bitstream,
    write_bitstream,
)
from .synth import write_synth_dataset
from .wavio import WavFormatError, read_wav, write_wav


@click.group()
@click.version_option(__version__)
def main():
    """Streamable MDCT-domain neural speech codec toolkit."""


def _fail(message: str) -> None:
    raise click.ClickException(message)


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
def encode(input_path, model_path, output_path):
    """Encode a 16 kHz mono WAV into an .sc2 bitstream."""
    try:
        samples = read_wav(input_path)
    except WavFormatError as exc:
        _fail(str(exc))
    codec = load_checkpoint(model_path)
    if not codec.model.config.causal:
        _fail("checkpoint is the non-causal variant; only causal models can encode streams")
    tokens = encode_audio(codec, samples)
    header = header_for(codec, len(tokens))
    n_bytes = write_bitstream(output_path, header, tokens)
    seconds = len(samples) / 16000.0
    bitrate = BITS_PER_FRAME * len(tokens) / seconds if seconds > 0 else 0.0
    click.echo(
        f"frames={len(tokens)} bytes={n_bytes} payload_bits={BITS_PER_FRAME * len(tokens)} "
        f"bitrate_bps={bitrate:.1f}"
    )


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--output", "output_path", required=True, type=click.Path())
def decode(input_path, model_path, output_path):
    """Decode an .sc2 bitstream back to a WAV file."""
    codec = load_checkpoint(model_path)
    if not codec.model.config.causal:
        _fail("checkpoint is the non-causal variant; only causal models can decode streams")
    try:
        header, tokens = read_bitstream(input_path)
        check_compatible(header, codec)
    except ValueError as exc:
        _fail(str(exc))
    audio = decode_tokens_to_audio(codec, tokens)
    write_wav(output_path, audio, header.sample_rate)
    click.echo(f"frames={len(tokens)} samples={len(audio)} wrote={output_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def train(config_path):
    """Run a training / distillation / sweep experiment from a JSON config."""
    try:
        doc = load_experiment(config_path)
    except ConfigError as exc:
        _fail(str(exc))
    summary = run_experiment(doc, echo=click.echo)
    click.echo(f"experiment_hash={summary['experiment_hash']} out_dir={summary['out_dir']}")


@main.command("eval")
@click.option("--ref", "ref_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--hyp", "hyp_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--json", "json_path", type=click.Path(), default=None)
def eval_cmd(ref_dir, hyp_dir, json_path):
    """Per-file and mean LSD / SNR / mel distance over paired WAV directories."""
    ref_names = sorted(n for n in os.listdir(ref_dir) if n.endswith(".wav"))
    if not ref_names:
        _fail(f"no WAV files in {ref_dir}")
    missing = [n for n in ref_names if not os.path.exists(os.path.join(hyp_dir, n))]
    if missing:
        _fail(f"unpaired reference files (missing in --hyp): {', '.join(missing)}")
    rows = []
    for name in ref_names:
        ref = read_wav(os.path.join(ref_dir, name))
        hyp = align_lengths(ref, read_wav(os.path.join(hyp_dir, name)))
        rows.append(
            {
                "file": name,
                "lsd": lsd(ref, hyp),
                "snr_db": snr(ref, hyp),
                "mel_distance": mel_distance(ref, hyp),
            }
        )
    means = {
        k: float(np.mean([r[k] for r in rows])) for k in ("lsd", "snr_db", "mel_distance")
    }
    for r in rows:
        click.echo(
            f"{r['file']}: lsd={r['lsd']:.4f} snr={r['snr_db']:.2f} dB "
            f"mel={r['mel_distance']:.4f}"
        )
    click.echo(
        f"mean: lsd={means['lsd']:.4f} snr={means['snr_db']:.2f} dB "
        f"mel={means['mel_distance']:.4f}"
    )
    if json_path:
        with open(json_path, "w") as fh:
            json.dump({"files": rows, "mean": means}, fh, indent=2, sort_keys=True)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
def report(model_path):
    """Complexity and latency report for a checkpoint."""
    codec = load_checkpoint(model_path)
    params = count_params(codec.model)
    flops = count_flops(codec.model, seconds=1.0)
    cfg = codec.model.config
    click.echo(f"variant: causal={cfg.causal} c_l={cfg.c_l} c_h={cfg.c_h} K={cfg.k_blocks}")
    click.echo(f"parameters: {params['total']:,}")
    click.echo(f"flops_per_second: {flops['total']:,} ({flops['total'] / 1e6:.1f} MFLOPs/s)")
    click.echo(f"distillation_taps: {cfg.n_taps}")
    click.echo(f"bits_per_frame: {BITS_PER_FRAME}")
    if cfg.causal:
        rep = measure_latency(codec)
        click.echo(
            f"frame_latency: {rep.frame_latency_samples} samples "
            f"({rep.frame_latency_ms:.1f} ms)"
        )
        click.echo(f"first_output_delay: {rep.first_output_delay_samples} samples (measured)")
    else:
        click.echo("latency: n/a (non-causal variant is not streamable)")


@main.command("synth-dataset")
@click.option("--seed", type=int, default=0)
@click.option("--count", type=int, required=True)
@click.option("--seconds", type=float, required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
def synth_dataset_cmd(seed, count, seconds, out_dir):
    """Write seeded synthetic training WAVs."""
    paths = write_synth_dataset(out_dir, seed, count, seconds)
    click.echo(f"wrote {len(paths)} files to {out_dir}")


@main.command("t-test")
@click.option("--a", "path_a", required=True, type=click.Path(exists=True))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True))
def t_test_cmd(path_a, path_b):
    """Paired two-sided t-test over newline-separated score files."""
    a = np.loadtxt(path_a, ndmin=1)
    b = np.loadtxt(path_b, ndmin=1)
    try:
        res = paired_t_test(a, b)
    except ValueError as exc:
        _fail(str(exc))
    click.echo(
        f"n={res.n} mean_diff={res.mean_difference:.6g} t={res.t_statistic:.6g} "
        f"p={res.p_value:.6g}"
    )


if __name__ == "__main__":
    sys.exit(main())
