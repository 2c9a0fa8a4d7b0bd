#!/usr/bin/env python3
"""Benchmark the compiled kernel backend against the numpy fallback.

Covers the per-frame primitives and the end-to-end streaming encode/decode
paths (the hot loop the extension exists for).  Run from the repo root:

    python3 benchmarks/bench_kernels.py [--seconds 4.0] [--variant student]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sc2codec import kernels
from sc2codec.checkpoint import new_codec
from sc2codec.model import variant_config
from sc2codec.streaming import StreamDecoder, StreamEncoder


def time_it(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_primitives(backend, rng, reps=2000):
    out = {}
    a = rng.standard_normal((400, 200)).astype(np.float32)
    x = rng.standard_normal(200).astype(np.float32)
    out["gemv 400x200"] = time_it(lambda: [backend.gemv(a, x) for _ in range(reps)]) / reps

    w = rng.standard_normal((200, 7)).astype(np.float32)
    win = rng.standard_normal((200, 7)).astype(np.float32)
    out["depthwise 200x7"] = time_it(
        lambda: [backend.depthwise_frame(w, win) for _ in range(reps)]
    ) / reps

    c_l, c_h = 200, 400
    args = [
        rng.standard_normal((c_l, 7)).astype(np.float32),
        rng.standard_normal((c_l, 7)).astype(np.float32),
        np.zeros(c_l, np.float32),
        np.ones(c_l, np.float32),
        np.zeros(c_l, np.float32),
        1e-6,
        rng.standard_normal((c_h, c_l)).astype(np.float32),
        np.zeros(c_h, np.float32),
        rng.standard_normal((c_l, c_h)).astype(np.float32),
        np.zeros(c_l, np.float32),
        np.zeros(c_h, np.float32),
        np.zeros(c_h, np.float32),
        1e-6,
    ]

    def block_step():
        sumsq = np.zeros(c_h, np.float32)
        for _ in range(200):
            backend.convnext_frame(args[0], args[1], args[2], args[3], args[4], args[5],
                                   args[6], args[7], args[8], args[9], args[10], args[11],
                                   args[12], sumsq, True)

    out["convnext block step"] = time_it(block_step) / 200
    return out


def bench_streaming(backend_name_, codec, audio):
    backend = kernels.get_backend(backend_name_)

    def encode():
        enc = StreamEncoder(codec, backend=backend)
        toks = enc.push(audio)
        toks += enc.finalize()
        return toks

    tokens = encode()

    def decode():
        dec = StreamDecoder(codec, backend=backend)
        dec.push(tokens)
        dec.finalize()

    return time_it(encode, repeats=3), time_it(decode, repeats=3)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seconds", type=float, default=4.0)
    parser.add_argument("--variant", default="student", choices=["student", "toy_student"])
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"compiled backend available: {kernels.HAVE_COMPILED}")
    names = ["numpy"] + (["cython"] if kernels.HAVE_COMPILED else [])

    print("\nper-frame primitives (µs/call):")
    rows = {n: bench_primitives(kernels.get_backend(n), rng) for n in names}
    for key in next(iter(rows.values())):
        line = f"  {key:24s}"
        for n in names:
            line += f"  {n}: {rows[n][key] * 1e6:8.2f}"
        if len(names) == 2:
            line += f"   speedup: {rows['numpy'][key] / rows['cython'][key]:5.2f}x"
        print(line)

    codec = new_codec(variant_config(args.variant), seed=0)
    audio = (0.25 * rng.standard_normal(int(16000 * args.seconds))).astype(np.float32)
    print(f"\nstreaming {args.variant} on {args.seconds:.1f}s of audio (s):")
    res = {n: bench_streaming(n, codec, audio) for n in names}
    for i, which in enumerate(("encode", "decode")):
        line = f"  {which:24s}"
        for n in names:
            line += f"  {n}: {res[n][i]:8.3f}"
        if len(names) == 2:
            line += f"   speedup: {res['numpy'][i] / res['cython'][i]:5.2f}x"
        print(line)
    rt = res[names[-1]][0] + res[names[-1]][1]
    print(f"\nround-trip real-time factor ({names[-1]}): {args.seconds / rt:.1f}x")


if __name__ == "__main__":
    main()
