"""Parameterized layers for the codec: causal convs and ConvNeXt-v2 blocks.

All layers operate channels-first (C, F).  Each layer exposes its parameter
count and a documented FLOPs formula so the complexity counters can be checked
against independent per-layer arithmetic:

  * conv / linear / transposed conv: 2 FLOPs per weight multiply-accumulate
    (bias excluded), times output frames (input frames for transposed).
  * layer norm: 8 FLOPs per element; GRN: 7; activations: 1; residual add: 1.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, ops

INIT_STD = 0.02
LN_EPS = 1e-6
GRN_EPS = 1e-6


def _weight(rng: np.random.Generator, shape, dtype=np.float32) -> Tensor:
    return Tensor(rng.normal(0.0, INIT_STD, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


class Layer:
    """Base: named parameters plus complexity accounting."""

    _param_names: tuple[str, ...] = ()

    def named_params(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        sep = "." if prefix else ""
        return [(f"{prefix}{sep}{n}", getattr(self, n)) for n in self._param_names]

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))

    def to_dtype(self, dtype) -> None:
        for p in self.params():
            p.data = p.data.astype(dtype)
            p.grad = None

    def out_frames(self, frames_in: int) -> int:
        return frames_in

    def flops(self, frames_in: int) -> int:
        raise NotImplementedError

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


class Conv1d(Layer):
    _param_names = ("weight", "bias")

    def __init__(self, c_in, c_out, kernel, rng, stride=1, groups=1, causal=True):
        if kernel < 1 or stride < 1:
            raise ValueError(f"invalid conv config kernel={kernel} stride={stride}")
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.groups, self.causal = stride, groups, causal
        self.weight = _weight(rng, (c_out, c_in // groups, kernel))
        self.bias = _zeros(c_out)

    def out_frames(self, frames_in: int) -> int:
        return -(-frames_in // self.stride)

    def flops(self, frames_in: int) -> int:
        macs = self.kernel * (self.c_in // self.groups) * self.c_out
        return 2 * macs * self.out_frames(frames_in)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d(
            x, self.weight, self.bias, stride=self.stride, groups=self.groups, causal=self.causal
        )


class ConvTranspose1d(Layer):
    _param_names = ("weight", "bias")

    def __init__(self, c_in, c_out, kernel, stride, rng, causal=True):
        if kernel < stride:
            raise ValueError("transposed conv kernel must cover the stride")
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.causal = causal
        self.weight = _weight(rng, (c_in, c_out, kernel))
        self.bias = _zeros(c_out)

    def out_frames(self, frames_in: int) -> int:
        return frames_in * self.stride

    def flops(self, frames_in: int) -> int:
        return 2 * self.kernel * self.c_in * self.c_out * frames_in

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv1d_transposed(x, self.weight, self.bias, self.stride, causal=self.causal)


class ConvNeXtBlock(Layer):
    """dw conv -> LN -> linear up -> GELU -> GRN -> linear down -> residual."""

    _param_names = (
        "dw_weight",
        "dw_bias",
        "ln_gamma",
        "ln_beta",
        "up_weight",
        "up_bias",
        "down_weight",
        "down_bias",
        "grn_gamma",
        "grn_beta",
    )

    def __init__(self, c_l, c_h, kernel, rng, causal=True, depthwise=True, grn_cumulative=True):
        if c_l >= c_h:
            raise ValueError(f"block needs c_l < c_h, got {c_l} >= {c_h}")
        self.c_l, self.c_h, self.kernel = c_l, c_h, kernel
        self.causal = causal
        self.depthwise = depthwise
        self.grn_cumulative = grn_cumulative
        self.groups = c_l if depthwise else 1
        self.dw_weight = _weight(rng, (c_l, c_l // self.groups, kernel))
        self.dw_bias = _zeros(c_l)
        self.ln_gamma = _ones(c_l)
        self.ln_beta = _zeros(c_l)
        self.up_weight = _weight(rng, (c_h, c_l))
        self.up_bias = _zeros(c_h)
        self.down_weight = _weight(rng, (c_l, c_h))
        self.down_bias = _zeros(c_l)
        self.grn_gamma = _zeros(c_h)
        self.grn_beta = _zeros(c_h)

    def flops(self, frames_in: int) -> int:
        f = frames_in
        conv = 2 * self.kernel * (self.c_l // self.groups) * self.c_l * f
        ln = 8 * f * self.c_l
        lin_up = 2 * self.c_l * self.c_h * f
        act = f * self.c_h
        grn_ = 7 * f * self.c_h
        lin_down = 2 * self.c_h * self.c_l * f
        res = f * self.c_l
        return conv + ln + lin_up + act + grn_ + lin_down + res

    def forward(self, x: Tensor) -> Tensor:
        h = ops.conv1d(
            x, self.dw_weight, self.dw_bias, stride=1, groups=self.groups, causal=self.causal
        )
        ht = ops.transpose(h)
        ht = ops.layer_norm(ht, self.ln_gamma, self.ln_beta, eps=LN_EPS)
        ht = ops.linear(ht, self.up_weight, self.up_bias)
        ht = ops.gelu(ht)
        ht = ops.grn(ht, self.grn_gamma, self.grn_beta, eps=GRN_EPS, cumulative=self.grn_cumulative)
        ht = ops.linear(ht, self.down_weight, self.down_bias)
        return ops.add(x, ops.transpose(ht))


class Linear(Layer):
    _param_names = ("weight", "bias")

    def __init__(self, c_in, c_out, rng, bias=True):
        self.c_in, self.c_out = c_in, c_out
        self.weight = _weight(rng, (c_out, c_in))
        self.bias = _zeros(c_out) if bias else None

    def named_params(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        sep = "." if prefix else ""
        out = [(f"{prefix}{sep}weight", self.weight)]
        if self.bias is not None:
            out.append((f"{prefix}{sep}bias", self.bias))
        return out

    def flops(self, frames_in: int) -> int:
        return 2 * self.c_in * self.c_out * frames_in

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)
