"""Dense tensors with tape-based reverse-mode automatic differentiation.

A ``Tape`` records every differentiable op executed while it is active (and at
least one input requires gradients).  ``backward`` replays the tape in reverse,
visiting each recorded op exactly once.  Tensors are plain numpy arrays plus a
gradient slot; float32 is the working precision, float64 exists for gradient
checking.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_TAPE_STACK: list["Tape"] = []
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Enable NaN/Inf detection on every op output (slow, for debugging)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def current_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class GradientError(RuntimeError):
    """Raised on autodiff contract violations (non-scalar root, missing graph)."""


class Tensor:
    """A dense real-valued array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._tape = None
        if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Return a view of the same values outside the recorded graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Convenience arithmetic; the implementations live in ops.py.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division not supported; use mul + reciprocal ops")
        return ops.mul(self, 1.0 / float(other))

    def sum(self):
        from . import ops

        return ops.sum_all(self)

    def mean(self):
        from . import ops

        return ops.mean_all(self)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


class _Op:
    __slots__ = ("out", "inputs", "bwd")

    def __init__(self, out, inputs, bwd):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd


class Tape:
    """Ordered record of ops; single-owner, not shareable across threads."""

    __slots__ = ("_ops",)

    def __init__(self):
        self._ops: list[_Op] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self._ops)


def record(out_data: np.ndarray, inputs: tuple, bwd) -> Tensor:
    """Wrap an op result, recording it on the active tape when grads are needed.

    ``bwd(grad_out)`` must return one gradient array (or None) per input, in
    order.  Inputs must all be Tensors.
    """
    if _DEBUG_CHECKS and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values in op output")
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        out._tape = tape
        tape._ops.append(_Op(out, inputs, bwd))
    return out


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``root``.

    ``root`` must be a scalar recorded on a tape.  Repeated calls accumulate
    into existing ``grad`` arrays.
    """
    if root.size != 1:
        raise GradientError(f"backward root must be scalar, got shape {root.shape}")
    tape = root._tape
    if tape is None:
        if root.requires_grad:
            raise GradientError("root has no recorded tape (created outside a Tape context?)")
        return  # constant graph: nothing to do
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    holders: dict[int, Tensor] = {id(root): root}
    for op in reversed(tape._ops):
        g_out = grads.get(id(op.out))
        if g_out is None:
            continue
        in_grads = op.bwd(g_out)
        for t, g in zip(op.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                holders[key] = t
    for key, g in grads.items():
        t = holders[key]
        t.grad = g if t.grad is None else t.grad + g
