"""Central finite-difference verification of tape gradients.

Run models in float64 before checking: float32 rounding noise swamps the
1e-4-class tolerances this is meant to certify.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    rel_tol: float
    n_checked: int
    worst: tuple[str, int] | None = None
    per_param: dict[str, float] = field(default_factory=dict)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max rel err {self.max_rel_error:.3e} "
            f"(tol {self.rel_tol:.1e}, {self.n_checked} coordinates)"
        )


def tape_gradients(fn, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.grad = None
    with Tape():
        loss = fn()
        backward(loss)
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}


def grad_check(
    fn,
    params: dict[str, Tensor],
    rel_tol: float = 1e-4,
    h: float = 1e-5,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    denom_floor: float | None = None,
) -> GradCheckReport:
    """Compare tape gradients of scalar-valued ``fn()`` against central differences.

    ``fn`` must be a pure function of ``params`` (re-running it re-reads the
    current parameter values).  When ``max_coords_per_param`` is set, a seeded
    random subset of coordinates per parameter is probed; otherwise every
    coordinate is.  Relative error uses max(|a|, |b|, denom_floor) as the
    denominator, with the floor defaulting to 1e-3 of the largest gradient
    magnitude to keep noise on near-zero coordinates from dominating.
    """
    analytic = tape_gradients(fn, params)
    gmax = max((float(np.max(np.abs(g))) for g in analytic.values()), default=0.0)
    if denom_floor is None:
        denom_floor = max(1e-3 * gmax, 1e-12)
    rng = rng or np.random.default_rng(0)

    max_err = 0.0
    worst = None
    n_checked = 0
    per_param: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(n)
        ga = analytic[name].reshape(-1)
        p_err = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = float(fn().data)
            flat[c] = orig - h
            f_minus = float(fn().data)
            flat[c] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = float(ga[c])
            err = abs(fd - a) / max(abs(fd), abs(a), denom_floor)
            n_checked += 1
            p_err = max(p_err, err)
            if err > max_err:
                max_err = err
                worst = (name, int(c))
        per_param[name] = p_err
    return GradCheckReport(
        max_rel_error=max_err,
        passed=max_err < rel_tol,
        rel_tol=rel_tol,
        n_checked=n_checked,
        worst=worst,
        per_param=per_param,
    )
