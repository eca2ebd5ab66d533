"""Central-finite-difference verification of taped gradients."""
from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor
from .rng import STREAM_GRADCHECK, make_rng


def grad_check(
    f,
    params: list[Tensor],
    eps: float = 1e-6,
    samples_per_param: int = 20,
    rng: np.random.Generator | None = None,
    names: list[str] | None = None,
) -> float:
    """Max relative error between taped gradients of f and central differences.

    f is a zero-argument callable returning a scalar Tensor computed from the
    tensors in ``params``.  For each parameter, up to ``samples_per_param``
    coordinates are probed with (f(p+eps) - f(p-eps)) / (2 eps) and compared
    against the taped gradient as |analytic - numeric| / max(1, |numeric|).

    Raises FloatingPointError naming the coordinate if f is non-finite at a
    probe point.  eps must lie in [1e-7, 1e-4].
    """
    if not (1e-7 <= eps <= 1e-4):
        raise ValueError(f"eps must be in [1e-7, 1e-4], got {eps}")
    if rng is None:
        rng = make_rng(0, STREAM_GRADCHECK)
    if names is None:
        names = [f"param{i}" for i in range(len(params))]

    with Tape() as tape:
        out = f()
    analytic = tape.grad(out, params)

    worst = 0.0
    for p, g, name in zip(params, analytic, names):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        n = flat.size
        if n == 0:
            continue
        if n <= samples_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples_per_param, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(
                    f"objective non-finite probing {name} coordinate {int(i)}"
                )
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(float(gflat[i]) - numeric) / max(1.0, abs(numeric))
            worst = max(worst, rel)
    return worst
