"""Central-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    tol: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _numeric_grad(f, inputs, k, h, idx):
    x = inputs[k].data
    flat = x.reshape(-1)
    orig = flat[idx]
    flat[idx] = orig + h
    step_up = flat[idx] - orig
    fp = f(*inputs).item()
    flat[idx] = orig - h
    step_dn = orig - flat[idx]
    fm = f(*inputs).item()
    flat[idx] = orig
    return (fp - fm) / (step_up + step_dn)


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare autodiff gradients of scalar ``f`` against central differences.

    The relative error is normwise: the largest absolute discrepancy divided
    by the largest gradient magnitude seen (analytic or numeric).  Passing
    ``max_entries`` checks a random subset of coordinates per input.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    backward(f(*inputs))
    analytic = [t.grad.copy() for t in inputs]

    max_abs, scale, n = 0.0, 0.0, 0
    for k, t in enumerate(inputs):
        size = t.size
        if max_entries is not None and size > max_entries:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(size, max_entries, replace=False)
        else:
            coords = range(size)
        a = analytic[k].reshape(-1)
        for idx in coords:
            num = _numeric_grad(f, inputs, k, h, idx)
            max_abs = max(max_abs, abs(num - a[idx]))
            scale = max(scale, abs(num), abs(a[idx]))
            n += 1
    rel = max_abs / scale if scale > 0 else max_abs
    return GradCheckReport(rel, max_abs, tol, n)
