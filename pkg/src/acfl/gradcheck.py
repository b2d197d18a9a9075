"""Finite-difference verification of taped gradients.

`gradcheck` runs the function once under a fresh tape to collect analytic
gradients, then perturbs every input entry by a central difference and compares.
The error metric is |analytic - numeric| / max(1, |analytic|, |numeric|), i.e.
relative for O(1) gradients and absolute below that scale, which keeps the
check meaningful when true gradients are near zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_err: float
    tol: float
    step: float
    per_input: list[float] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.passed


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare taped gradients of a scalar-valued function against central differences.

    `f` must be a pure function of the given tensors (it may close over
    constants).  Inputs are perturbed in place and restored, so they must own
    their data.
    """
    inputs = list(inputs)
    with Tape() as tape:
        loss = f(*inputs)
        grads = backward(loss, tape)

    per_input: list[float] = []
    for t in inputs:
        analytic = grads[t]
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            plus = f(*inputs).item()
            flat[j] = orig - step
            minus = f(*inputs).item()
            flat[j] = orig
            num_flat[j] = (plus - minus) / (2.0 * step)
        denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
        err = np.abs(analytic - numeric) / denom
        per_input.append(float(err.max()) if err.size else 0.0)

    worst = max(per_input) if per_input else 0.0
    return GradCheckReport(passed=worst < tol, max_rel_err=worst, tol=tol,
                           step=step, per_input=per_input)
