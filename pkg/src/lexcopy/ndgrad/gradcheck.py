from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


def finite_diff_check(f: Callable[[], Tensor], params: list[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f`` must rebuild its graph from ``params`` on every call. The error per
    coordinate is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise ValueError("finite_diff_check: f returned a non-finite value")
    backward(loss)
    worst = 0.0
    with no_grad():
        for p in params:
            if not p.data.flags.c_contiguous:
                p.data = np.ascontiguousarray(p.data)
            analytic = p.grad.copy()
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().data)
                flat[i] = orig - eps
                down = float(f().data)
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise ValueError("finite_diff_check: f returned a non-finite value")
                numeric = (up - down) / (2 * eps)
                a = analytic.reshape(-1)[i]
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
    return worst
