from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               floor: float = 1e-6) -> float:
    """Compare backprop gradients of ``f(*inputs)`` with central differences.

    ``f`` must be pure (no dropout, no hidden RNG draws).  The error for each
    input is ``||analytic - numeric|| / max(||analytic|| + ||numeric||, floor)``
    and the maximum over inputs is returned.  The norm-wise form keeps
    near-zero entries from dominating; the floor keeps gradients that are
    exactly zero in theory (rounding noise on both sides) from reading as
    a total mismatch.
    """
    for x in inputs:
        x.grad = None
        x.requires_grad = True
        x.data = np.array(x.data, order="C")  # ascontiguousarray would promote 0-d inputs
    out = f(*inputs)
    if out.shape != ():
        raise ValueError("grad_check: f must return a scalar")
    out.backward()
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        numeric = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + eps
            up = f(*inputs).item()
            flat[k] = saved - eps
            down = f(*inputs).item()
            flat[k] = saved
            num_flat[k] = (up - down) / (2 * eps)
        denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
        x.grad = None
    return worst
