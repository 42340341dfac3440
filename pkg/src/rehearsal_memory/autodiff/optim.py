"""Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError
from .params import ParameterStore


def adam_step(
    store: ParameterStore,
    grads: dict[str, np.ndarray],
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Apply one bias-corrected Adam update in place; increments the step counter.

    Raises NumericError naming the parameter if its gradient is non-finite,
    leaving the store untouched.
    """
    for name, g in grads.items():
        if name not in store:
            raise ShapeError(f"gradient for unknown parameter: {name}")
        if g.shape != store[name].shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter {name} {store[name].shape}"
            )
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")

    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        g = g.astype(np.float64)
        m = store.adam_m[name]
        v = store.adam_v[name]
        m64 = beta1 * m.astype(np.float64) + (1.0 - beta1) * g
        v64 = beta2 * v.astype(np.float64) + (1.0 - beta2) * (g * g)
        store.adam_m[name] = m64.astype(m.dtype)
        store.adam_v[name] = v64.astype(v.dtype)
        update = lr * (m64 / bc1) / (np.sqrt(v64 / bc2) + eps)
        p = store[name]
        p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)
