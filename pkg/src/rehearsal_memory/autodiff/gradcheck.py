"""Central finite-difference verification of analytic gradients.

This is the independent oracle for ``Tensor.backward``: it only ever calls
the forward path (twice per probed coordinate) and never touches recorded
gradients, so it cannot share a failure mode with the reverse pass.

Relative error uses a unit guard, |a - n| / max(|a|, |n|, 1), which reads
as relative error for large gradients and absolute error for small ones;
an unguarded ratio is meaningless near zero where the difference quotient
is dominated by roundoff.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParameterStore
from .rng import Rng
from .tensor import Tensor


def numeric_gradient(
    forward: Callable[[], Tensor],
    param: Tensor,
    flat_index: int,
    epsilon: float,
) -> float:
    """Central difference d loss / d param[flat_index] via two forward passes."""
    flat = param.data.reshape(-1)
    saved = flat[flat_index]
    flat[flat_index] = saved + epsilon
    up = forward().item()
    flat[flat_index] = saved - epsilon
    down = forward().item()
    flat[flat_index] = saved
    return (up - down) / (2.0 * epsilon)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)


def check_gradients(
    forward: Callable[[], Tensor],
    store: ParameterStore,
    rng: Rng,
    n_coords: int = 100,
    epsilon: float = 1e-6,
) -> tuple[float, list[tuple[str, int, float, float, float]]]:
    """Compare backward() against central differences on random coordinates.

    Runs one analytic backward, then probes ``n_coords`` coordinates sampled
    across all parameters. Returns (max_relative_error, rows) where each row
    is (param_name, flat_index, analytic, numeric, relative_error).
    """
    store.zero_grad()
    loss = forward()
    loss.backward()
    grads = {name: np.array(g, copy=True) for name, g in store.gradients().items()}

    names = store.names()
    sizes = np.array([store[name].size for name in names])
    total = int(sizes.sum())
    count = min(n_coords, total)
    picks = rng.choice(total, size=count, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    rows = []
    worst = 0.0
    for pick in np.sort(picks):
        which = int(np.searchsorted(offsets, pick, side="right") - 1)
        name = names[which]
        idx = int(pick - offsets[which])
        analytic = float(grads[name].reshape(-1)[idx])
        numeric = numeric_gradient(forward, store[name], idx, epsilon)
        err = relative_error(analytic, numeric)
        worst = max(worst, err)
        rows.append((name, idx, analytic, numeric, err))
    return worst, rows
