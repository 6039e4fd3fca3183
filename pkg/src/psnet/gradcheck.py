"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(fn, inputs, index, coords, step):
    """Central differences of scalar ``fn(*inputs)`` w.r.t. ``inputs[index]`` at ``coords``."""
    arr = inputs[index].data
    out = np.empty(len(coords))
    for n, c in enumerate(coords):
        orig = arr[c]
        arr[c] = orig + step
        up = float(fn(*inputs).data)
        arr[c] = orig - step
        down = float(fn(*inputs).data)
        arr[c] = orig
        out[n] = (up - down) / (2 * step)
    return out


def grad_check(fn, inputs, step=1e-3, max_coords=None, rng=None):
    """Largest relative error between backprop and central differences.

    ``fn`` maps the input tensors to a scalar tensor. Inputs are cast to
    float64 for the check. ``max_coords`` caps the number of perturbed
    coordinates per input (sampled with ``rng``); by default all are checked.
    """
    inputs = [Tensor(np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64), requires_grad=True) for t in inputs]
    loss = fn(*inputs)
    if loss.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    backward(loss)
    analytic_all = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for i, t in enumerate(inputs):
        analytic = analytic_all[i]
        all_coords = list(np.ndindex(t.shape))
        if max_coords is not None and len(all_coords) > max_coords:
            pick = rng.choice(len(all_coords), size=max_coords, replace=False)
            all_coords = [all_coords[p] for p in sorted(pick)]
        num = numeric_grad(fn, inputs, i, all_coords, step)
        ana = np.array([analytic[c] for c in all_coords])
        if len(all_coords):
            worst = max(worst, float(relative_error(ana, num).max()))
    return worst
