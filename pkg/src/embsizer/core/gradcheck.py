"""Finite-difference verification of autodiff gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor
from .rng import RngStream


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                            h: float = 1e-5, max_coords: int = 24,
                            seed: int = 0) -> float:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must rebuild its graph on every call and return a scalar Tensor.
    Up to ``max_coords`` coordinates are probed per parameter. Returns the
    maximum relative error max(|a - n|) / max(|a|, |n|, 1e-8) over all probed
    coordinates.
    """
    for p in params:
        if p.grad is not None:
            p.grad.fill(0.0)
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = RngStream(seed).child("fdcheck")
    worst = 0.0
    for p, ana in zip(params, analytic):
        n = p.data.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        flat = p.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = f().item()
            flat[c] = orig - h
            down = f().item()
            flat[c] = orig
            num = (up - down) / (2.0 * h)
            a = float(ana_flat[c])
            denom = max(abs(a), abs(num), 1e-8)
            err = abs(a - num) / denom
            if abs(a) < 1e-10 and abs(num) < 1e-10:
                err = 0.0
            worst = max(worst, err)
    return worst
