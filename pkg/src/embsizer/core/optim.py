"""Adam optimizer with optional region-restricted updates.

Embedding tables only receive gradients in the rows that appeared in the batch
and, under the column-prefix weight-sharing scheme, only in a leading block of
columns. ``step_param`` therefore accepts an optional row set and column
cutoff, and touches moments, step counters, and values for that region only —
everything outside the region stays bit-identical.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import NumericsError
from .layers import Parameter


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step_param(self, p: Parameter, rows: np.ndarray | None = None,
                   col_end: int | None = None) -> None:
        if p.grad is None:
            return
        p.step_count += 1
        t = p.step_count
        b1, b2 = self.beta1, self.beta2
        with np.errstate(over="ignore", invalid="ignore"):
            if rows is None and col_end is None:
                g = p.grad
                p.m = b1 * p.m + (1.0 - b1) * g
                p.v = b2 * p.v + (1.0 - b2) * (g * g)
                mhat = p.m / (1.0 - b1 ** t)
                vhat = p.v / (1.0 - b2 ** t)
                p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
                if not np.all(np.isfinite(p.data)):
                    raise NumericsError(f"non-finite values in parameter {p.name} after update")
                return
            r = slice(None) if rows is None else rows
            c = slice(None) if col_end is None else slice(0, col_end)
            g = p.grad[r, c]
            m = b1 * p.m[r, c] + (1.0 - b1) * g
            v = b2 * p.v[r, c] + (1.0 - b2) * (g * g)
            p.m[r, c] = m
            p.v[r, c] = v
            mhat = m / (1.0 - b1 ** t)
            vhat = v / (1.0 - b2 ** t)
            upd = p.data[r, c] - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            if not np.all(np.isfinite(upd)):
                raise NumericsError(f"non-finite values in parameter {p.name} after update")
            p.data[r, c] = upd

    def step(self, params: Iterable[Parameter]) -> None:
        for p in params:
            self.step_param(p)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad.fill(0.0)
