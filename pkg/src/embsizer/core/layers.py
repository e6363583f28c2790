"""Trainable layers and initializers built on the autodiff Tensor."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DataError, DegenerateBatchError
from . import autograd as ag
from .autograd import Tensor
from .rng import RngStream


class Parameter(Tensor):
    """A leaf tensor with a gradient buffer and Adam moment accumulators."""

    __slots__ = ("name", "m", "v", "step_count")

    def __init__(self, value: np.ndarray, name: str):
        super().__init__(value, requires_grad=True)
        self.grad = np.zeros_like(value)
        self.name = name
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)
        self.step_count = 0


def affine_init(fan_in: int, fan_out: int, rng: RngStream, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out), dtype=dtype)


def embedding_init(n: int, d: int, rng: RngStream, dtype=np.float64, scale: float = 0.05) -> np.ndarray:
    # common scale across widths: candidate tables of different sizes start at
    # equal value variance, so training intensity is what separates them later
    return rng.uniform(-scale, scale, size=(n, d), dtype=dtype)


class Affine:
    """y = xW + b with bias broadcast over rows."""

    def __init__(self, fan_in: int, fan_out: int, rng: RngStream, name: str,
                 dtype=np.float64, zero_init: bool = False):
        if zero_init:
            w = np.zeros((fan_in, fan_out), dtype=dtype)
        else:
            w = affine_init(fan_in, fan_out, rng, dtype)
        self.W = Parameter(w, f"{name}/W")
        self.b = Parameter(np.zeros((1, fan_out), dtype=dtype), f"{name}/b")

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.W.data.shape[0]:
            raise ConfigError(
                f"affine {self.W.name}: input width {x.data.shape[1]} != {self.W.data.shape[0]}"
            )
        return ag.add(ag.matmul(x, self.W), self.b)

    def parameters(self) -> list[Parameter]:
        return [self.W, self.b]


class BatchNorm:
    """Per-column standardization with learned scale/shift and running statistics.

    Train mode uses biased batch variance; inference mode uses the running
    estimates accumulated with the given momentum.
    """

    def __init__(self, width: int, name: str, momentum: float = 0.9, eps: float = 1e-5,
                 dtype=np.float64):
        self.name = name
        self.gamma = Parameter(np.ones((1, width), dtype=dtype), f"{name}/gamma")
        self.beta = Parameter(np.zeros((1, width), dtype=dtype), f"{name}/beta")
        self.running_mean = np.zeros((1, width), dtype=dtype)
        self.running_var = np.ones((1, width), dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if train:
            if x.data.shape[0] < 2:
                raise DegenerateBatchError("batchnorm needs a batch of at least 2 in train mode")
            mu = ag.mean_axis(x, 0)
            xc = ag.add(x, ag.mul(mu, -1.0))
            var = ag.mean_axis(ag.mul(xc, xc), 0)
            inv_std = ag.div(Tensor(np.ones_like(var.data)), ag.sqrt(ag.add(var, self.eps)))
            norm = ag.mul(xc, inv_std)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1.0 - m) * mu.data
            self.running_var = m * self.running_var + (1.0 - m) * var.data
        else:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            norm = ag.mul(ag.add(x, -self.running_mean), inv)
        return ag.add(ag.mul(norm, self.gamma), self.beta)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            f"{self.name}/running_mean": self.running_mean,
            f"{self.name}/running_var": self.running_var,
        }

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.running_mean = arrays[f"{self.name}/running_mean"].astype(
            self.running_mean.dtype).reshape(self.running_mean.shape)
        self.running_var = arrays[f"{self.name}/running_var"].astype(
            self.running_var.dtype).reshape(self.running_var.shape)


class LayerNorm:
    """Per-row standardization over features with learned scale/shift."""

    def __init__(self, width: int, name: str, eps: float = 1e-5, dtype=np.float64):
        self.gamma = Parameter(np.ones((1, width), dtype=dtype), f"{name}/gamma")
        self.beta = Parameter(np.zeros((1, width), dtype=dtype), f"{name}/beta")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = ag.mean_axis(x, 1)
        xc = ag.add(x, ag.mul(mu, -1.0))
        var = ag.mean_axis(ag.mul(xc, xc), 1)
        inv_std = ag.div(Tensor(np.ones_like(var.data)), ag.sqrt(ag.add(var, self.eps)))
        return ag.add(ag.mul(ag.mul(xc, inv_std), self.gamma), self.beta)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]


def cross_entropy(y_hat: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy on predicted probabilities.

    Probabilities are clamped to [1e-7, 1 - 1e-7] so the loss stays finite.
    Returns (loss, gradient w.r.t. the pre-sigmoid logits) where the per-sample
    logit gradient is (y_hat - y) scaled by 1/batch for the mean loss.
    """
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    p = np.clip(np.asarray(y_hat, dtype=np.float64), 1e-7, 1.0 - 1e-7)
    loss = float(np.mean(-y * np.log(p) - (1 - y) * np.log(1 - p)))
    grad_logit = (p - y) / p.size
    return loss, grad_logit
