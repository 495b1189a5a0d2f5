"""Adam with bias correction and a step-decay learning-rate schedule."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .nn import Param
from .tensor import ShapeError

BASE_LR = 3e-4
STEP_SIZE = 3
GAMMA = 0.5


def adam_step(params: Sequence[Param], grads: Sequence[np.ndarray | None] | None = None,
              lr: float = BASE_LR, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Update ``params`` in place. ``grads`` defaults to each tensor's ``.grad``.

    A parameter whose gradient is None took no part in the loss and is left
    untouched, moments and step count included.
    """
    if grads is None:
        grads = [p.tensor.grad for p in params]
    if len(grads) != len(params):
        raise ValueError(f"adam_step: {len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if g is None:
            continue
        if g.shape != p.tensor.shape:
            raise ShapeError(f"adam_step[{p.name}]", p.tensor.shape, g.shape)
        p.step_count += 1
        m, v = p.adam_m, p.adam_v
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        g = g * g
        g *= 1.0 - beta2
        v += g
        # lr * m_hat / (sqrt(v_hat) + eps), evaluated with in-place buffers
        denom = np.sqrt(v, out=g)
        denom *= 1.0 / math.sqrt(1.0 - beta2 ** p.step_count)
        denom += eps
        step = np.divide(m, denom, out=denom)
        step *= lr / (1.0 - beta1 ** p.step_count)
        p.tensor.data -= step


def steplr(epoch: int, base_lr: float = BASE_LR, step_size: int = STEP_SIZE, gamma: float = GAMMA) -> float:
    if epoch < 0:
        raise ValueError(f"steplr: negative epoch {epoch}")
    return base_lr * gamma ** (epoch // step_size)
