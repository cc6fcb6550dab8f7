"""SGD with momentum and the warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from typing import Iterable, List

import numpy as np

from lightunetr.tensor.core import Tensor


def cosine_lr(t: int, total: int = 15000, warmup: int = 500, base: float = 0.01) -> float:
    """Linear warmup from 0 to ``base`` over ``warmup`` steps, then half-cosine decay to 0."""
    if not 0 <= t <= total:
        raise ValueError(f"iteration {t} outside [0, {total}]")
    if warmup and t < warmup:
        return base * t / warmup
    if total == warmup:
        return base
    return base * 0.5 * (1.0 + math.cos(math.pi * (t - warmup) / (total - warmup)))


class SGD:
    """Momentum SGD.

    The update is ``buf <- mu * buf + g`` followed by
    ``p <- p - lr * (buf + weight_decay * p)``; decay is applied outside the
    momentum filter.
    """

    def __init__(self, params: Iterable[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params: List[Tensor] = list(params)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.buffers = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        if lr < 0:
            raise ValueError(f"negative learning rate {lr}")
        for i, (p, buf) in enumerate(zip(self.params, self.buffers)):
            if p.grad is None:
                raise RuntimeError(f"parameter {p.name or i} has no gradient")
            buf *= self.momentum
            buf += p.grad
            update = buf if not self.weight_decay else buf + self.weight_decay * p.data
            p.data -= (lr * update).astype(p.dtype, copy=False)

    def state_arrays(self) -> List[np.ndarray]:
        return self.buffers

    def load_state_arrays(self, arrays: List[np.ndarray]) -> None:
        if len(arrays) != len(self.buffers):
            raise ValueError(f"expected {len(self.buffers)} momentum buffers, got {len(arrays)}")
        for buf, arr in zip(self.buffers, arrays):
            buf[...] = arr
