"""SGD with heavy-ball momentum."""

from __future__ import annotations

import numpy as np

from egoaudio.errors import ConfigError, ShapeError


def sgd_momentum_step(params, grads, velocity, lr: float, momentum: float = 0.9):
    """In-place update ``v <- momentum*v + g; p <- p - lr*v`` for aligned lists of arrays."""
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeError("params, grads and velocity must have the same length")
    for p, g, v in zip(params, grads, velocity):
        if not (p.shape == g.shape == v.shape):
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
        v *= momentum
        v += g
        p -= p.dtype.type(lr) * v
    return params, velocity


class SGD:
    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.9):
        if lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        sgd_momentum_step(self.params, grads, self.velocity, self.lr, self.momentum)
