"""SGD with momentum and L2 weight decay, plus the cosine learning-rate schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, StateError


@dataclass
class OptimizerConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 200
    batch_size: int = 128

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ParameterError(f"lr0 must be positive, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")
        # epochs=0 is allowed as a no-op run
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class OptimizerState:
    velocities: list = field(default_factory=list)
    epoch: int = 0

    @classmethod
    def for_params(cls, params):
        return cls([np.zeros_like(p.data) for p in params])


def sgd_step(params, grads, state, lr, config):
    """One momentum-SGD update, in place.

    For each parameter ``w`` with gradient ``grad``::

        g = grad + weight_decay * w
        v = momentum * v + g
        w = w - lr * v

    A ``None`` gradient is treated as zero.
    """
    if len(state.velocities) != len(params) or len(grads) != len(params):
        raise StateError(
            f"{len(params)} parameters, {len(grads)} gradients, {len(state.velocities)} velocity buffers"
        )
    for i, (p, g, v) in enumerate(zip(params, grads, state.velocities)):
        if v.shape != p.data.shape:
            raise StateError(f"velocity {i} has shape {v.shape}, parameter has {p.data.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise StateError(f"gradient {i} has shape {g.shape}, parameter has {p.data.shape}")
        g = g + p.dtype.type(config.weight_decay) * p.data
        v *= p.dtype.type(config.momentum)
        v += g
        p.data -= p.dtype.type(lr) * v
    return params, state


def cosine_lr(epoch, total, lr0):
    """Cosine-annealed learning rate decaying from ``lr0`` at epoch 0 to 0 at ``total``."""
    if total < 1:
        raise ParameterError(f"total epochs must be >= 1, got {total}")
    if not 0 <= epoch <= total:
        raise ParameterError(f"epoch {epoch} outside [0, {total}]")
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / total))
