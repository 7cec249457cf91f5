"""SGD with momentum and the piecewise-constant learning-rate schedule."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .model import Model


class SGD:
    """v <- mu*v + (g + wd*w); w <- w - lr*v, per parameter tensor.

    Velocity buffers are keyed by (layer name, param name), so swapping a
    layer out drops its buffers and any layer introduced by surgery starts
    from zero velocity.
    """

    def __init__(self, momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[tuple[str, str], np.ndarray] = {}

    def step(self, model: Model, lr: float) -> None:
        live = set()
        for layer in model.layers:
            for pname, w in layer.params.items():
                key = (layer.name, pname)
                live.add(key)
                g = layer.grads[pname]
                v = self.velocity.get(key)
                if v is None:
                    v = np.zeros_like(w)
                update = g + self.weight_decay * w if self.weight_decay else g
                v = self.momentum * v + update
                self.velocity[key] = v
                w -= lr * v
        for key in list(self.velocity):
            if key not in live:
                del self.velocity[key]


def lr_at(epoch: int, milestones: dict[int, float]) -> float:
    """Learning rate of the latest milestone at or before `epoch`."""
    if not milestones:
        raise ConfigError("lr schedule needs at least one milestone")
    best = None
    for start in sorted(milestones):
        if start <= epoch:
            best = milestones[start]
    if best is None:
        raise ConfigError(f"no lr milestone covers epoch {epoch}")
    return best
