"""AdamW with decoupled weight decay, plus the cosine learning-rate schedule."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError


@dataclass
class CosineSchedule:
    """lr(s) = lr_min + (lr_max - lr_min) * (1 + cos(pi * s / total)) / 2."""

    lr_max: float = 1e-4
    lr_min: float = 1e-6
    total_steps: int = 1

    def lr(self, step):
        step = min(max(step, 0), self.total_steps)
        cos = np.cos(np.pi * step / self.total_steps)
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + cos)


class AdamW:
    """Decoupled-weight-decay Adam over a list of (name, Tensor) parameters.

    The step count, first and second moments mirror the parameter list
    exactly; ``step()`` consumes ``.grad`` left behind by ``backward()``.
    """

    def __init__(self, named_params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for _, t in self.named_params]
        self.v = [np.zeros_like(t.data) for _, t in self.named_params]

    def step(self, lr=None):
        """Apply one update; raises NumericsError on non-finite gradients."""
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for (name, t), m, v in zip(self.named_params, self.m, self.v):
            g = t.grad
            if g is None:
                raise NumericsError(f"parameter {name!r} has no gradient")
            if not np.isfinite(g).all():
                raise NumericsError(f"non-finite gradient in parameter {name!r}")
            if self.weight_decay:
                t.data -= lr * self.weight_decay * t.data
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for _, t in self.named_params:
            t.grad = None
