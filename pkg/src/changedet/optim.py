"""AdamW with decoupled weight decay plus the poly learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Parameter
from .tensor import ConfigError


def poly_lr(iteration: int, max_iter: int, base: float, power: float = 0.9) -> float:
    """base * (1 - iteration/max_iter) ** power."""
    if not 0 <= iteration <= max_iter:
        raise ConfigError(f"iteration {iteration} outside [0, {max_iter}]")
    return base * (1.0 - iteration / max_iter) ** power


@dataclass
class ParamGroup:
    named_params: list[tuple[str, Parameter]]
    lr_scale: float = 1.0


class AdamW:
    """Decoupled weight decay: parameters shrink by lr*wd independently of the
    bias-corrected adaptive step."""

    def __init__(self, groups: list[ParamGroup], betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-3):
        self.groups = groups
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.state = {}
        for group in groups:
            for name, p in group.named_params:
                self.state[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        self.last_lrs: list[float] = [0.0] * len(groups)

    def zero_grad(self) -> None:
        for group in self.groups:
            for _, p in group.named_params:
                p.grad = None

    def step(self, lr: float) -> None:
        if lr < 0:
            raise ConfigError(f"learning rate must be nonnegative, got {lr}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for gi, group in enumerate(self.groups):
            eff_lr = lr * group.lr_scale
            self.last_lrs[gi] = eff_lr
            for name, p in group.named_params:
                grad = p.grad if p.grad is not None else np.zeros_like(p.data)
                if not np.all(np.isfinite(grad)):
                    raise RuntimeError(f"non-finite gradient in parameter {name!r}")
                m, v = self.state[name]
                p.data *= 1.0 - eff_lr * self.weight_decay
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                p.data -= eff_lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
