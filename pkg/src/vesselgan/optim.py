"""Adam with bias correction and a step-wise exponential learning-rate schedule."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GraphError


@dataclass
class AdamConfig:
    lr0: float = 0.002
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    decay_factor: float = 0.75
    decay_every: int = 50

    def validate(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be at least 1, got {self.decay_every}")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr: float = 0.002

    @classmethod
    def init(cls, params, cfg):
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            t=0,
            lr=cfg.lr0,
        )


def adam_step(params, state, cfg):
    """Apply one bias-corrected Adam update in place, then zero the grads."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise GraphError(f"no gradient for parameter {missing[0]!r}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (state.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.dtype)
        p.grad = np.zeros_like(p.data)
    return state


def lr_at(cfg, epoch):
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def apply_lr_decay(state, cfg, epoch):
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    state.lr = lr_at(cfg, epoch)
    return state
