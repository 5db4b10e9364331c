"""Adam with the additive denominator constant outside the square root."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DivergenceError


@dataclass
class OptimizerConfig:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    sigma: float = 1e-5
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.lr <= 0 or self.sigma <= 0:
            raise ConfigError(f"lr and sigma must be positive, got {self.lr}, {self.sigma}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(f"invalid epochs={self.epochs} / batch_size={self.batch_size}")

    def to_dict(self):
        return asdict(self)


def adam_step(params, opt):
    """One Adam update of every trainable parameter, then clear all grads.

    A missing gradient counts as zero. Frozen parameters are left untouched,
    including their step counters.
    """
    for p in params:
        g = p.value.grad
        if p.trainable and g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {p.name!r}",
                                  parameter=p.name)
    b1, b2 = opt.beta1, opt.beta2
    for p in params:
        if p.trainable:
            g = p.value.grad
            if g is None:
                g = np.zeros_like(p.value.data)
            p.step_count += 1
            t = p.step_count
            p.adam_m = b1 * p.adam_m + (1.0 - b1) * g
            p.adam_v = b2 * p.adam_v + (1.0 - b2) * (g * g)
            m_hat = p.adam_m / (1.0 - b1 ** t)
            v_hat = p.adam_v / (1.0 - b2 ** t)
            p.value.data = p.value.data - opt.lr * m_hat / (np.sqrt(v_hat) + opt.sigma)
        p.value.grad = None
