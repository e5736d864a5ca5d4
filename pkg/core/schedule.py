"""
Variance-preserving noise schedule.

Linear beta(t) on [0, T]; the forward marginal of a clean point x0 at time
t is N(alpha_t x0, (1 - alpha_t^2) I) with alpha_t = exp(-1/2 int_0^t beta).
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VPSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError(f"Horizon T must be positive, got {self.T}")
        if self.beta_min <= 0 or self.beta_max <= 0:
            raise ValueError("beta must be positive on (0, T]")

    def beta(self, t):
        return self.beta_min + (self.beta_max - self.beta_min) * np.asarray(t, dtype=float) / self.T

    def beta_integral(self, t):
        """int_0^t beta(s) ds"""
        t = np.asarray(t, dtype=float)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t ** 2 / self.T

    def alpha(self, t):
        return np.exp(-0.5 * self.beta_integral(t))

    def noise_variance(self, t):
        """1 - alpha_t^2, accurate for small t."""
        return -np.expm1(-self.beta_integral(t))

    @classmethod
    def from_config(cls, config: dict) -> 'VPSchedule':
        return cls(
            beta_min=float(config.get('beta_min', cls.beta_min)),
            beta_max=float(config.get('beta_max', cls.beta_max)),
            T=float(config.get('T', cls.T)),
        )
