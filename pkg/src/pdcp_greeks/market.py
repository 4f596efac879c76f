"""Black-Scholes market parameters and payoffs for the put and put-on-the-average."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidParameterError(ValueError):
    """A market or discretization parameter violates its invariant."""


@dataclass(frozen=True)
class MarketParams1D:
    sigma: float
    r: float
    T: float
    K: float
    s_max: float

    def __post_init__(self):
        for name in ("sigma", "r", "T", "K", "s_max"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.s_max > 2 * self.K:
            raise InvalidParameterError(
                f"s_max must exceed 2K (s_max={self.s_max}, K={self.K})"
            )


@dataclass(frozen=True)
class MarketParams2D:
    sigma1: float
    sigma2: float
    rho: float
    r: float
    T: float
    K: float
    s_max: float

    def __post_init__(self):
        for name in ("sigma1", "sigma2", "r", "T", "K", "s_max"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidParameterError(f"rho must lie in [-1, 1], got {self.rho}")
        if not self.s_max > 2 * self.K:
            raise InvalidParameterError(
                f"s_max must exceed 2K (s_max={self.s_max}, K={self.K})"
            )


# Parameter sets used throughout the convergence study.
PUT_1D = MarketParams1D(sigma=0.40, r=0.02, T=0.5, K=100.0, s_max=500.0)
PUT_ON_AVERAGE_2D = MarketParams2D(
    sigma1=0.30, sigma2=0.40, rho=0.50, r=0.01, T=0.5, K=100.0, s_max=500.0
)


def payoff_put_1d(s, K):
    """max(K - s, 0); works elementwise on arrays."""
    out = np.maximum(K - np.asarray(s, dtype=float), 0.0)
    return float(out) if out.ndim == 0 else out


def payoff_put_on_average(s1, s2, K):
    """max(0, K - (s1 + s2)/2); broadcasts over array inputs."""
    out = np.maximum(0.0, K - 0.5 * (np.asarray(s1, dtype=float) + np.asarray(s2, dtype=float)))
    return float(out) if out.ndim == 0 else out
