"""Controlled benchmark environment with generalized Pareto episode costs.

A one-parameter policy steers the scale of a GPD cost distribution through
``scale(theta) = (theta - vartheta)^2 + b`` while the shape ``xi`` stays
fixed, so every CVaR level has a closed form and the optimal policy is
exactly ``theta = vartheta``.  This makes the environment a ground-truth
testbed for tail-risk estimators and policy-gradient training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .evt import XI_ZERO_TOL, GpdParams, gpd_quantile

__all__ = ["GpdEnvConfig", "GpdEnv", "scale_of", "sample_costs", "cvar_closed_form"]


@dataclass(frozen=True)
class GpdEnvConfig:
    """Cost-distribution knobs: fixed shape, scale-curve minimiser and floor."""

    xi: float = 0.4
    vartheta: float = 0.4
    b: float = 2.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.xi) and self.xi < 1.0):
            raise ValueError("shape must be finite and below 1 for the CVaR to exist")
        if self.b <= 0.0:
            raise ValueError("scale floor b must be positive")


def scale_of(cfg: GpdEnvConfig, theta: float) -> float:
    """Cost-scale response ``(theta - vartheta)^2 + b`` of the policy."""
    return (float(theta) - cfg.vartheta) ** 2 + cfg.b


def sample_costs(cfg: GpdEnvConfig, theta: float, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` episode costs from GPD(xi, scale_of(theta)).

    Inverse-transform sampling from a generator seeded with ``seed`` makes
    the draw a pure function of ``(theta, n, seed)``; with the seed held
    fixed the same uniforms underlie every policy value, which is what the
    common-random-numbers gradient relies on.
    """
    rng = np.random.default_rng(seed)
    params = GpdParams(cfg.xi, scale_of(cfg, theta))
    return gpd_quantile(params, rng.random(n))


def cvar_closed_form(cfg: GpdEnvConfig, theta: float, alpha: float) -> float:
    """Exact CVaR of the cost distribution at level ``alpha``.

    For a GPD with scale ``s``: ``s/(1-xi) * (1 + ((1-alpha)^(-xi) - 1)/xi)``,
    reducing to ``s * (1 - log(1-alpha))`` in the exponential case.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"risk level must lie in (0, 1), got {alpha}")
    s = scale_of(cfg, theta)
    if abs(cfg.xi) < XI_ZERO_TOL:
        return s * (1.0 - math.log1p(-alpha))
    return (
        s
        / (1.0 - cfg.xi)
        * (1.0 + math.expm1(-cfg.xi * math.log1p(-alpha)) / cfg.xi)
    )


class GpdEnv:
    """Environment adapter around :func:`sample_costs` for the training loop."""

    dim = 1

    def __init__(self, config: GpdEnvConfig | None = None):
        self.config = config or GpdEnvConfig()

    def sample_costs(self, theta: np.ndarray, n: int, seed: int) -> np.ndarray:
        (value,) = np.asarray(theta, dtype=float).ravel()
        return sample_costs(self.config, value, n, seed)

    def cvar_oracle(self, theta: np.ndarray, alpha: float) -> float:
        (value,) = np.asarray(theta, dtype=float).ravel()
        return cvar_closed_form(self.config, value, alpha)

    @property
    def optimal_theta(self) -> np.ndarray:
        return np.array([self.config.vartheta])
