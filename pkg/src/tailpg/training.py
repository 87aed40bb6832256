"""CVaR policy-gradient training: forward differences, common random numbers, Adam.

One training iteration draws a batch of episode costs at the current policy,
estimates the batch CVaR, then re-draws the batch at each coordinate-shocked
policy *with the same seed* (common random numbers) and estimates it with
the identical procedure, threshold selection included, so the
finite-difference quotient isolates the policy effect from sampling noise
without biasing the refit.  Parameters follow the Adam update with bias
correction, descending the estimated CVaR.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .evt import CvarEstimate, ThresholdConfig, cvar_sa, estimate_cvar

__all__ = [
    "Environment",
    "TrainConfig",
    "AdamState",
    "adam_step",
    "mix_seed",
    "GradientResult",
    "finite_diff_gradient",
    "IterationRecord",
    "TrainTrace",
    "train",
    "rmse_report",
]


class Environment(Protocol):
    """Anything that can simulate a batch of episode costs for a policy.

    ``sample_costs`` must be a pure function of ``(theta, n, seed)`` so that
    repeated calls with a shared seed reuse identical randomness across
    policy values.
    """

    dim: int

    def sample_costs(self, theta: np.ndarray, n: int, seed: int) -> np.ndarray: ...


# =============================================================================
# Seed derivation
# =============================================================================

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix_seed(base: int, k: int) -> int:
    """Derive a decorrelated child seed from ``(base, k)`` (splitmix64 mix)."""
    z = (int(base) + (int(k) + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & (_MASK64 >> 1)


# =============================================================================
# Adam
# =============================================================================


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim), t=0)


def adam_step(
    state: AdamState,
    grad: np.ndarray,
    step_size: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_hat: float = 1e-8,
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; returns the new state and the delta.

    The delta is ``-step_size * m_hat / (sqrt(v_hat) + eps_hat)``, i.e. a
    descent step on whatever objective the gradient came from.
    """
    g = np.asarray(grad, dtype=float)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    delta = -step_size * m_hat / (np.sqrt(v_hat) + eps_hat)
    return AdamState(m=m, v=v, t=t), delta


# =============================================================================
# Finite-difference CVaR gradient
# =============================================================================


@dataclass(frozen=True)
class TrainConfig:
    """Batch size, schedule and estimator knobs of one training run."""

    theta0: tuple[float, ...] = (1.0,)
    n: int = 2000
    iterations: int = 500
    eps: float = 0.01
    alpha: float = 0.998
    step_size: float = 0.01
    estimator: str = "pot"
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    base_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta0", tuple(float(v) for v in self.theta0))
        if self.estimator not in ("pot", "sa"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.n < 2 or self.iterations < 1:
            raise ValueError("need a positive batch size and iteration count")
        if self.eps <= 0.0 or self.step_size <= 0.0:
            raise ValueError("shock size and step size must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"risk level must lie in (0, 1), got {self.alpha}")


def _estimate(sample: np.ndarray, cfg: TrainConfig, fixed_u: float | None) -> CvarEstimate:
    if cfg.estimator == "sa":
        return CvarEstimate(value=cvar_sa(sample, cfg.alpha), method="sa", level=cfg.alpha)
    return estimate_cvar(sample, cfg.alpha, cfg.threshold, fixed_u=fixed_u)


@dataclass(frozen=True)
class GradientResult:
    """Forward-difference gradient plus the base estimate it pivots on.

    ``u`` is the tail threshold selected on the base batch (None on the
    sample-averaging route or after a base-fit fallback); every shocked
    batch runs its own threshold selection.  ``shocked_fallbacks`` counts
    coordinates whose difference quotient reverted to sample averaging
    because the tail fit failed on either side.
    """

    gradient: np.ndarray
    base: CvarEstimate
    u: float | None
    shocked_fallbacks: int


def finite_diff_gradient(
    env: Environment, theta: np.ndarray, cfg: TrainConfig, seed: int
) -> GradientResult:
    """Estimate the CVaR gradient at ``theta`` by forward differences.

    Every coordinate shock re-simulates the batch with the *same* seed
    (common random numbers) and estimates it with the *same* procedure as
    the base batch, threshold selection included.  Re-selecting per batch
    keeps the quotient unbiased for the slope of the estimator's expected
    objective: anchoring shocked batches at the base threshold (by value or
    by rank) skews their refit wherever the policy moves the cost
    distribution or the appropriate threshold, which misplaces the
    stationary point.  When the tail fit fails on one side only, that
    coordinate differences sample averages on both sides rather than mixing
    estimators inside one quotient.
    """
    theta = np.asarray(theta, dtype=float)
    base_sample = env.sample_costs(theta, cfg.n, seed)
    base = _estimate(base_sample, cfg, fixed_u=None)
    u = base.fit.u if (base.method == "pot" and base.fit is not None) else None

    gradient = np.empty(theta.size)
    shocked_fallbacks = 0
    for i in range(theta.size):
        shocked = theta.copy()
        shocked[i] += cfg.eps
        sample = env.sample_costs(shocked, cfg.n, seed)
        est = _estimate(sample, cfg, fixed_u=None)
        if cfg.estimator == "pot" and est.method != base.method:
            shocked_fallbacks += 1
            lo = base.value if base.method == "sa" else cvar_sa(base_sample, cfg.alpha)
            hi = est.value if est.method == "sa" else cvar_sa(sample, cfg.alpha)
            gradient[i] = (hi - lo) / cfg.eps
            continue
        if cfg.estimator == "pot" and est.method == "sa":
            shocked_fallbacks += 1
        gradient[i] = (est.value - base.value) / cfg.eps
    return GradientResult(gradient=gradient, base=base, u=u, shocked_fallbacks=shocked_fallbacks)


# =============================================================================
# Training loop
# =============================================================================


@dataclass(frozen=True)
class IterationRecord:
    """State of one training iteration, taken before the parameter update."""

    iteration: int
    theta: np.ndarray
    j_hat: float
    method: str
    u: float
    seed: int
    shocked_fallbacks: int
    wall_time: float


@dataclass(frozen=True)
class TrainTrace:
    """Per-iteration records plus the parameter vector after the last update."""

    records: list[IterationRecord]
    final_theta: np.ndarray
    config: TrainConfig


def train(env: Environment, cfg: TrainConfig) -> TrainTrace:
    """Run the full CVaR descent loop and return its trace.

    Iteration ``j`` uses the derived seed ``mix_seed(cfg.base_seed, j)`` for
    all of its batches; the seed schedule therefore depends only on the
    config, never on the estimator, which keeps POT and SA runs on
    identical randomness.
    """
    theta = np.array(cfg.theta0, dtype=float)
    if theta.size != env.dim:
        raise ValueError(f"theta0 has {theta.size} components, environment wants {env.dim}")
    state = AdamState.zeros(theta.size)
    records: list[IterationRecord] = []
    for j in range(cfg.iterations):
        started = time.perf_counter()
        seed_j = mix_seed(cfg.base_seed, j)
        result = finite_diff_gradient(env, theta, cfg, seed_j)
        state, delta = adam_step(
            state, result.gradient, cfg.step_size, cfg.beta1, cfg.beta2, cfg.eps_hat
        )
        records.append(
            IterationRecord(
                iteration=j,
                theta=theta.copy(),
                j_hat=result.base.value,
                method=result.base.method,
                u=result.u if result.u is not None else math.nan,
                seed=seed_j,
                shocked_fallbacks=result.shocked_fallbacks,
                wall_time=time.perf_counter() - started,
            )
        )
        theta = theta + delta
    return TrainTrace(records=records, final_theta=theta, config=cfg)


def rmse_report(
    traces: Sequence[TrainTrace], theta_star, j_star: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-iteration root-mean-square errors across repeated runs.

    Returns ``(rmse_theta, rmse_j)`` where entry ``j`` aggregates, over the
    runs, the squared distance of the iteration-``j`` policy from
    ``theta_star`` and of its CVaR estimate from ``j_star``.
    """
    if not traces:
        raise ValueError("need at least one trace")
    lengths = {len(tr.records) for tr in traces}
    if len(lengths) != 1:
        raise ValueError(f"traces have mismatched lengths {sorted(lengths)}")
    target = np.asarray(theta_star, dtype=float)
    thetas = np.stack([[rec.theta for rec in tr.records] for tr in traces])
    js = np.array([[rec.j_hat for rec in tr.records] for tr in traces])
    rmse_theta = np.sqrt(np.mean(np.sum((thetas - target) ** 2, axis=-1), axis=0))
    rmse_j = np.sqrt(np.mean((js - float(j_star)) ** 2, axis=0))
    return rmse_theta, rmse_j
