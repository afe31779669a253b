"""Recursive training loops with contaminated (and optionally biased) data.

Each iteration first draws a synthetic batch from the estimator trained at
the previous step, then a real batch from the target (or from a drifting
biased version of it), accumulates both, retrains, and records W1/MMD
against the unbiased target. The real-data fraction alpha fixes the
synthetic batch size m2 = round(m1 (1 - alpha) / alpha).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import BiasSchedule, EvalGrid, TargetSpec, biased_spec_at, sample_mixture
from .estimators import EstimatorSpec, ingest, new_state, sample_synthetic
from .metrics import EvalContext, MetricSettings, eval_state


@dataclass(frozen=True)
class RecursionConfig:
    m1: int
    alpha: float
    T: int
    estimator: EstimatorSpec
    bias: BiasSchedule | None = None
    seed: int = 0
    metric_settings: MetricSettings = MetricSettings()

    def __post_init__(self) -> None:
        if self.m1 < 1:
            raise ValueError("m1 must be at least 1")
        if not (0 < self.alpha <= 1):
            raise ValueError("alpha must lie in (0, 1]")
        if self.T < 1:
            raise ValueError("T must be at least 1")


@dataclass(frozen=True)
class TrajectoryPoint:
    t: int
    M_t: int
    w1: float
    mmd: float
    bias_level: float


@dataclass(frozen=True)
class Trajectory:
    config: RecursionConfig
    points: tuple[TrajectoryPoint, ...]


def m2_of(m1: int, alpha: float) -> int:
    """Synthetic batch size for a target real-data fraction (round to nearest)."""
    if not (0 < alpha <= 1):
        raise ValueError("alpha must lie in (0, 1]")
    if alpha == 1.0:
        return 0
    return round(m1 * (1.0 - alpha) / alpha)


def run_crt(config: RecursionConfig, target: TargetSpec, grid: EvalGrid) -> Trajectory:
    """Contaminated recursive training against a fixed target."""
    if config.bias is not None:
        raise ValueError("config.bias must be absent; use run_bcrt")
    return run_with_state(config, target, grid)[0]


def run_bcrt(config: RecursionConfig, target: TargetSpec, grid: EvalGrid) -> Trajectory:
    """Recursive training whose real stream drifts; metrics stay vs target."""
    if config.bias is None:
        raise ValueError("config.bias must be present; use run_crt")
    return run_with_state(config, target, grid)[0]


def run_with_state(config: RecursionConfig, target: TargetSpec, grid: EvalGrid):
    """Like run_crt/run_bcrt but also returns the terminal estimator state,
    for callers that want to inspect or plot the final fit."""
    rng = np.random.default_rng(config.seed)
    state = new_state(config.estimator, grid)
    ctx = EvalContext(target, grid, config.metric_settings)
    m2 = m2_of(config.m1, config.alpha)
    bias = config.bias

    def real_source(t: int) -> tuple[TargetSpec, float]:
        if bias is None:
            return target, 0.0
        return biased_spec_at(target, bias, t), bias.level(t)

    src, lvl = real_source(0)
    ingest(state, sample_mixture(src, config.m1, rng), "real", 0)
    w1, mmd = eval_state(state, target, grid, config.metric_settings, ctx=ctx)
    points = [TrajectoryPoint(0, state.store.n, w1, mmd, lvl)]
    for t in range(1, config.T + 1):
        # synthetic batch comes from the state as of the end of step t-1,
        # so it must be drawn before anything is ingested at step t
        syn = sample_synthetic(state, m2, rng) if m2 > 0 else None
        src, lvl = real_source(t)
        real = sample_mixture(src, config.m1, rng)
        if syn is not None:
            ingest(state, syn, "synthetic", t)
        ingest(state, real, "real", t)
        w1, mmd = eval_state(state, target, grid, config.metric_settings, ctx=ctx)
        points.append(TrajectoryPoint(t, state.store.n, w1, mmd, lvl))
    return Trajectory(config, tuple(points)), state
