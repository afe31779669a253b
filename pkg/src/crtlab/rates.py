"""Empirical convergence rates by log-log regression over a trajectory tail.

A trajectory's losses are regressed as log d = a + b log M_t after a
burn-in; the empirical rate is -b. On phase boundaries (alpha tying the
other exponents) the theory predicts an extra log factor, so losses can be
pre-divided by log(t+1) before the fit; should_normalize decides that from
the effective alpha. summarize aggregates replicate fits against the
predicted rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .recursion import Trajectory
from .theory import predicted_rate


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    rate: float
    r_squared: float
    burn_in_fraction: float
    log_normalized: bool
    n_points: int


@dataclass(frozen=True)
class RateSummary:
    per_replicate: tuple[RateFit, ...]
    mean_rate: float
    sd_rate: float
    theory_rate: float
    theory_log_flag: bool


def fit_rate(
    traj: Trajectory,
    burn_in_fraction: float = 0.1,
    normalize_log: bool = False,
    metric: str = "w1",
) -> RateFit:
    """OLS fit of log loss against log M_t over the post-burn-in tail.

    Keeps points with t > burn_in_fraction * T and positive loss; fewer
    than 3 such points is a degenerate trajectory. normalize_log divides
    losses by log(t + 1) first (the +1 keeps t = 1 usable).
    """
    if not (0 <= burn_in_fraction < 1):
        raise ValueError("burn_in_fraction must lie in [0, 1)")
    if metric not in ("w1", "mmd"):
        raise ValueError(f"metric must be 'w1' or 'mmd', got {metric!r}")
    T = traj.points[-1].t
    ts = np.array([pt.t for pt in traj.points], dtype=np.float64)
    ms = np.array([pt.M_t for pt in traj.points], dtype=np.float64)
    ds = np.array([getattr(pt, metric) for pt in traj.points], dtype=np.float64)
    keep = (ts > burn_in_fraction * T) & (ds > 0)
    if keep.sum() < 3:
        raise ValueError("degenerate trajectory")
    ts, ms, ds = ts[keep], ms[keep], ds[keep]
    y = np.log(ds)
    if normalize_log:
        y = y - np.log(np.log(ts + 1.0))
    x = np.log(ms)
    A = np.column_stack([x, np.ones(x.size)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot > 0:
        r2 = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    else:
        r2 = 1.0 if ss_res <= 1e-20 else 0.0
    return RateFit(
        slope=float(coef[0]),
        intercept=float(coef[1]),
        rate=float(-coef[0]),
        r_squared=r2,
        burn_in_fraction=burn_in_fraction,
        log_normalized=normalize_log,
        n_points=int(keep.sum()),
    )


def should_normalize(
    alpha_effective: float, p: float, q: float | None = None, eps: float = 1e-9
) -> bool:
    """True when the effective alpha ties min(p, q), i.e. the log-factor case."""
    if not (eps > 0):
        raise ValueError("eps must be positive")
    other = p if q is None else min(p, q)
    return abs(other - alpha_effective) <= eps


def summarize(fits, p: float, q: float | None, alpha: float) -> RateSummary:
    fits = tuple(fits)
    if not fits:
        raise ValueError("no fits to summarize")
    rates = np.array([f.rate for f in fits], dtype=np.float64)
    sd = float(np.std(rates, ddof=1)) if rates.size > 1 else 0.0
    pred = predicted_rate(p, alpha, q)
    return RateSummary(
        per_replicate=fits,
        mean_rate=float(rates.mean()),
        sd_rate=sd,
        theory_rate=pred.exponent,
        theory_log_flag=pred.log_factor,
    )
