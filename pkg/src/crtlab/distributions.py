"""Closed-form 1-D Gaussian-mixture targets and the decaying bias mixture.

The target distribution and the contaminated ("biased") sampling
distribution are both finite Gaussian mixtures, so densities, CDFs and
sampling are exact. The normal CDF is scipy's ndtr (Cephes), whose absolute
error is a few ulp, far below the 1e-12 budget the grid metrics need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_WEIGHT_TOL = 1e-12

# ----------- Specs -----------


@dataclass(frozen=True)
class GaussianComponent:
    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class TargetSpec:
    weights: tuple[float, ...]
    components: tuple[GaussianComponent, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.weights) != len(self.components) or len(self.weights) < 1:
            raise ValueError("weights and components must have equal length >= 1")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)}")


@dataclass(frozen=True)
class BiasSchedule:
    """Polynomially decaying contamination of the real-data stream.

    level(t) = amplitude * (t + offset)^(-q), or a constant `amplitude` when
    frozen. The contaminating component is mixed into the target with weight
    level(t).
    """

    bias_component: GaussianComponent
    amplitude: float
    offset: float
    q: float
    frozen: bool = False

    def __post_init__(self) -> None:
        if not (0.0 <= self.amplitude <= 1.0):
            raise ValueError(f"amplitude must be in [0, 1], got {self.amplitude}")
        if self.offset < 0:
            raise ValueError(f"offset must be nonnegative, got {self.offset}")
        if not (self.q > 0):
            raise ValueError(f"q must be positive, got {self.q}")

    def level(self, t: int) -> float:
        if self.frozen:
            return self.amplitude
        base = float(t) + self.offset
        if base <= 0:
            raise ValueError(f"bias level undefined at t={t} with offset {self.offset}")
        lvl = self.amplitude * base ** (-self.q)
        if not (0.0 <= lvl <= 1.0):
            raise ValueError(f"bias level {lvl} outside [0, 1] at t={t}")
        return lvl


@dataclass(frozen=True)
class EvalGrid:
    points: np.ndarray
    lo: float
    hi: float

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least 2 points")
        steps = np.diff(pts)
        if not np.all(steps > 0):
            raise ValueError("grid points must be strictly increasing")
        if np.max(steps) - np.min(steps) > 1e-12 * max(1.0, abs(self.hi - self.lo)):
            raise ValueError("grid spacing must be uniform")
        if abs(pts[0] - self.lo) > 1e-12 or abs(pts[-1] - self.hi) > 1e-12:
            raise ValueError("grid must cover [lo, hi] exactly")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (len(self.points) - 1)


# ----------- Density, CDF, sampling -----------


def mixture_pdf(spec: TargetSpec, x):
    """Mixture density at x (scalar or array)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for w, c in zip(spec.weights, spec.components):
        z = (x - c.mu) / c.sigma
        out = out + (w / (c.sigma * np.sqrt(2.0 * np.pi))) * np.exp(-0.5 * z * z)
    return out if out.ndim else float(out)


def mixture_cdf(spec: TargetSpec, x):
    """Mixture CDF at x (scalar or array); monotone, limits 0 and 1."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for w, c in zip(spec.weights, spec.components):
        out = out + w * ndtr((x - c.mu) / c.sigma)
    return out if out.ndim else float(out)


def sample_mixture(spec: TargetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. samples.

    Stream layout is fixed: one uniform vector selects components by
    inverse-CDF lookup on the cumulative weights, then one standard-normal
    vector is scaled per component. Exactly two generator calls per batch,
    independent of the number of components.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return np.empty(0, dtype=np.float64)
    cumw = np.cumsum(np.asarray(spec.weights, dtype=np.float64))
    cumw[-1] = 1.0  # guard the last edge against rounding
    u = rng.random(n)
    ks = np.searchsorted(cumw, u, side="right")
    mus = np.asarray([c.mu for c in spec.components])
    sigmas = np.asarray([c.sigma for c in spec.components])
    return mus[ks] + sigmas[ks] * rng.standard_normal(n)


def biased_spec_at(spec: TargetSpec, sched: BiasSchedule, t: int) -> TargetSpec:
    """Contaminated sampling distribution at iteration t (t >= 0).

    Mixes the bias component in with weight level(t), rescaling the target
    weights by 1 - level(t). amplitude 0 returns `spec` itself so zero
    contamination is the identity, not a rebuilt equal copy.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if sched.amplitude == 0.0:
        return spec
    lvl = sched.level(t)
    weights = tuple(w * (1.0 - lvl) for w in spec.weights) + (lvl,)
    components = spec.components + (sched.bias_component,)
    # renormalize away float residue so TargetSpec's sum-to-1 check holds
    total = sum(weights)
    weights = tuple(w / total for w in weights)
    return TargetSpec(weights=weights, components=components)


def build_grid(
    spec: TargetSpec,
    m_grid: int,
    tail_sds: float,
    bias: BiasSchedule | None = None,
) -> EvalGrid:
    """Uniform evaluation grid covering every component's +-tail_sds range.

    When a bias schedule is active its component extends the range; the grid
    is built once and reused for the whole trajectory.
    """
    if m_grid < 2:
        raise ValueError("m_grid must be >= 2")
    if not (tail_sds > 0):
        raise ValueError("tail_sds must be positive")
    comps = list(spec.components)
    if bias is not None:
        comps.append(bias.bias_component)
    lo = min(c.mu - tail_sds * c.sigma for c in comps)
    hi = max(c.mu + tail_sds * c.sigma for c in comps)
    return EvalGrid(points=np.linspace(lo, hi, m_grid), lo=lo, hi=hi)


def default_target() -> TargetSpec:
    """The two-component mixture used by all stock experiment configs."""
    return TargetSpec(
        weights=(0.35, 0.65),
        components=(GaussianComponent(-2.0, 0.8), GaussianComponent(1.0, 1.3)),
    )


def default_bias_component() -> GaussianComponent:
    return GaussianComponent(3.0, 1.0)
