"""Plug-in generative estimators over an accumulating sample store.

Two kinds: ECDF (bandwidth 0, bootstrap resampler) and KDE with the
deterministic schedule h_t = h0 * t^(-p/2) and a smoothed-bootstrap sampler.

Grid evaluation is binned. The store histograms samples into bins whose
edges are aligned with the evaluation grid (bins per grid interval is an
integer), so the ECDF CDF at grid points is exact from cumulative counts,
and KDE kernels only need evaluating at the distinct lattice differences
between grid points and bin centers: one transcendental call per distinct
difference plus a gather and a matvec per iteration, instead of an
O(samples * grid) pass. Out-of-range samples clamp into the end bins for
counting but keep their exact values for resampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .distributions import EvalGrid

_SQRT2PI = float(np.sqrt(2.0 * np.pi))

ECDF = "ecdf"
KDE = "kde"


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    h0: float = 0.0
    p: float = 0.5
    bin_count: int = 800

    def __post_init__(self) -> None:
        if self.kind not in (ECDF, KDE):
            raise ValueError(f"kind must be '{ECDF}' or '{KDE}', got {self.kind!r}")
        if self.kind == KDE and not (self.h0 > 0):
            raise ValueError("KDE requires h0 > 0")
        if not (self.p > 0):
            raise ValueError("p must be positive")
        if self.bin_count < 1:
            raise ValueError("bin_count must be positive")


def bandwidth_at(spec: EstimatorSpec, t: int) -> float:
    """h_t of the deterministic schedule; 0 for the ECDF kind."""
    if t < 1:
        raise ValueError("bandwidth schedule starts at t = 1")
    if spec.kind == ECDF:
        return 0.0
    return spec.h0 * float(t) ** (-spec.p / 2.0)


class SampleStore:
    """Append-only accumulated sample vector plus its fixed-bin histogram."""

    __slots__ = ("_buf", "n", "batches", "bin_counts", "lo", "hi", "nbins", "_binw")

    def __init__(self, lo: float, hi: float, nbins: int) -> None:
        self._buf = np.empty(4096, dtype=np.float64)
        self.n = 0
        self.batches: list[tuple[int, int, str]] = []
        self.bin_counts = np.zeros(nbins, dtype=np.int64)
        self.lo = float(lo)
        self.hi = float(hi)
        self.nbins = int(nbins)
        self._binw = (self.hi - self.lo) / self.nbins

    @property
    def values(self) -> np.ndarray:
        return self._buf[: self.n]

    def bin_centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.nbins) + 0.5) * self._binw

    def append(self, batch: np.ndarray, origin: str, t: int) -> None:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.size == 0:
            return
        if not np.all(np.isfinite(batch)):
            raise ValueError("batch contains non-finite values")
        need = self.n + batch.size
        if need > self._buf.size:
            cap = self._buf.size
            while cap < need:
                cap *= 2
            grown = np.empty(cap, dtype=np.float64)
            grown[: self.n] = self._buf[: self.n]
            self._buf = grown
        self._buf[self.n : need] = batch
        self.n = need
        self.batches.append((t, int(batch.size), origin))
        idx = np.floor((batch - self.lo) / self._binw).astype(np.int64)
        np.clip(idx, 0, self.nbins - 1, out=idx)
        self.bin_counts += np.bincount(idx, minlength=self.nbins)


def grid_lattice(grid: EvalGrid, gridmul: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct (grid point - bin center) differences and the gather index.

    With gridmul bins per grid interval, every difference x_i - c_j lies on
    one lattice of nbins + gridmul*(m-1) points; a kernel evaluated on the
    lattice vector indexed by the returned matrix yields the full
    (m, nbins) kernel matrix without recomputing transcendentals.
    """
    m = len(grid.points)
    nbins = gridmul * (m - 1)
    binw = (grid.hi - grid.lo) / nbins
    ks = np.arange(-(nbins - 1), gridmul * (m - 1) + 1, dtype=np.float64)
    lat = (ks - 0.5) * binw
    ii = np.arange(m, dtype=np.int64)[:, None] * gridmul
    jj = np.arange(nbins, dtype=np.int64)[None, :]
    idx = (ii - jj + nbins - 1).astype(np.int32)
    return lat, idx


class EstimatorState:
    """Estimator spec + store + current bandwidth, bound to one grid."""

    __slots__ = ("spec", "store", "t", "h_t", "grid", "gridmul", "_lat", "_lat_idx")

    def __init__(self, spec: EstimatorSpec, grid: EvalGrid) -> None:
        m = len(grid.points)
        if spec.bin_count < 4 * m:
            raise ValueError(f"bin_count must be >= 4 * m_grid = {4 * m}")
        self.spec = spec
        self.grid = grid
        # smallest bin count that is a multiple of the grid interval count,
        # so every grid point lands exactly on a bin edge
        self.gridmul = -(-spec.bin_count // (m - 1))
        self.store = SampleStore(grid.lo, grid.hi, self.gridmul * (m - 1))
        self.t = 0
        self.h_t = bandwidth_at(spec, 1)
        self._lat, self._lat_idx = grid_lattice(grid, self.gridmul)


def new_state(spec: EstimatorSpec, grid: EvalGrid) -> EstimatorState:
    return EstimatorState(spec, grid)


def ingest(state: EstimatorState, batch, origin: str, t: int) -> EstimatorState:
    """Accumulate a batch and move the state to iteration t.

    Mutates and returns `state`; the store is append-only. An empty batch
    only advances (t, h_t).
    """
    if origin not in ("real", "synthetic"):
        raise ValueError(f"origin must be 'real' or 'synthetic', got {origin!r}")
    state.store.append(np.asarray(batch, dtype=np.float64), origin, t)
    state.t = t
    state.h_t = bandwidth_at(state.spec, max(t, 1))
    return state


def cdf_on_grid(state: EstimatorState, grid: EvalGrid) -> np.ndarray:
    """Estimator CDF at the grid points.

    ECDF: exact fraction of (clamped) counts below each grid point, read off
    the cumulative histogram since grid points are bin edges. KDE: binned
    kernel CDF sum(counts * Phi((x - center)/h)) / n.
    """
    _require_same_grid(state, grid)
    n = state.store.n
    if n == 0:
        raise ValueError("no data")
    if state.spec.kind == ECDF:
        cum = np.concatenate(([0], np.cumsum(state.store.bin_counts)))
        edges = np.arange(len(grid.points), dtype=np.int64) * state.gridmul
        return cum[edges] / float(n)
    kern = ndtr(state._lat / state.h_t)
    counts = state.store.bin_counts.astype(np.float64)
    return kern[state._lat_idx] @ counts / float(n)


def pdf_on_grid(state: EstimatorState, grid: EvalGrid) -> np.ndarray:
    """Binned KDE density at the grid points, trapezoid-renormalized to 1."""
    if state.spec.kind == ECDF:
        raise ValueError("no density for bandwidth 0")
    _require_same_grid(state, grid)
    n = state.store.n
    if n == 0:
        raise ValueError("no data")
    z = state._lat / state.h_t
    kern = np.exp(-0.5 * z * z) / (_SQRT2PI * state.h_t)
    counts = state.store.bin_counts.astype(np.float64)
    dens = kern[state._lat_idx] @ counts / float(n)
    mass = np.trapezoid(dens, dx=grid.spacing)
    if mass <= 0:
        raise ValueError("estimated density carries no mass on the grid")
    return dens / mass


def sample_synthetic(state: EstimatorState, n: int, rng: np.random.Generator) -> np.ndarray:
    """Smoothed bootstrap: stored value + h_t * N(0, 1) noise.

    Noise std is the bandwidth itself (the sampler whose law is the KDE).
    h_t = 0 (ECDF) reduces to plain bootstrap resampling; the normal vector
    is drawn either way so both kinds consume the stream identically.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if state.store.n == 0:
        raise ValueError("no data")
    if n == 0:
        return np.empty(0, dtype=np.float64)
    idx = rng.integers(0, state.store.n, size=n)
    noise = rng.standard_normal(n)
    return state.store.values[idx] + state.h_t * noise


# ----------- Unbinned brute-force oracles (test reference paths) -----------


def exact_cdf_on_grid(state: EstimatorState, grid: EvalGrid) -> np.ndarray:
    vals = state.store.values
    if vals.size == 0:
        raise ValueError("no data")
    if state.spec.kind == ECDF:
        sv = np.sort(vals)
        return np.searchsorted(sv, grid.points, side="right") / float(vals.size)
    out = np.zeros(len(grid.points))
    for i, x in enumerate(grid.points):
        out[i] = float(np.mean(ndtr((x - vals) / state.h_t)))
    return out


def exact_pdf_on_grid(state: EstimatorState, grid: EvalGrid) -> np.ndarray:
    if state.spec.kind == ECDF:
        raise ValueError("no density for bandwidth 0")
    vals = state.store.values
    if vals.size == 0:
        raise ValueError("no data")
    out = np.zeros(len(grid.points))
    h = state.h_t
    for i, x in enumerate(grid.points):
        z = (x - vals) / h
        out[i] = float(np.mean(np.exp(-0.5 * z * z))) / (_SQRT2PI * h)
    mass = np.trapezoid(out, dx=grid.spacing)
    return out / mass


def _require_same_grid(state: EstimatorState, grid: EvalGrid) -> None:
    g = state.grid
    if len(grid.points) != len(g.points) or grid.lo != g.lo or grid.hi != g.hi:
        raise ValueError("state was built for a different grid")
