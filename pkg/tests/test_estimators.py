import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import ndtr

from crtlab.distributions import build_grid, default_target
from crtlab.estimators import (
    ECDF,
    KDE,
    EstimatorSpec,
    bandwidth_at,
    cdf_on_grid,
    exact_cdf_on_grid,
    exact_pdf_on_grid,
    ingest,
    new_state,
    pdf_on_grid,
    sample_synthetic,
)

GRID = build_grid(default_target(), 200, 6.0)


def _state(kind="ecdf", h0=0.0, **kw):
    return new_state(EstimatorSpec(kind, h0=h0, **kw), GRID)


class TestBandwidth:
    def test_ecdf_always_zero(self):
        spec = EstimatorSpec(ECDF)
        assert bandwidth_at(spec, 1) == 0.0
        assert bandwidth_at(spec, 500) == 0.0

    def test_kde_schedule(self):
        spec = EstimatorSpec(KDE, h0=0.5, p=0.5)
        assert bandwidth_at(spec, 1) == pytest.approx(0.5)
        assert bandwidth_at(spec, 16) == pytest.approx(0.5 * 16**-0.25)

    def test_t_below_one_rejected(self):
        with pytest.raises(ValueError):
            bandwidth_at(EstimatorSpec(KDE, h0=0.5), 0)


class TestIngest:
    def test_bookkeeping(self):
        st_ = _state()
        rng = np.random.default_rng(0)
        ingest(st_, rng.normal(size=30), "real", 0)
        assert st_.store.n == 30 and st_.t == 0
        ingest(st_, rng.normal(size=20), "synthetic", 1)
        ingest(st_, rng.normal(size=30), "real", 1)
        assert st_.store.n == 80 and st_.t == 1
        batches = st_.store.batches
        assert [b[2] for b in batches] == ["real", "synthetic", "real"]
        assert [b[0] for b in batches] == [0, 1, 1]
        assert [b[1] for b in batches] == [30, 20, 30]

    def test_empty_batch_advances_t(self):
        st_ = _state(KDE, h0=0.5)
        ingest(st_, np.zeros(4), "real", 0)
        ingest(st_, np.empty(0), "synthetic", 3)
        assert st_.store.n == 4 and st_.t == 3
        assert st_.h_t == pytest.approx(0.5 * 3**-0.25)

    def test_bad_origin_rejected(self):
        with pytest.raises(ValueError):
            ingest(_state(), np.zeros(3), "fake", 0)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            ingest(_state(), np.array([1.0, np.nan]), "real", 0)

    def test_store_growth_keeps_values(self):
        st_ = _state()
        vals = np.random.default_rng(1).normal(size=5000)
        for i, chunk in enumerate(np.split(vals, 50)):
            ingest(st_, chunk, "real", i)
        np.testing.assert_array_equal(st_.store.values, vals)

    def test_out_of_range_clamped_into_end_bins(self):
        st_ = _state()
        ingest(st_, np.array([GRID.lo - 50.0, GRID.hi + 50.0]), "real", 0)
        counts = st_.store.bin_counts
        assert counts[0] == 1 and counts[-1] == 1
        # raw values survive for resampling even when counts are clamped
        assert st_.store.values.min() < GRID.lo


class TestEcdfCdf:
    def test_matches_plain_ecdf(self):
        # grid points sit on bin edges, so binning loses nothing there
        st_ = _state()
        xs = np.random.default_rng(2).uniform(GRID.lo + 0.1, GRID.hi - 0.1, size=500)
        ingest(st_, xs, "real", 0)
        got = cdf_on_grid(st_, GRID)
        want = np.searchsorted(np.sort(xs), GRID.points, side="left") / len(xs)
        np.testing.assert_allclose(got, want, atol=1e-12)
        np.testing.assert_allclose(got, exact_cdf_on_grid(st_, GRID), atol=1e-12)

    def test_endpoints(self):
        st_ = _state()
        ingest(st_, np.zeros(10) + 0.5, "real", 0)
        cdf = cdf_on_grid(st_, GRID)
        assert cdf[0] == 0.0 and cdf[-1] == 1.0

    def test_no_density_for_bandwidth_zero(self):
        st_ = _state()
        ingest(st_, np.zeros(5), "real", 0)
        with pytest.raises(ValueError):
            pdf_on_grid(st_, GRID)


class TestKdeCurves:
    def _filled(self, h0=0.5, n=400, seed=3):
        st_ = _state(KDE, h0=h0)
        xs = np.random.default_rng(seed).uniform(GRID.lo + 1, GRID.hi - 1, size=n)
        ingest(st_, xs, "real", 0)
        return st_, xs

    def test_cdf_matches_quantized_brute_force(self):
        # same kernel sum with samples snapped to bin centers: must agree to fp error
        st_, xs = self._filled()
        nbins = st_.gridmul * (len(GRID.points) - 1)
        binw = (GRID.hi - GRID.lo) / nbins
        idx = np.clip(((xs - GRID.lo) / binw).astype(np.int64), 0, nbins - 1)
        centers = GRID.lo + (idx + 0.5) * binw
        h = st_.h_t
        want = ndtr((GRID.points[:, None] - centers[None, :]) / h).mean(axis=1)
        np.testing.assert_allclose(cdf_on_grid(st_, GRID), want, atol=1e-12)

    def test_cdf_close_to_unquantized_brute_force(self):
        st_, xs = self._filled()
        h = st_.h_t
        want = ndtr((GRID.points[:, None] - xs[None, :]) / h).mean(axis=1)
        np.testing.assert_allclose(cdf_on_grid(st_, GRID), want, atol=2e-2)
        np.testing.assert_allclose(exact_cdf_on_grid(st_, GRID), want, atol=1e-12)

    def test_pdf_matches_quantized_brute_force(self):
        st_, xs = self._filled()
        nbins = st_.gridmul * (len(GRID.points) - 1)
        binw = (GRID.hi - GRID.lo) / nbins
        idx = np.clip(((xs - GRID.lo) / binw).astype(np.int64), 0, nbins - 1)
        centers = GRID.lo + (idx + 0.5) * binw
        h = st_.h_t
        raw = np.exp(-0.5 * ((GRID.points[:, None] - centers[None, :]) / h) ** 2)
        raw = raw.mean(axis=1) / (h * np.sqrt(2 * np.pi))
        want = raw / np.trapezoid(raw, dx=GRID.spacing)
        np.testing.assert_allclose(pdf_on_grid(st_, GRID), want, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(
            exact_pdf_on_grid(st_, GRID),
            pdf_on_grid(st_, GRID),
            atol=2e-3,
        )

    def test_pdf_integrates_to_one(self):
        st_, _ = self._filled()
        assert np.trapezoid(pdf_on_grid(st_, GRID), dx=GRID.spacing) == pytest.approx(1.0)

    def test_bandwidth_shrinks_with_t(self):
        st_, _ = self._filled()
        h1 = st_.h_t
        ingest(st_, np.zeros(10), "synthetic", 2)
        ingest(st_, np.zeros(10), "real", 2)
        assert st_.h_t < h1
        assert st_.h_t == pytest.approx(0.5 * 2**-0.25)


class TestSampleSynthetic:
    def test_ecdf_bootstrap_draws_stored_values(self):
        st_ = _state()
        vals = np.arange(50, dtype=np.float64)
        ingest(st_, vals, "real", 0)
        out = sample_synthetic(st_, 200, np.random.default_rng(0))
        assert np.isin(out, vals).all()

    def test_kde_smoothed_bootstrap_moments(self):
        st_ = _state(KDE, h0=0.7)
        ingest(st_, np.zeros(100), "real", 0)
        out = sample_synthetic(st_, 50_000, np.random.default_rng(1))
        # all mass at 0 smoothed by N(0, h^2)
        assert out.mean() == pytest.approx(0.0, abs=0.02)
        assert out.std() == pytest.approx(0.7, abs=0.02)

    def test_zero_draw_leaves_stream_untouched(self):
        st_ = _state()
        ingest(st_, np.arange(10, dtype=np.float64), "real", 0)
        r1 = np.random.default_rng(5)
        out = sample_synthetic(st_, 0, r1)
        assert out.size == 0
        r2 = np.random.default_rng(5)
        np.testing.assert_array_equal(r1.random(4), r2.random(4))

    def test_empty_store_rejected(self):
        with pytest.raises(ValueError):
            sample_synthetic(_state(), 5, np.random.default_rng(0))


@given(st.lists(st.floats(-7.5, 8.5), min_size=1, max_size=120))
def test_cdf_properties_random_samples(vals):
    for kind, h0 in ((ECDF, 0.0), (KDE, 0.8)):
        st_ = _state(kind, h0=h0)
        ingest(st_, np.array(vals), "real", 0)
        cdf = cdf_on_grid(st_, GRID)
        assert np.all(np.diff(cdf) >= -1e-12)
        assert np.all((cdf >= -1e-12) & (cdf <= 1 + 1e-12))


def test_spec_validation():
    with pytest.raises(ValueError):
        EstimatorSpec("mystery")
    with pytest.raises(ValueError):
        EstimatorSpec(KDE, h0=-1.0)
    with pytest.raises(ValueError):
        EstimatorSpec(ECDF, bin_count=0)


def test_gridmul_gives_at_least_bin_count():
    st_ = _state(bin_count=800)
    nbins = st_.gridmul * (len(GRID.points) - 1)
    assert st_.gridmul == 5
    assert nbins >= 800
