import math

import mpmath
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from linkmerge.deconvolution import DeconvConfig
from linkmerge.distributions import NoiseSpec, empirical_cdf, sample_noise
from linkmerge.linkfit import (
    HolderParams,
    band_from_bounds,
    fit_link,
    holder_error_bound,
    lemma3_check,
    match_merge,
)
from linkmerge.matching import CATEGORICAL, Dataset, group_exact
from linkmerge.simlab import power_abs

DIRAC = NoiseSpec.dirac()


def uniform_pair(seed, m=500, n=500, lo=0.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, m), rng.uniform(lo, hi, n)


class TestFitLink:
    def test_identity_recovery(self):
        x, y = uniform_pair(0, 2000, 2000)
        est = fit_link(x, y, DIRAC)
        u = np.linspace(0.05, 0.95, 91)
        assert np.max(np.abs(est.predict(u) - u)) < 0.1

    @staticmethod
    def affine_sup_errors(noise, seeds=range(20)):
        errs = []
        u = np.linspace(-4, 4, 81)
        for seed in seeds:
            rng = np.random.default_rng(seed)
            x = rng.uniform(-5, 5, 2000)
            y = 2 * rng.uniform(-5, 5, 2000) + sample_noise(noise, 2000, rng)
            errs.append(np.max(np.abs(fit_link(x, y, noise).predict(u) - 2 * u)))
        return np.asarray(errs)

    @pytest.mark.xfail(
        strict=True,
        reason="below the sampling floor: noiseless quantile matching on the same draws has median sup-error ~0.40",
    )
    def test_affine_literal_threshold(self):
        assert np.median(self.affine_sup_errors(NoiseSpec.gaussian(0.5))) < 0.3

    def test_affine_near_noiseless_floor(self):
        noisy = np.median(self.affine_sup_errors(NoiseSpec.gaussian(0.5)))
        floor = np.median(self.affine_sup_errors(DIRAC))
        assert noisy < 1.3 * floor
        assert noisy < 0.5

    def test_power_abs_improves_with_n(self):
        noise = NoiseSpec.gaussian(0.1)
        grid = np.linspace(-4.5, 4.5, 201)

        def mse(n, seed):
            rng = np.random.default_rng([n, seed])
            x = rng.uniform(-5, 5, n)
            y = power_abs(rng.uniform(-5, 5, n)) + sample_noise(noise, n, rng)
            return np.mean((fit_link(x, y, noise).predict(grid) - power_abs(grid)) ** 2)

        assert np.median([mse(1000, s) for s in range(10)]) < np.median([mse(100, s) for s in range(10)])

    def test_bands_and_diagnostics(self):
        x, y = uniform_pair(3)
        est = fit_link(x, y, NoiseSpec.gaussian(0.05))
        assert est.is_monotone()
        assert np.all(est.band_lo <= est.h_hat) and np.all(est.h_hat <= est.band_hi)
        d = est.diagnostics
        assert d["psi_indicative"] is True
        assert d["n_z"] == 500 and d["phi"] > 0

    def test_user_psi(self):
        x, y = uniform_pair(3)
        est = fit_link(x, y, DIRAC, psi=0.0)
        assert est.diagnostics["psi"] == 0.0 and est.diagnostics["psi_indicative"] is False

    def test_shift_equivariance(self):
        x, y = uniform_pair(4)
        a = fit_link(x, y, DIRAC)
        b = fit_link(x, y + 3.25, DIRAC)
        np.testing.assert_allclose(b.h_hat, a.h_hat + 3.25, atol=1e-9)

    def test_scale_equivariance(self):
        x, y = uniform_pair(5)
        a = fit_link(x, y, DIRAC)
        b = fit_link(x, 2.5 * y, DIRAC)
        np.testing.assert_allclose(b.h_hat, 2.5 * a.h_hat, atol=1e-9)

    def test_pairing_free(self):
        x, y = uniform_pair(6)
        noise = NoiseSpec.gaussian(0.1)
        a = fit_link(x, y, noise)
        b = fit_link(x, np.random.default_rng(0).permutation(y), noise)
        np.testing.assert_array_equal(a.h_hat, b.h_hat)

    def test_decreasing(self):
        x, y = uniform_pair(7, 1000, 1000)
        est = fit_link(x, -y, DIRAC, decreasing=True)
        assert est.is_monotone()
        u = np.linspace(0.1, 0.9, 9)
        assert np.max(np.abs(est.predict(u) + u)) < 0.1
        assert np.all(est.band_lo <= est.h_hat) and np.all(est.h_hat <= est.band_hi)

    @settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(
        st.lists(st.floats(-100, 100), min_size=2, max_size=50),
        st.lists(st.floats(-100, 100), min_size=2, max_size=50),
        st.sampled_from(["dirac", "gaussian:0.5", "uniform:1", "student:0.3:3"]),
    )
    def test_always_monotone(self, xs, ys, text):
        est = fit_link(xs, ys, NoiseSpec.parse(text))
        assert est.is_monotone()
        assert np.all(np.diff(est.predict(np.sort(np.asarray(xs)))) >= 0)


class TestBand:
    def test_zero_width(self):
        fz = empirical_cdf([0.1, 0.4, 0.7])
        fh = empirical_cdf([1.0, 2.0, 3.0])
        u = np.array([0.0, 0.1, 0.5, 0.9])
        lo, hi = band_from_bounds(fz, fh, u, 0.0, 0.0)
        h = fh.quantile(fz(u))
        np.testing.assert_array_equal(lo, h)
        np.testing.assert_array_equal(hi, h)

    def test_full_range(self):
        fz = empirical_cdf([0.1, 0.4, 0.7])
        fh = empirical_cdf([1.0, 2.0, 3.0])
        lo, hi = band_from_bounds(fz, fh, [0.4], 0.6, 0.4)
        assert lo[0] == 1.0 and hi[0] == 3.0

    @given(st.floats(0, 0.5), st.floats(0, 0.5))
    def test_nested(self, w1, w2):
        fz = empirical_cdf(np.linspace(0, 1, 20))
        fh = empirical_cdf(np.linspace(-3, 3, 40))
        u = np.linspace(0, 1, 11)
        small, big = sorted([w1, w2])
        lo_s, hi_s = band_from_bounds(fz, fh, u, small, 0.0)
        lo_b, hi_b = band_from_bounds(fz, fh, u, big, 0.0)
        assert np.all(lo_b <= lo_s) and np.all(hi_s <= hi_b)

    def test_negative(self):
        fz = empirical_cdf([0.0])
        with pytest.raises(ValueError):
            band_from_bounds(fz, fz, [0.0], -0.1, 0.0)


class TestHolderBound:
    def test_linear(self):
        assert holder_error_bound(HolderParams(1, 1, 1, 1), 0.05, 0.05) == pytest.approx(0.1, abs=1e-15)

    def test_zero(self):
        assert holder_error_bound(HolderParams(0.5, 2, 0.3, 3), 0.0, 0.0) == 0.0

    def test_sqrt_case(self):
        expected = float(2 * mpmath.sqrt(3) * mpmath.mpf("0.2"))
        assert holder_error_bound(HolderParams(0.5, 2, 1, 3), 0.01, 0.03) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.6928, abs=1e-4)

    @pytest.mark.parametrize("kw", [{"alpha": 1.5}, {"beta": 0.0}, {"L": 0.0}, {"M": -1.0}])
    def test_invalid(self, kw):
        base = dict(alpha=0.5, L=1.0, beta=0.5, M=1.0)
        base.update(kw)
        with pytest.raises(ValueError):
            HolderParams(**base)


class TestCompositionOracle:
    def test_uniform_identity(self):
        rep = lemma3_check(lambda x: np.clip(x, 0, 1), lambda x: x, np.linspace(0.01, 0.99, 99), (0, 1))
        assert rep.max_deviation <= rep.cell
        assert rep.n_flagged == 0

    def test_power_abs(self):
        cdf = lambda x: np.clip((x + 5) / 10, 0, 1)
        rep = lemma3_check(cdf, power_abs, np.linspace(-4.9, 4.9, 197), (-5, 5))
        assert rep.max_deviation <= rep.cell
        assert rep.cell == pytest.approx(np.max(np.abs(np.diff(power_abs(np.linspace(-5, 5, 10_000))))))

    def test_flat_piece_flagged(self):
        # mass on [0, 1] and [2, 3] only, F flat on (1, 2)
        def cdf(x):
            x = np.asarray(x, dtype=float)
            return np.clip(x, 0, 1) / 2 + np.clip(x - 2, 0, 1) / 2

        u = np.array([0.5, 1.5, 2.5])
        rep = lemma3_check(cdf, lambda x: x, u, (0, 3))
        assert rep.flagged.tolist() == [False, True, False]
        assert rep.deviations[1] > rep.cell
        assert rep.max_deviation <= rep.cell


class TestMatchMerge:
    def groups(self):
        rng = np.random.default_rng(0)
        labels_x = ["a"] * 200 + ["b"] * 150 + ["c"] * 1
        labels_y = ["a"] * 180 + ["b"] * 220 + ["c"] * 5
        dx = Dataset(rng.uniform(0, 1, len(labels_x)), (labels_x,), (CATEGORICAL,))
        dy = Dataset(rng.uniform(0, 1, len(labels_y)), (labels_y,), (CATEGORICAL,))
        return group_exact(dx, dy)

    def test_skips_singletons(self):
        res = match_merge(self.groups(), DIRAC)
        assert [e.group_key for e in res] == [("a",), ("b",)]
        assert ("c",) in res.skipped

    def test_threads_do_not_change_results(self):
        a = match_merge(self.groups(), NoiseSpec.gaussian(0.05), workers=1)
        b = match_merge(self.groups(), NoiseSpec.gaussian(0.05), workers=4)
        for ea, eb in zip(a, b):
            np.testing.assert_array_equal(ea.h_hat, eb.h_hat)

    def test_failure_isolated(self):
        cfg = DeconvConfig(x_min=0.0, x_max=0.5)
        res = match_merge(self.groups(), DIRAC, cfg)
        assert set(res.failed) == {("a",), ("b",)}
        assert "grid does not cover" in res.failed[("a",)]
