import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from linkmerge.deconvolution import (
    DeconvConfig,
    DeconvolutionError,
    deconvolve,
    empirical_char_fn,
    kolmogorov_cells,
    noise_advantage,
    psi_rate,
)
from linkmerge.distributions import NoiseSpec, StepCdf, empirical_cdf, sample_noise


def uniform_cdf(x, lo=-1.0, hi=1.0):
    return np.clip((np.asarray(x) - lo) / (hi - lo), 0.0, 1.0)


def check_step_invariants(cdf: StepCdf):
    v = cdf.cdf_values
    assert np.all(np.diff(cdf.grid_points) > 0)
    assert np.all(np.diff(v) >= 0)
    assert v.min() >= 0 and v.max() <= 1
    assert v[-1] == 1.0


class TestDeconvConfig:
    @pytest.mark.parametrize(
        "kw",
        [{"tau": -1.0}, {"freq_max": 0.0}, {"n_freq": 6, "n_x": 4}, {"n_freq": 9, "n_x": 4}, {"x_min": 1.0, "x_max": 0.0}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DeconvConfig(**kw)

    def test_resolve_defaults(self):
        y = np.random.default_rng(0).normal(size=400)
        cfg = DeconvConfig().resolve(y, NoiseSpec.gaussian(0.1))
        assert cfg.tau == pytest.approx(1 / 20)
        assert cfg.x_min == pytest.approx(y.min() - 0.3)
        assert cfg.freq_max > 0
        assert DeconvConfig().resolve(y, NoiseSpec.dirac()).tau == 0.0

    def test_freq_max_capped_for_wide_noise(self):
        y = np.random.default_rng(0).normal(size=1000)
        fm = DeconvConfig().resolve(y, NoiseSpec.gaussian(1.0)).freq_max
        # char fn must stay above sqrt(tau) inside the band
        assert math.exp(-0.5 * fm**2) >= math.sqrt(1000**-0.5)


class TestEmpiricalCharFn:
    def test_point_mass_at_zero(self):
        np.testing.assert_allclose(empirical_char_fn([0, 0, 0], [0.3, -2.0, 7.0]), 1 + 0j)

    def test_single_point(self):
        t = np.array([0.5, 1.5])
        np.testing.assert_allclose(empirical_char_fn([2.0], t), np.exp(1j * t * 2.0))

    def test_gaussian_monte_carlo(self):
        y = np.random.default_rng(11).normal(size=100_000)
        assert abs(empirical_char_fn(y, [1.0])[0] - math.exp(-0.5)) < 0.02

    def test_empty(self):
        with pytest.raises(ValueError):
            empirical_char_fn([], [1.0])


class TestDeconvolve:
    @pytest.mark.parametrize("seed", range(5))
    def test_dirac_is_ecdf(self, seed):
        y = np.random.default_rng(seed).normal(size=300)
        dec = deconvolve(y, NoiseSpec.dirac(), DeconvConfig(tau=0.0))
        g = dec.x_grid
        assert kolmogorov_cells(dec.cdf, empirical_cdf(y), g, g[1] - g[0]) < 1e-9
        # binning onto the next grid point keeps the ECDF exact at grid points
        np.testing.assert_allclose(dec.cdf(g), empirical_cdf(y)(g), atol=1e-9)

    def test_uniform_plus_gaussian(self):
        rng = np.random.default_rng(2024)
        n = 10_000
        y = rng.uniform(-1, 1, n) + rng.normal(0, 0.5, n)
        dec = deconvolve(y, NoiseSpec.gaussian(0.5))
        g = dec.x_grid
        assert np.max(np.abs(dec.cdf(g) - uniform_cdf(g))) < 0.1

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        y = rng.uniform(-1, 1, 10_000) + sample_noise(NoiseSpec.uniform(0.5), 10_000, rng)
        dec = deconvolve(y, NoiseSpec.uniform(0.5))
        assert abs(dec.cdf(0.0) - 0.5) < 0.05

    def test_grid_must_cover(self):
        with pytest.raises(DeconvolutionError, match="grid does not cover sample range"):
            deconvolve([0.0, 5.0], NoiseSpec.dirac(), DeconvConfig(x_min=-1.0, x_max=1.0))

    def test_errors(self):
        with pytest.raises(ValueError):
            deconvolve([], NoiseSpec.dirac())
        with pytest.raises(ValueError):
            deconvolve([np.inf], NoiseSpec.dirac())

    def test_constant_sample(self):
        dec = deconvolve([3.0] * 10, NoiseSpec.gaussian(0.2))
        check_step_invariants(dec.cdf)

    def test_density_mass(self):
        y = np.random.default_rng(1).normal(size=2000) + sample_noise(NoiseSpec.gaussian(0.3), 2000, 9)
        dec = deconvolve(y, NoiseSpec.gaussian(0.3))
        dx = dec.x_grid[1] - dec.x_grid[0]
        assert abs(np.clip(dec.raw_density, 0, None).sum() * dx - 1) < 0.05

    @settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=80),
        st.sampled_from(["dirac", "gaussian:0.5", "uniform:0.3", "student:0.2:3", "gaussian:1e-9"]),
        st.one_of(st.none(), st.floats(0, 2)),
    )
    def test_fuzz_invariants(self, ys, text, tau):
        dec = deconvolve(ys, NoiseSpec.parse(text), DeconvConfig(tau=tau))
        check_step_invariants(dec.cdf)

    def test_error_shrinks_with_n(self):
        noise = NoiseSpec.gaussian(0.1)

        def median_error(n):
            errs = []
            for seed in range(20):
                rng = np.random.default_rng([n, seed])
                y = rng.uniform(-1, 1, n) + sample_noise(noise, n, rng)
                dec = deconvolve(y, noise)
                g = dec.x_grid
                errs.append(np.max(np.abs(dec.cdf(g) - uniform_cdf(g))))
            return np.median(errs)

        assert median_error(1000) < median_error(100)


class TestKolmogorovCells:
    def test_shift_by_one_cell(self):
        a = StepCdf(np.array([0.0, 1.0, 2.0]), np.array([0.2, 0.6, 1.0]))
        b = StepCdf(np.array([0.1, 1.1, 2.1]), np.array([0.2, 0.6, 1.0]))
        pts = np.linspace(-1, 3, 81)
        assert kolmogorov_cells(a, b, pts, 0.1) == 0.0
        assert kolmogorov_cells(a, b, pts, 0.01) > 0


class TestNoiseAdvantage:
    t = np.linspace(0.1, 3.0, 30)

    def test_truth(self):
        rep = noise_advantage(NoiseSpec.gaussian(1.0), NoiseSpec.gaussian(1.0), self.t)
        assert rep.fraction == 1.0

    def test_dirac_equality(self):
        truth = NoiseSpec.gaussian(0.8)
        rep = noise_advantage(NoiseSpec.dirac(), truth, self.t)
        assert rep.fraction == 1.0

    def test_gaussian_pair(self):
        # evaluated by hand: 1/f* = exp(0.72 t^2) and 1/f = exp(t^2 / 2), so the
        # condition reads exp(0.72 t^2) - 1 >= exp(0.72 t^2) - exp(t^2 / 2)
        expected = np.mean([math.exp(0.72 * s * s) - 1 >= math.exp(0.72 * s * s) - math.exp(0.5 * s * s) for s in self.t])
        rep = noise_advantage(NoiseSpec.gaussian(1.0), NoiseSpec.gaussian(1.2), self.t)
        assert expected == 1.0
        assert rep.fraction == expected

    def test_overshoot_fails(self):
        # candidate twice as wide as the truth over-deconvolves at high t
        rep = noise_advantage(NoiseSpec.gaussian(2.0), NoiseSpec.gaussian(1.0), self.t)
        assert rep.fraction < 1.0

    def test_skips_zeros(self):
        rep = noise_advantage(NoiseSpec.uniform(1.0), NoiseSpec.dirac(), [math.pi, 1.0])
        assert rep.skipped == 1
        assert rep.t.tolist() == [1.0]


class TestPsiRate:
    def test_dirac(self):
        assert psi_rate(NoiseSpec.dirac(), 100, 0.05) == 0.0

    @pytest.mark.parametrize("text", ["gaussian:0.1", "uniform:0.5", "student:0.1:4"])
    def test_decreasing_in_n(self, text):
        noise = NoiseSpec.parse(text)
        assert psi_rate(noise, 10_000, 0.05) < psi_rate(noise, 100, 0.05)

    def test_gaussian_logarithmic(self):
        noise = NoiseSpec.gaussian(1.0)
        ns = [10**2, 10**4, 10**8]
        vals = [psi_rate(noise, n, 0.05) for n in ns]
        # with s = 1, 1 / psi is linear in log n
        inv = [1 / v for v in vals]
        slope1 = (inv[1] - inv[0]) / (math.log(ns[1]) - math.log(ns[0]))
        slope2 = (inv[2] - inv[1]) / (math.log(ns[2]) - math.log(ns[1]))
        assert slope1 == pytest.approx(1.0) and slope2 == pytest.approx(1.0)

    def test_ordinary_smooth_value(self):
        # eps = 1 / (2 + 2 + 1)
        got = psi_rate(NoiseSpec.uniform(0.5), 1000, math.exp(-1))
        assert got == pytest.approx(1000 ** (-1 / 5), rel=1e-12)

    def test_capped(self):
        assert psi_rate(NoiseSpec.gaussian(1.0), 1, 0.9) == 1.0

    @pytest.mark.parametrize("args", [(0, 0.05), (10, 0.0), (10, 1.0)])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            psi_rate(NoiseSpec.gaussian(1.0), *args)
