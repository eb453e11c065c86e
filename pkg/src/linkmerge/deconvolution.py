"""Spectral-division deconvolution of a noisy sample's distribution.

The samples are binned onto a uniform evaluation grid (each sample is moved
up to the nearest grid point at or above it, so the binned CDF equals the
ECDF at every grid point).  The discrete Fourier coefficients of the binned
measure play the role of the empirical characteristic function: coefficients
with modulus below ``tau`` are zeroed, the survivors inside the band
``|t| <= freq_max`` are divided by the noise characteristic function, and
the result is transformed back.  Outside the band the coefficients pass
through unchanged, so with Dirac noise the estimator reduces exactly to the
binned ECDF.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .distributions import DECONVOLVED, NoiseSpec, StepCdf, char_fn

log = logging.getLogger(__name__)

CF_FLOOR = 1e-12


class DeconvolutionError(ValueError):
    pass


@dataclass(frozen=True)
class DeconvConfig:
    """Tuning of :func:`deconvolve`; ``None`` fields are derived from the data.

    ``x_min``/``x_max``/``n_x`` describe the uniform evaluation grid and
    ``n_freq`` is the (zero-padded) DFT length.
    """

    tau: float | None = None
    freq_max: float | None = None
    n_freq: int = 1024
    x_min: float | None = None
    x_max: float | None = None
    n_x: int = 512

    def __post_init__(self):
        if self.tau is not None and not (self.tau >= 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be finite and >= 0")
        if self.freq_max is not None and not self.freq_max > 0:
            raise ValueError("freq_max must be > 0")
        if self.n_freq < 8 or self.n_freq % 2:
            raise ValueError("n_freq must be an even count >= 8")
        if self.n_x < 2:
            raise ValueError("n_x must be at least 2")
        if self.n_freq < self.n_x:
            raise ValueError("n_freq must be at least n_x (the DFT is zero-padded, never truncated)")
        if (self.x_min is None) != (self.x_max is None):
            raise ValueError("x_min and x_max must be given together")
        if self.x_min is not None and not self.x_min < self.x_max:
            raise ValueError("x_grid must be strictly increasing")

    @property
    def resolved(self) -> bool:
        return None not in (self.tau, self.freq_max, self.x_min, self.x_max)

    def x_grid(self) -> np.ndarray:
        if self.x_min is None:
            raise ValueError("x_grid is derived from data; call resolve() first")
        return np.linspace(self.x_min, self.x_max, self.n_x)

    def frequencies(self) -> np.ndarray:
        dx = (self.x_max - self.x_min) / (self.n_x - 1)
        return 2.0 * np.pi * np.fft.fftfreq(self.n_freq, d=dx)

    def resolve(self, samples, noise: NoiseSpec) -> DeconvConfig:
        """Fill in data-driven defaults for ``samples`` deconvolved against ``noise``."""
        y = np.asarray(samples, dtype=float)
        cfg = self
        if cfg.x_min is None:
            pad = 3.0 * noise.spread()
            lo, hi = float(y.min()) - pad, float(y.max()) + pad
            if hi - lo <= 0:
                lo, hi = lo - 0.5, hi + 0.5
            cfg = replace(cfg, x_min=lo, x_max=hi)
        if cfg.tau is None:
            cfg = replace(cfg, tau=0.0 if noise.is_degenerate else 1.0 / math.sqrt(y.size))
        if cfg.freq_max is None:
            cfg = replace(cfg, freq_max=_default_freq_max(y, noise, cfg))
        return cfg

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "freq_max": self.freq_max,
            "n_freq": self.n_freq,
            "x_min": self.x_min,
            "x_max": self.x_max,
            "n_x": self.n_x,
        }


def _default_freq_max(y, noise, cfg) -> float:
    q75, q25 = np.percentile(y, [75, 25])
    iqr = q75 - q25
    fm = max(20.0 / iqr, 5.0) if iqr > 0 else math.inf
    t = cfg.frequencies()
    nyquist = float(np.abs(t).max())
    fm = min(fm, nyquist)
    if noise.is_degenerate:
        return fm
    # stop before the noise CF drops under sqrt(tau): past that point a
    # coefficient error of order tau is amplified beyond sqrt(tau)
    ts = np.sort(t[(t > 0) & (t <= fm)])
    if ts.size:
        mod = np.abs(char_fn(noise, ts))
        below = np.flatnonzero(mod < max(math.sqrt(cfg.tau), CF_FLOOR))
        if below.size:
            k = below[0]
            fm = float(ts[k - 1]) if k > 0 else float(ts[0]) / 2
    return fm


@dataclass(frozen=True)
class DeconvolvedCdf:
    cdf: StepCdf
    raw_density: np.ndarray
    config: DeconvConfig
    n_used: int
    zeroed_freqs: int = 0
    total_mass: float = 1.0

    @property
    def x_grid(self) -> np.ndarray:
        return self.cdf.grid_points


def empirical_char_fn(samples, t_grid) -> np.ndarray:
    """``(1/n) sum_j exp(i t Y_j)`` at every ``t`` in ``t_grid``."""
    y = np.asarray(samples, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty sample")
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    out = np.empty(t.shape, dtype=complex)
    step = max(1, 2_000_000 // y.size)
    for i in range(0, t.size, step):
        out[i : i + step] = np.exp(1j * np.outer(t[i : i + step], y)).mean(axis=1)
    return out


def deconvolve(samples_y, noise: NoiseSpec, config: DeconvConfig | None = None) -> DeconvolvedCdf:
    """Estimate the CDF of the noiseless signal behind ``samples_y``.

    Parameters
    ----------
    samples_y : array-like
        Observations ``h(X) + eps``.
    noise : NoiseSpec
        Law of ``eps`` used for the spectral division.
    config : DeconvConfig, optional
        Missing fields are resolved from the data (see :meth:`DeconvConfig.resolve`).

    Returns
    -------
    DeconvolvedCdf
        Corrected CDF on the evaluation grid: the raw density is clipped at
        zero, integrated, made monotone, normalized to end at 1 and clamped to
        ``[0, 1]``.
    """
    y = np.asarray(samples_y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite sample")
    cfg = (config or DeconvConfig()).resolve(y, noise)
    grid = cfg.x_grid()
    if y.min() < grid[0] or y.max() > grid[-1]:
        raise DeconvolutionError("grid does not cover sample range")
    dx = grid[1] - grid[0]

    idx = np.searchsorted(grid, y, side="left")
    mass = np.bincount(idx, minlength=grid.size) / y.size
    coef = np.fft.fft(mass, n=cfg.n_freq)
    t = cfg.frequencies()

    keep = np.abs(coef) >= cfg.tau
    keep[0] = True
    coef = np.where(keep, coef, 0.0)

    zeroed = 0
    band = np.flatnonzero((np.abs(t) <= cfg.freq_max) & keep)
    if band.size and not noise.is_degenerate:
        phi = char_fn(noise, t[band]).real
        tiny = np.abs(phi) < CF_FLOOR
        zeroed = int(tiny.sum())
        if zeroed:
            log.warning("zeroed %d frequencies where the noise CF is below %g", zeroed, CF_FLOOR)
        coef[band] = np.where(tiny, 0.0, coef[band] / np.where(tiny, 1.0, phi))

    raw_mass = np.fft.ifft(coef).real[: grid.size]
    cum = np.maximum.accumulate(np.cumsum(np.clip(raw_mass, 0.0, None)))
    total = float(cum[-1])
    if not total > 0 or not math.isfinite(total):
        raise DeconvolutionError("deconvolved density has no positive mass")
    cdf = np.clip(cum / total, 0.0, 1.0)
    cdf[-1] = 1.0
    return DeconvolvedCdf(
        cdf=StepCdf(grid, cdf, DECONVOLVED),
        raw_density=raw_mass / dx,
        config=cfg,
        n_used=int(y.size),
        zeroed_freqs=zeroed,
        total_mass=total,
    )


def kolmogorov_cells(cdf_a: StepCdf, cdf_b: StepCdf, points, cell: float) -> float:
    """Largest violation of ``b(x - cell) <= a(x) <= b(x + cell)`` over ``points``.

    Zero means ``a`` lies within one grid cell of ``b`` horizontally.
    """
    x = np.asarray(points, dtype=float)
    a = cdf_a(x)
    lo = cdf_b(x - cell * (1 + 1e-9))
    hi = cdf_b(x + cell * (1 + 1e-9))
    return float(max(np.max(lo - a, initial=0.0), np.max(a - hi, initial=0.0)))


@dataclass(frozen=True)
class NoiseAdvantage:
    t: np.ndarray
    holds: np.ndarray
    skipped: int

    @property
    def fraction(self) -> float:
        return float(self.holds.mean()) if self.holds.size else float("nan")


def noise_advantage(candidate: NoiseSpec, truth: NoiseSpec, t_grid) -> NoiseAdvantage:
    """Check ``|1 - 1/f*| >= |1/f - 1/f*|`` per frequency.

    ``f`` is the candidate noise CF and ``f*`` the true one; where it holds,
    deconvolving with the candidate beats plain quantile matching.
    """
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    f = char_fn(candidate, t)
    fs = char_fn(truth, t)
    ok = (np.abs(f) >= CF_FLOOR) & (np.abs(fs) >= CF_FLOOR)
    inv_f, inv_fs = 1.0 / f[ok], 1.0 / fs[ok]
    holds = np.abs(1.0 - inv_fs) >= np.abs(inv_f - inv_fs)
    return NoiseAdvantage(t=t[ok], holds=holds, skipped=int((~ok).sum()))


def psi_rate(noise: NoiseSpec, n: int, delta: float, smoothness: float = 1.0) -> float:
    """Indicative sup-error of the deconvolved CDF, with unit constant.

    Ordinary-smooth noise (uniform, Student) gives ``(n / log(1/delta))**-eps``
    with ``eps = s / (2s + 2 decay + 1)``; Gaussian noise gives the logarithmic
    rate ``log(n / delta)**-s``.  Capped at 1.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if not smoothness > 0:
        raise ValueError("smoothness must be > 0")
    if noise.is_degenerate:
        return 0.0
    if noise.family == "gaussian":
        rate = math.log(n / delta) ** (-smoothness)
    else:
        decay = 1.0 if noise.family == "uniform" else float(noise.nu)
        eps = smoothness / (2 * smoothness + 2 * decay + 1)
        rate = (n / math.log(1.0 / delta)) ** (-eps)
    return min(rate, 1.0)
