"""Empirical CDFs, generalized quantiles and the noise families used for deconvolution."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

EMPIRICAL = "empirical"
DECONVOLVED = "deconvolved"

NOISE_FAMILIES = ("dirac", "gaussian", "uniform", "student")


@dataclass(frozen=True)
class StepCdf:
    """Right-continuous, non-decreasing step function stored on a sorted grid.

    ``cdf_values[k]`` is the value on ``[grid_points[k], grid_points[k+1])``;
    to the left of the first grid point the function is 0.
    """

    grid_points: np.ndarray
    cdf_values: np.ndarray
    kind: str = EMPIRICAL

    def __post_init__(self):
        x = np.asarray(self.grid_points, dtype=float)
        y = np.asarray(self.cdf_values, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise ValueError("grid_points and cdf_values must be 1-d arrays of equal, non-zero length")
        if not np.all(np.isfinite(x)):
            raise ValueError("grid_points contain non-finite entries")
        if np.any(np.diff(x) <= 0):
            raise ValueError("grid_points must be strictly increasing")
        if np.any(np.isnan(y)) or np.any(y < 0) or np.any(y > 1):
            raise ValueError("cdf_values must lie in [0, 1]")
        if np.any(np.diff(y) < 0):
            raise ValueError("cdf_values must be non-decreasing")
        if self.kind not in (EMPIRICAL, DECONVOLVED):
            raise ValueError(f"unknown StepCdf kind {self.kind!r}")
        if self.kind == EMPIRICAL and y[-1] != 1.0:
            raise ValueError("an empirical CDF must end at 1")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "grid_points", x)
        object.__setattr__(self, "cdf_values", y)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.grid_points, x, side="right") - 1
        out = np.where(idx >= 0, self.cdf_values[np.clip(idx, 0, None)], 0.0)
        return out if out.ndim else float(out)

    def quantile(self, p):
        """Vectorized :func:`pseudo_inverse`."""
        p = np.asarray(p, dtype=float)
        if np.any(np.isnan(p)) or np.any(p < 0) or np.any(p > 1):
            raise ValueError("quantile level out of range")
        idx = np.searchsorted(self.cdf_values, p, side="left")
        out = self.grid_points[np.clip(idx, 0, self.grid_points.size - 1)]
        return out if out.ndim else float(out)


def empirical_cdf(samples) -> StepCdf:
    """ECDF of ``samples``; tied values give one grid point with a jump of k/m."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample")
    values, counts = np.unique(x, return_counts=True)
    cum = np.cumsum(counts)
    cdf = cum / x.size
    cdf[-1] = 1.0
    return StepCdf(values, cdf, EMPIRICAL)


def pseudo_inverse(cdf: StepCdf, p: float) -> float:
    """Generalized inverse ``inf{x on grid : cdf(x) >= p}``.

    Levels at or below the first CDF value map to the first grid point and
    levels above the largest CDF value map to the last one.
    """
    p = float(p)
    if math.isnan(p) or p < 0.0 or p > 1.0:
        raise ValueError("quantile level out of range")
    return cdf.quantile(p)


def phi_bound(delta: float, m: int) -> float:
    """Pointwise ECDF deviation bound ``sqrt(log(2/delta)/m) + 16 log(2/delta)/m``."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if m < 1:
        raise ValueError("m must be at least 1")
    log_term = math.log(2.0 / delta)
    return math.sqrt(log_term / m) + 16.0 * log_term / m


@dataclass(frozen=True)
class BoundParams:
    delta: float
    m: int
    psi: float = 0.0
    phi: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.psi < 0:
            raise ValueError("psi must be non-negative")
        if self.phi is None:
            object.__setattr__(self, "phi", phi_bound(self.delta, self.m))
        elif self.phi < 0:
            raise ValueError("phi must be non-negative")

    @property
    def width(self) -> float:
        return self.psi + self.phi


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean, symmetric noise law.

    ``param`` is the standard deviation for ``gaussian``, the half-range ``a``
    of ``U([-a, a])`` for ``uniform`` and the multiplier of a Student-t
    variate for ``student`` (whose degrees of freedom are ``nu``).
    """

    family: str = "dirac"
    param: float = 0.0
    nu: float | None = None

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if not math.isfinite(self.param) or self.param < 0:
            raise ValueError("noise parameter must be finite and non-negative")
        if self.family == "student":
            if self.nu is None or not math.isfinite(self.nu) or self.nu <= 0:
                raise ValueError("student noise needs finite nu > 0")
        elif self.nu is not None:
            raise ValueError(f"nu is only meaningful for student noise, not {self.family}")

    @classmethod
    def dirac(cls) -> NoiseSpec:
        return cls("dirac")

    @classmethod
    def gaussian(cls, sigma: float) -> NoiseSpec:
        return cls("gaussian", float(sigma))

    @classmethod
    def uniform(cls, a: float) -> NoiseSpec:
        return cls("uniform", float(a))

    @classmethod
    def scaled_student(cls, scale: float, nu: float) -> NoiseSpec:
        return cls("student", float(scale), float(nu))

    @classmethod
    def parse(cls, text: str) -> NoiseSpec:
        """Parse ``dirac``, ``gaussian:0.1``, ``uniform:0.5`` or ``student:0.1:4``."""
        parts = text.strip().split(":")
        family, args = parts[0].lower(), [float(v) for v in parts[1:]]
        expected = {"dirac": 0, "gaussian": 1, "uniform": 1, "student": 2}
        if family not in expected or len(args) != expected[family]:
            raise ValueError(f"cannot parse noise {text!r}")
        if family == "dirac":
            return cls.dirac()
        if family == "student":
            return cls.scaled_student(*args)
        return cls(family, args[0])

    def __str__(self):
        if self.family == "dirac":
            return "dirac"
        if self.family == "student":
            return f"student:{self.param:g}:{self.nu:g}"
        return f"{self.family}:{self.param:g}"

    def to_dict(self) -> dict:
        d = {"family": self.family, "param": self.param}
        if self.nu is not None:
            d["nu"] = self.nu
        return d

    @property
    def is_degenerate(self) -> bool:
        return self.family == "dirac" or self.param == 0.0

    def std(self) -> float:
        """Standard deviation (infinite for Student with nu <= 2)."""
        if self.is_degenerate:
            return 0.0
        if self.family == "gaussian":
            return self.param
        if self.family == "uniform":
            return self.param / math.sqrt(3.0)
        if self.nu > 2:
            return self.param * math.sqrt(self.nu / (self.nu - 2.0))
        return math.inf

    def spread(self) -> float:
        """Finite scale used to pad evaluation grids."""
        s = self.std()
        if math.isinf(s):
            # inter-quartile half-width is always finite
            from scipy.stats import t as student_t

            s = self.param * float(student_t.ppf(0.75, self.nu))
        return s

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_degenerate:
            raise ValueError("dirac noise has no density")
        if self.family == "gaussian":
            s = self.param
            return np.exp(-0.5 * (x / s) ** 2) / (s * math.sqrt(2 * math.pi))
        if self.family == "uniform":
            a = self.param
            return np.where(np.abs(x) <= a, 0.5 / a, 0.0)
        return _student_pdf(x / self.param, self.nu) / self.param


def _student_pdf(x, nu):
    c = math.exp(math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)) / math.sqrt(nu * math.pi)
    return c * (1.0 + x * x / nu) ** (-(nu + 1) / 2)


# below this frequency the cosine-weighted Fourier integral loses accuracy
# (its first cycle alone spans pi / s)
SMALL_FREQ = 0.05


def _quad(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        return integrate.quad(*args, **kw)


@lru_cache(maxsize=65536)
def _student_cf(s: float, nu: float) -> float:
    # standard t CF at frequency s >= 0, as a one-sided Fourier cosine integral
    if not math.isfinite(s):
        raise ValueError("frequency must be finite")
    # 1 - cf(s) shrinks like s**min(nu, 2); below machine precision it is 1
    if s == 0.0 or min(nu, 2.0) * math.log(s) < math.log(1e-17):
        return 1.0
    try:
        if s >= SMALL_FREQ:
            val, err = _quad(_student_pdf, 0.0, np.inf, args=(nu,), weight="cos", wvar=s, epsabs=1e-8, limlst=200)
            val *= 2.0
        else:
            val, err = _student_cf_small(s, nu)
    except integrate.IntegrationWarning as exc:
        raise ArithmeticError(
            f"Student characteristic function quadrature failed at t={s:g}, nu={nu:g}: {exc}"
        ) from None
    if not np.isfinite(val) or err > 1e-6:
        raise ArithmeticError(
            f"Student characteristic function quadrature did not converge at t={s:g}, nu={nu:g} "
            f"(estimate {val!r}, error {err:.2e})"
        )
    return val


def _student_cf_small(s, nu):
    """``1 - 2 int_0^inf f(x) (1 - cos sx) dx`` for small ``s``.

    The head ``[0, 1/s]`` is integrated piecewise on log-spaced breaks; on the
    tail the substitution ``y = s x`` gives a unit-frequency cosine integral.
    """
    x_end = 1.0 / s
    breaks = np.concatenate([[0.0], np.geomspace(1.0, x_end, max(2, int(math.log10(x_end)) + 2))])
    head, err = 0.0, 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        v, e = _quad(lambda x: _student_pdf(x, nu) * (1.0 - math.cos(s * x)), a, b, epsabs=1e-13, limit=200)
        head, err = head + v, err + e
    tail_mass = float(special.stdtr(nu, -x_end))
    tail_cos, e = _quad(lambda y: _student_pdf(y / s, nu) / s, 1.0, np.inf, weight="cos", wvar=1.0,
                        epsabs=1e-13, limlst=200)
    return 1.0 - 2.0 * (head + tail_mass - tail_cos), 2.0 * (err + e)


def char_fn(noise: NoiseSpec, t):
    """Characteristic function ``E exp(i t eps)`` of ``noise``.

    All supported families are symmetric so the result is real; it is
    returned as complex to keep the contract uniform.
    """
    t = np.asarray(t, dtype=float)
    if noise.is_degenerate:
        out = np.ones_like(t)
    elif noise.family == "gaussian":
        out = np.exp(-0.5 * (noise.param * t) ** 2)
    elif noise.family == "uniform":
        out = np.sinc(noise.param * t / np.pi)
    else:
        flat = np.abs(noise.param * t).ravel()
        out = np.array([_student_cf(float(s), float(noise.nu)) for s in flat]).reshape(t.shape)
    out = out.astype(complex)
    return out if out.ndim else complex(out)


def sample_noise(noise: NoiseSpec, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. noise draws; ``seed`` is anything ``np.random.default_rng`` accepts."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    if noise.is_degenerate:
        return np.zeros(n)
    if noise.family == "gaussian":
        return rng.normal(0.0, noise.param, size=n)
    if noise.family == "uniform":
        return rng.uniform(-noise.param, noise.param, size=n)
    return noise.param * rng.standard_t(noise.nu, size=n)
