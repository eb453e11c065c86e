"""Per-group link estimation: empirical quantile map composed with a deconvolved quantile map."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .deconvolution import DeconvConfig, deconvolve, psi_rate
from .distributions import NoiseSpec, StepCdf, empirical_cdf, phi_bound
from .matching import GroupMap

log = logging.getLogger(__name__)

N_UNIFORM_U = 101


@dataclass(frozen=True)
class LinkEstimate:
    """Estimated link ``h_Z`` for one context value.

    ``h_hat`` is non-decreasing along ``u_grid`` (non-increasing when the fit
    was made with ``decreasing=True``).  Bands are plug-in brackets built from
    the estimated CDFs.
    """

    u_grid: np.ndarray
    h_hat: np.ndarray
    band_lo: np.ndarray | None
    band_hi: np.ndarray | None
    group_key: tuple
    diagnostics: dict
    f_z: StepCdf = field(repr=False)
    f_h: StepCdf = field(repr=False)
    decreasing: bool = False

    def predict(self, u):
        """Evaluate the estimator itself (a step function) at arbitrary ``u``."""
        levels = self.f_z(u)
        out = self.f_h.quantile(levels)
        return -out if self.decreasing else out

    def interpolate(self, x):
        """Linear interpolation of ``h_hat`` on ``u_grid``, clamped at the ends."""
        return np.interp(np.asarray(x, dtype=float), self.u_grid, self.h_hat)

    def is_monotone(self) -> bool:
        d = np.diff(self.h_hat)
        return bool(np.all(d <= 0) if self.decreasing else np.all(d >= 0))

    @property
    def cell(self) -> float:
        """Spacing of the deconvolution grid, the resolution of ``h_hat``."""
        g = self.f_h.grid_points
        return float(g[1] - g[0]) if g.size > 1 else 0.0


@dataclass
class MergeResult:
    estimates: list = field(default_factory=list)
    skipped: dict = field(default_factory=dict)
    failed: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.estimates)

    def __len__(self):
        return len(self.estimates)


def default_u_grid(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.union1d(np.unique(x), np.linspace(x.min(), x.max(), N_UNIFORM_U))


def band_from_bounds(f_z: StepCdf, f_h: StepCdf, u, psi: float, phi: float):
    """Plug-in confidence bracket for ``h`` at ``u``.

    The quantile map of ``f_h`` is applied at ``f_z(u) -/+ (psi + phi)``,
    with the levels clamped to ``[0, 1]``.
    """
    if psi < 0 or phi < 0:
        raise ValueError("psi and phi must be non-negative")
    level = np.asarray(f_z(u), dtype=float)
    w = psi + phi
    lo = f_h.quantile(np.clip(level - w, 0.0, 1.0))
    hi = f_h.quantile(np.clip(level + w, 0.0, 1.0))
    return lo, hi


def fit_link(
    x,
    y,
    noise: NoiseSpec,
    config: DeconvConfig | None = None,
    delta: float = 0.05,
    psi: float | None = None,
    smoothness: float = 1.0,
    decreasing: bool = False,
    u_grid=None,
    group_key: tuple = (),
) -> LinkEstimate:
    """Fit ``h_hat = F_h^-1 o F`` for one pair of independent samples."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    f_z = empirical_cdf(x)
    dec = deconvolve(-y if decreasing else y, noise, config)
    f_h = dec.cdf
    u = default_u_grid(x) if u_grid is None else np.asarray(u_grid, dtype=float)

    n_z = min(x.size, y.size)
    indicative = psi is None
    if indicative:
        psi = psi_rate(noise, n_z, delta, smoothness)
    phi = phi_bound(delta, x.size)

    h = f_h.quantile(f_z(u))
    lo, hi = band_from_bounds(f_z, f_h, u, psi, phi)
    if decreasing:
        h, lo, hi = -h, -hi, -lo
    diagnostics = {
        "n_z": n_z,
        "m": int(x.size),
        "n": int(y.size),
        "psi": psi,
        "psi_indicative": indicative,
        "phi": phi,
        "delta": delta,
        "tau": dec.config.tau,
        "freq_max": dec.config.freq_max,
        "zeroed_freqs": dec.zeroed_freqs,
        "noise": str(noise),
    }
    return LinkEstimate(u, h, lo, hi, group_key, diagnostics, f_z, f_h, decreasing)


def match_merge(
    groups: GroupMap,
    noise: NoiseSpec,
    config: DeconvConfig | None = None,
    delta: float = 0.05,
    psi: float | None = None,
    smoothness: float = 1.0,
    decreasing: bool = False,
    workers: int = 1,
) -> MergeResult:
    """Fit every group with ``n_z > 1``; failures are recorded per group.

    ``psi`` overrides the indicative deconvolution error used for the bands.
    Results come back in sorted group-key order whatever ``workers`` is.
    """
    result = MergeResult()
    todo = []
    for key, grp in groups:
        if grp.n_z <= 1:
            result.skipped[key] = f"n_z={grp.n_z}"
            continue
        todo.append((key, grp))

    def run(item):
        key, grp = item
        try:
            return key, fit_link(grp.x, grp.y, noise, config, delta, psi, smoothness, decreasing, group_key=key), None
        except (ValueError, ArithmeticError) as exc:
            return key, None, f"group {key!r}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, todo))
    else:
        outcomes = [run(item) for item in todo]
    for key, est, err in sorted(outcomes, key=lambda o: o[0]):
        if err is None:
            result.estimates.append(est)
        else:
            log.warning(err)
            result.failed[key] = err
    return result


@dataclass(frozen=True)
class HolderParams:
    alpha: float
    L: float
    beta: float
    M: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not (self.L > 0 and self.M > 0):
            raise ValueError("L and M must be > 0")


def holder_error_bound(hp: HolderParams, psi: float, phi: float) -> float:
    """``L * M**alpha * (psi + phi)**(alpha * beta)``."""
    if psi < 0 or phi < 0:
        raise ValueError("psi and phi must be non-negative")
    return hp.L * hp.M**hp.alpha * (psi + phi) ** (hp.alpha * hp.beta)


@dataclass(frozen=True)
class CompositionReport:
    max_deviation: float
    cell: float
    flagged: np.ndarray
    deviations: np.ndarray

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())


def lemma3_check(cdf, h, u_grid, support, n_enum: int = 10_000) -> CompositionReport:
    """Compare ``F_h^-1(F(u))`` with ``h(u)`` using a dense enumeration of ``X``.

    ``cdf`` is the exact CDF of ``X`` (vectorized callable), ``h`` a
    non-decreasing callable and ``support`` an interval carrying all of
    ``X``'s mass.  ``X`` is discretized on ``n_enum`` points with masses taken
    from ``cdf`` increments, which keeps ``F`` exact on the enumeration grid.
    Points where ``F`` is locally flat are flagged and left out of
    ``max_deviation``.
    """
    lo, hi = support
    xs = np.linspace(lo, hi, n_enum)
    fx = np.asarray(cdf(xs), dtype=float)
    mass = np.diff(np.concatenate([[0.0], fx]))
    hx = np.asarray(h(xs), dtype=float)
    order = np.argsort(hx, kind="stable")
    h_sorted = hx[order]
    fh_sorted = np.cumsum(mass[order])

    u = np.asarray(u_grid, dtype=float)
    level = np.asarray(cdf(u), dtype=float)
    idx = np.searchsorted(fh_sorted, level - 1e-12, side="left")
    recovered = h_sorted[np.clip(idx, 0, n_enum - 1)]
    dev = np.abs(recovered - np.asarray(h(u), dtype=float))

    step = xs[1] - xs[0]
    flat = np.asarray(cdf(u + step), dtype=float) - np.asarray(cdf(u - step), dtype=float) <= 0
    cell = float(np.max(np.abs(np.diff(hx))))
    valid = dev[~flat]
    return CompositionReport(float(valid.max()) if valid.size else math.nan, cell, flat, dev)
