"""Synthetic experiments: data generators, repeated fits and error metrics."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .deconvolution import DeconvConfig
from .distributions import NoiseSpec, sample_noise
from .linkfit import LinkEstimate, fit_link
from .matching import Dataset

H_FAMILIES = ("power_abs", "disc_flat", "identity", "affine", "table")

# named substreams of a simulation seed
X_STREAM, Y_STREAM, NOISE_STREAM, HOLDOUT_STREAM = range(4)

N_TRUTH = 2001
N_MSE_GRID = 201
MSE_CENTRAL = 0.9


def power_abs(x):
    x = np.asarray(x, dtype=float)
    return x * np.abs(x) / 4.0


def disc_flat(x):
    # identity below 0, flat at 0.5 on [0, 2), jump to x + 1 from 2 on
    x = np.asarray(x, dtype=float)
    return np.where(x < 0, x, np.where(x < 2, 0.5, x + 1.0))


def make_link(family: str, params=None):
    """Return the monotone link function named by ``family``."""
    params = params or {}
    if family == "power_abs":
        return power_abs
    if family == "disc_flat":
        return disc_flat
    if family == "identity":
        return lambda x: np.asarray(x, dtype=float).copy()
    if family == "affine":
        a, b = float(params.get("a", 1.0)), float(params.get("b", 0.0))
        if a < 0:
            raise ValueError("affine link needs a >= 0 to be non-decreasing")
        return lambda x: a * np.asarray(x, dtype=float) + b
    if family == "table":
        tx = np.asarray(params["x"], dtype=float)
        ty = np.asarray(params["y"], dtype=float)
        if tx.size < 2 or np.any(np.diff(tx) <= 0) or np.any(np.diff(ty) < 0):
            raise ValueError("table link needs increasing x and non-decreasing y")
        return lambda x: np.interp(np.asarray(x, dtype=float), tx, ty)
    raise ValueError(f"unknown h_family {family!r}; expected one of {H_FAMILIES}")


@dataclass(frozen=True)
class SimConfig:
    m: int = 1000
    n: int = 1000
    h_family: str = "power_abs"
    h_params: dict | None = None
    x_lo: float = -5.0
    x_hi: float = 5.0
    noise_true: NoiseSpec = field(default_factory=NoiseSpec.dirac)
    noise_deconv: NoiseSpec | None = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ValueError("m and n must be at least 2")
        if not self.x_lo < self.x_hi:
            raise ValueError("x_law needs lo < hi")
        make_link(self.h_family, self.h_params)
        if self.noise_deconv is None:
            object.__setattr__(self, "noise_deconv", self.noise_true)

    @property
    def link(self):
        return make_link(self.h_family, self.h_params)

    def mse_grid(self) -> np.ndarray:
        w = (self.x_hi - self.x_lo) * (1 - MSE_CENTRAL) / 2
        return np.linspace(self.x_lo + w, self.x_hi - w, N_MSE_GRID)


@dataclass(frozen=True)
class TruthTable:
    x: np.ndarray
    h: np.ndarray

    def __call__(self, u):
        return np.interp(np.asarray(u, dtype=float), self.x, self.h)


@dataclass(frozen=True)
class SimData:
    dx: Dataset
    dy: Dataset
    truth: TruthTable


def _streams(seed):
    return np.random.SeedSequence(seed).spawn(4)


def simulate(config: SimConfig) -> SimData:
    """Draw X and an independent Y sample.

    Each Y is ``h(X') + eps`` with its own fresh ``X'``; X, X' and eps come
    from separate substreams so changing ``m`` leaves Y untouched.
    """
    ss = _streams(config.seed)
    h = config.link
    x = np.random.default_rng(ss[X_STREAM]).uniform(config.x_lo, config.x_hi, config.m)
    x_prime = np.random.default_rng(ss[Y_STREAM]).uniform(config.x_lo, config.x_hi, config.n)
    y = h(x_prime) + sample_noise(config.noise_true, config.n, ss[NOISE_STREAM])
    grid = np.linspace(config.x_lo, config.x_hi, N_TRUTH)
    return SimData(Dataset(x), Dataset(y), TruthTable(grid, h(grid)))


def simulate_holdout(config: SimConfig, k: int) -> np.ndarray:
    """``k`` paired ``(x, h(x) + eps)`` rows, independent of :func:`simulate`'s draws."""
    rng = np.random.default_rng(_streams(config.seed)[HOLDOUT_STREAM])
    x = rng.uniform(config.x_lo, config.x_hi, k)
    y = config.link(x) + sample_noise(config.noise_true, k, rng)
    return np.column_stack([x, y])


def grid_mse(estimate: LinkEstimate, h, points) -> float:
    """Mean squared gap between the estimator and the true link on ``points``."""
    pts = np.asarray(points, dtype=float)
    return float(np.mean((estimate.predict(pts) - h(pts)) ** 2))


@dataclass(frozen=True)
class RunOutcome:
    mse: float
    monotone: bool
    finite: bool
    estimate: LinkEstimate | None = None


def run_once(config: SimConfig, deconv: DeconvConfig | None = None, keep_estimate: bool = False) -> RunOutcome:
    data = simulate(config)
    est = fit_link(data.dx.values, data.dy.values, config.noise_deconv, deconv)
    mse = grid_mse(est, config.link, config.mse_grid())
    finite = bool(np.all(np.isfinite(est.h_hat))) and math.isfinite(mse)
    return RunOutcome(mse, est.is_monotone(), finite, est if keep_estimate else None)


def repetition_seed(master: int, cell: int, rep: int) -> int:
    return int(np.random.SeedSequence([master, cell, rep]).generate_state(1)[0])


@dataclass
class CellSummary:
    m: int
    n: int
    noise: str
    noise_deconv: str
    h_family: str
    mses: np.ndarray
    all_monotone: bool
    failures: list = field(default_factory=list)

    @property
    def repetitions(self) -> int:
        return int(self.mses.size)

    @property
    def median_mse(self) -> float:
        return float(np.median(self.mses)) if self.mses.size else math.nan

    @property
    def iqr_mse(self) -> float:
        if not self.mses.size:
            return math.nan
        q75, q25 = np.percentile(self.mses, [75, 25])
        return float(q75 - q25)

    def row(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "noise": self.noise,
            "noise_deconv": self.noise_deconv,
            "h_family": self.h_family,
            "median_mse": self.median_mse,
            "iqr_mse": self.iqr_mse,
            "repetitions": self.repetitions,
            "failures": len(self.failures),
            "all_monotone": self.all_monotone,
        }


def _run_cell(base: SimConfig, cell: int, repetitions: int, master: int, deconv) -> CellSummary:
    mses, monotone, failures = [], True, []
    for rep in range(repetitions):
        cfg = replace(base, seed=repetition_seed(master, cell, rep))
        try:
            out = run_once(cfg, deconv)
        except (ValueError, ArithmeticError) as exc:
            failures.append(f"rep {rep}: {exc}")
            continue
        mses.append(out.mse)
        monotone &= out.monotone
    return CellSummary(
        base.m, base.n, str(base.noise_true), str(base.noise_deconv), base.h_family,
        np.asarray(mses), monotone, failures,
    )


def run_grid_experiment(
    sizes,
    noises,
    h_family: str = "power_abs",
    repetitions: int = 20,
    seed: int = 0,
    x_law=(-5.0, 5.0),
    deconv: DeconvConfig | None = None,
    h_params=None,
    workers: int = 1,
) -> list[CellSummary]:
    """Median and IQR of the grid-MSE for every (size, noise) cell.

    The true noise is also used for deconvolution.  Cell ``i`` draws its
    repetition seeds from ``(seed, i, rep)``.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    cells = []
    for m, n in sizes:
        for noise in noises:
            cells.append(SimConfig(m, n, h_family, h_params, x_law[0], x_law[1], noise, noise))
    jobs = [(cfg, i) for i, cfg in enumerate(cells)]

    def run(job):
        cfg, i = job
        return _run_cell(cfg, i, repetitions, seed, deconv)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


@dataclass
class MisspecReport:
    noise_true: str
    noise_deconv: str
    mse_correct: np.ndarray
    mse_wrong: np.ndarray
    all_monotone: bool
    all_finite: bool

    @property
    def median_correct(self) -> float:
        return float(np.median(self.mse_correct))

    @property
    def median_wrong(self) -> float:
        return float(np.median(self.mse_wrong))

    @property
    def ratio(self) -> float:
        return self.median_wrong / self.median_correct if self.median_correct > 0 else math.inf

    def rows(self) -> list[dict]:
        return [
            {"rep": i, "mse_correct": c, "mse_wrong": w}
            for i, (c, w) in enumerate(zip(self.mse_correct.tolist(), self.mse_wrong.tolist()))
        ]


def run_misspecified(config: SimConfig, repetitions: int = 20, deconv: DeconvConfig | None = None) -> MisspecReport:
    """Grid-MSE on identical data, deconvolving with the true noise and with ``noise_deconv``."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    right, wrong = [], []
    monotone = finite = True
    for rep in range(repetitions):
        seed = repetition_seed(config.seed, 0, rep)
        good = run_once(replace(config, seed=seed, noise_deconv=config.noise_true), deconv)
        bad = run_once(replace(config, seed=seed), deconv)
        right.append(good.mse)
        wrong.append(bad.mse)
        monotone &= good.monotone and bad.monotone
        finite &= good.finite and bad.finite
    return MisspecReport(
        str(config.noise_true), str(config.noise_deconv), np.asarray(right), np.asarray(wrong), monotone, finite
    )


@dataclass(frozen=True)
class EvalReport:
    mse: float
    risk: float
    n_holdout: int

    def to_dict(self) -> dict:
        return {"mse": self.mse, "risk": self.risk, "n_holdout": self.n_holdout}


def evaluate_table(u_grid, h_hat, holdout) -> EvalReport:
    """Holdout error of the curve through ``(u_grid, h_hat)``, linearly interpolated
    and held constant beyond its ends."""
    pts = np.asarray(holdout, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("empty holdout")
    resid = pts[:, 1] - np.interp(pts[:, 0], np.asarray(u_grid, dtype=float), np.asarray(h_hat, dtype=float))
    mse = float(np.mean(resid**2))
    return EvalReport(mse, math.sqrt(mse), int(pts.shape[0]))


def evaluate(estimate: LinkEstimate, holdout) -> EvalReport:
    """Mean squared vertical distance of held-out ``(x, y)`` points to the fitted curve."""
    return evaluate_table(estimate.u_grid, estimate.h_hat, holdout)


RESULT_COLUMNS = ("m", "n", "noise", "noise_deconv", "h_family", "median_mse", "iqr_mse", "repetitions", "failures", "all_monotone")


def results_csv(cells: list[CellSummary]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for c in cells:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in c.row().items()})
    return buf.getvalue()
