"""Separable model: regress out the context, then link the residuals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deconvolution import DeconvConfig
from .distributions import NoiseSpec
from .linkfit import LinkEstimate, fit_link
from .matching import Dataset


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coefficients: np.ndarray

    def predict(self, context) -> np.ndarray:
        z = np.asarray(context, dtype=float)
        if z.ndim == 1:
            z = z[:, None] if self.coefficients.size else z.reshape(-1, 0)
        if z.shape[1] != self.coefficients.size:
            raise ValueError("context dimension does not match the model")
        return self.intercept + z @ self.coefficients

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coefficients": self.coefficients.tolist()}


def fit_linear(values, context) -> LinearModel:
    """Ordinary least squares with intercept."""
    v = np.asarray(values, dtype=float).ravel()
    z = np.asarray(context, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if v.size == 0:
        raise ValueError("no rows to fit")
    if z.shape[0] != v.size:
        raise ValueError("values and context must have equal row counts")
    if v.size < z.shape[1] + 1:
        raise ValueError("fewer rows than parameters")
    design = np.column_stack([np.ones(v.size), z])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise ValueError("collinear context")
    beta, *_ = np.linalg.lstsq(design, v, rcond=None)
    return LinearModel(float(beta[0]), beta[1:])


@dataclass(frozen=True)
class ResidualPair:
    x_resid: np.ndarray
    y_resid: np.ndarray


@dataclass(frozen=True)
class SeparableFit:
    estimate: LinkEstimate
    model_x: LinearModel
    model_y: LinearModel
    residuals: ResidualPair


def residualize(dx: Dataset, dy: Dataset, regressor=fit_linear):
    if dx.dim != dy.dim:
        raise ValueError("both datasets need numeric contexts of equal dimension")
    zx, zy = dx.numeric_matrix(), dy.numeric_matrix()
    mx = regressor(dx.values, zx)
    my = regressor(dy.values, zy)
    # Y is residualized on its own context Z(2)
    pair = ResidualPair(dx.values - mx.predict(zx), dy.values - my.predict(zy))
    return mx, my, pair


def match_merge_sep(
    dx: Dataset,
    dy: Dataset,
    noise: NoiseSpec,
    config: DeconvConfig | None = None,
    delta: float = 0.05,
    psi: float | None = None,
    decreasing: bool = False,
    regressor=fit_linear,
) -> SeparableFit:
    """Regress each dataset on its context and link the two residual samples.

    ``regressor(values, context)`` must return an object with
    ``predict(context)``; :func:`fit_linear` is the built-in choice.  The
    returned estimate lives in residual coordinates.
    """
    mx, my, pair = residualize(dx, dy, regressor)
    est = fit_link(pair.x_resid, pair.y_resid, noise, config, delta, psi, decreasing=decreasing)
    return SeparableFit(est, mx, my, pair)
