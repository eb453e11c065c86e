"""Link two independently collected variables through a monotone relation.

The link ``h`` in ``Y = h(X, Z) + eps`` is estimated per context value as the
deconvolved quantile function of ``Y`` composed with the empirical CDF of
``X``.  No record pairs are needed.
"""

from .deconvolution import DeconvConfig, DeconvolvedCdf, deconvolve, empirical_char_fn, noise_advantage, psi_rate
from .distributions import BoundParams, NoiseSpec, StepCdf, char_fn, empirical_cdf, phi_bound, pseudo_inverse, sample_noise
from .linkfit import (
    HolderParams,
    LinkEstimate,
    band_from_bounds,
    fit_link,
    holder_error_bound,
    lemma3_check,
    match_merge,
)
from .matching import Dataset, GroupMap, group_exact, group_near
from .separable import LinearModel, fit_linear, match_merge_sep
from .simlab import EvalReport, SimConfig, evaluate, run_grid_experiment, run_misspecified, simulate

__version__ = "0.1.0"

__all__ = [
    "BoundParams",
    "Dataset",
    "DeconvConfig",
    "DeconvolvedCdf",
    "EvalReport",
    "GroupMap",
    "HolderParams",
    "LinearModel",
    "LinkEstimate",
    "NoiseSpec",
    "SimConfig",
    "StepCdf",
    "band_from_bounds",
    "char_fn",
    "deconvolve",
    "empirical_cdf",
    "empirical_char_fn",
    "evaluate",
    "fit_linear",
    "fit_link",
    "group_exact",
    "group_near",
    "holder_error_bound",
    "lemma3_check",
    "match_merge",
    "match_merge_sep",
    "noise_advantage",
    "phi_bound",
    "pseudo_inverse",
    "psi_rate",
    "run_grid_experiment",
    "run_misspecified",
    "sample_noise",
    "simulate",
]
