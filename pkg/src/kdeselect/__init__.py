"""Data-driven bandwidth selection for multivariate kernel density estimation."""

from .estimators import DensityEstimate, Sample, fit_aux, fit_kde, smoothed_truth
from .kernels import ProductKernel, build_higher_order, get_base_kernel, moment
from .numerics import EvaluationGrid, GridFunction, lp_norm, make_grid

__version__ = "0.1.0"
