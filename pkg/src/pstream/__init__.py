"""Probabilistic stream processing.

Continuous distributions as first-class tuple attributes: a closed
distribution algebra on characteristic functions, model fitting, stream
operators over uncertain tuples, and a box/arrow dataflow engine.
"""

from .charfn import cf_fit_gmm, cf_invert, cf_invert_lattice, cf_invert_mixed, cf_of, cf_product
from .distributions import (AxisProduct, Gaussian1D, GaussianMixture, GaussianND, GridPdf, PointMass, Predicate,
                            WeightedSamples)
from .errors import PStreamError
from .fitting import fit_gaussian_kl, fit_gmm_em, select_k, variance_distance
from .tuples import ProbTuple

__all__ = [
    "AxisProduct", "Gaussian1D", "GaussianMixture", "GaussianND", "GridPdf", "PointMass", "Predicate",
    "ProbTuple", "PStreamError", "WeightedSamples", "cf_fit_gmm", "cf_invert", "cf_invert_lattice",
    "cf_invert_mixed", "cf_of", "cf_product", "fit_gaussian_kl", "fit_gmm_em", "select_k", "variance_distance",
]
__version__ = "0.1.0"
