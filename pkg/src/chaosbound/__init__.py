"""Exact and Monte-Carlo checks of multi-point chaos bounds for Gaussian fields.

Submodules
----------
scaling      anisotropic metric, test functions, mollifiers
gaussian     Wick moments, exact subtracted chaos products in theta
covariance   sandwich covariance models and Gram matrices
graphs       clustering and certified pairing-graph rewrites
bounds       lhs/rhs sweeps and a Monte-Carlo oracle
fields       lattice sampling, mollification, Wick powers, pairings
convergence  renormalized functionals and scaling experiments
cli          command-line driver
"""

from .covariance import (CovarianceModel, GaussianVector, fractional_covariance, gram_matrix,
                         mollified_covariance, sandwich_check)
from .gaussian import (ThetaExpr, hermite, isserlis_moment, rhs_moment, subtracted_product,
                       wick_moment)
from .scaling import Scaling, TestFunction, aniso_norm, bump, rescale_test

__version__ = "0.1.0"
