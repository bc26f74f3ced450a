"""Sparse network VAR estimation with node communities and influencers.

The transition operator of a VAR(1) is modelled as ``Theta = Z_C V'``:
nodes in the same community share a row, and each row depends on a few
influencer nodes.  Observations may be missing at random.
"""

from .bench import align_and_score, clustering_distance, prediction_error
from .errors import SonicError
from .estimator import FitOptions, fit, fit_exact_greedy, risk
from .lasso import LassoOptions, solve_lasso_quadratic
from .moments import MomentEstimates, estimate_moments
from .panel import Clustering, GroundTruth, Panel, SonicModel, theta_from_factors
from .selection import lambda_heuristic, stability_analysis
from .simulate import SimulationConfig, simulate

__all__ = [
    "Clustering",
    "FitOptions",
    "GroundTruth",
    "LassoOptions",
    "MomentEstimates",
    "Panel",
    "SimulationConfig",
    "SonicError",
    "SonicModel",
    "align_and_score",
    "clustering_distance",
    "estimate_moments",
    "fit",
    "fit_exact_greedy",
    "lambda_heuristic",
    "prediction_error",
    "risk",
    "simulate",
    "solve_lasso_quadratic",
    "stability_analysis",
    "theta_from_factors",
]
