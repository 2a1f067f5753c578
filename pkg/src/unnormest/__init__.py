"""Estimators for unnormalized models built from a pair of nonlinearities.

The objective ``J_g(theta) = E_d g1(p_m/p_n) - E_n g2(p_m/p_n)`` is
maximized over the model parameters together with the negative
log-partition constant ``c``.
"""

__version__ = "0.1.0"

from .family import ALL_KINDS, NonlinearityKind, check_pairing, g_values, weights_from_logratio  # noqa: E402
from .models import Gauss1DModel, IcaGroundTruth, IcaModel, ModelSpec, pack_theta, split_theta  # noqa: E402
from .noise import GaussianAux, GenGaussAux, fit_gaussian, gen_gaussian_sample  # noqa: E402
from .objective import EstimationProblem, objective_gradient, objective_value  # noqa: E402
from .optimizer import OptimizerConfig, Status, maximize  # noqa: E402

__all__ = [
    "ALL_KINDS",
    "NonlinearityKind",
    "check_pairing",
    "g_values",
    "weights_from_logratio",
    "Gauss1DModel",
    "IcaGroundTruth",
    "IcaModel",
    "ModelSpec",
    "pack_theta",
    "split_theta",
    "GaussianAux",
    "GenGaussAux",
    "fit_gaussian",
    "gen_gaussian_sample",
    "EstimationProblem",
    "objective_gradient",
    "objective_value",
    "OptimizerConfig",
    "Status",
    "maximize",
]
