"""MDL estimators with two-stage codes for linear regression through random ReLU features."""

from .errors import ConfigError, DegenerateBasisError, MdlError, NumericalError, SearchBudgetError
from .estimator import CodedDirections, MdlEstimate, fit, l_alpha, mdl_estimate, reduce
from .model import (Dataset, NetworkModel, TrueParam, generate_dataset, make_rng,
                    neg_log_likelihood, relu_features, sample_true_param, sample_weights)
from .risk import RenyiConfig, cor1_rhs, renyi_conditional, simulate, thm2_rhs, thm3_rhs
from .spectral import (approx_basis, beta_D, exact_spectrum, gram_report, monte_carlo_fim,
                       residual_matrix)
from .twostage import CodeSpec, build_code, kraft_sum

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateBasisError", "MdlError", "NumericalError", "SearchBudgetError",
    "CodedDirections", "MdlEstimate", "fit", "l_alpha", "mdl_estimate", "reduce",
    "Dataset", "NetworkModel", "TrueParam", "generate_dataset", "make_rng", "neg_log_likelihood",
    "relu_features", "sample_true_param", "sample_weights",
    "RenyiConfig", "cor1_rhs", "renyi_conditional", "simulate", "thm2_rhs", "thm3_rhs",
    "approx_basis", "beta_D", "exact_spectrum", "gram_report", "monte_carlo_fim", "residual_matrix",
    "CodeSpec", "build_code", "kraft_sum",
]
