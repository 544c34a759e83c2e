"""Large-system analysis and simulation of convex-relaxation-then-quantization
one-bit precoding: state-evolution fixed points, predicted symbol error rates,
SEP-optimal regularisation, AMP and a direct convex solver."""

__version__ = "0.1.0"

from .asymptotics import (
    ScalarChannel,
    cluster_proportion,
    effective_channel_general,
    effective_channel_sign,
    sep_predict,
    xhat_statistic,
)
from .errors import ConfigError, NumericalFailure
from .fixed_point import FixedPointSolution, RegParams, SystemConfig, f_prime, f_value, minimize_a, solve_fixed_point
from .optimal_params import OptimalDesign, grid_search_sep, optimal_design
from .scalar_kernels import Quantizer, identity_quantizer, mollify, piecewise_constant, sign_quantizer

__all__ = [
    "ConfigError",
    "FixedPointSolution",
    "NumericalFailure",
    "OptimalDesign",
    "Quantizer",
    "RegParams",
    "ScalarChannel",
    "SystemConfig",
    "cluster_proportion",
    "effective_channel_general",
    "effective_channel_sign",
    "f_prime",
    "f_value",
    "grid_search_sep",
    "identity_quantizer",
    "minimize_a",
    "mollify",
    "optimal_design",
    "piecewise_constant",
    "sep_predict",
    "sign_quantizer",
    "solve_fixed_point",
    "xhat_statistic",
]
