"""Bayesian empirical likelihood for joint quantile regression."""
__version__ = "0.1.0"

from .asymptotics import (  # noqa: E402
    MODELS, InformationResult, ModelSpec, are_table, cqr_acov, information, psi_matrix, v11, v12,
)
from .baselines import bdl_chain, btl_chain  # noqa: E402
from .diagnostics import ess  # noqa: E402
from .el import BACKEND, ELResult, ELStatus, estimating_functions, log_el_ratio, solve_lambda  # noqa: E402
from .estimators import METHODS, MethodOptions, MethodResult, estimate  # noqa: E402
from .model import (  # noqa: E402
    ContractError, Dataset, Parameterization, ParamVector, QuantileLevels, check_loss, expand, psi_score,
)
from .priors import PriorSpec, difference_prior, hessian_at_mode, independent_normal, log_density, prior_mode  # noqa: E402
from .priors import shrinking_linked_prior  # noqa: E402
from .quantreg import FitResult, cqr_fit, rq_fit  # noqa: E402
from .sampler import (  # noqa: E402
    Chain, PosteriorSummary, SamplerConfig, estimate_information, log_posterior, modify_intercepts, run_chain,
    summarize,
)
from .simulation import (  # noqa: E402
    ExperimentReport, coverage_experiment, generate, mse_experiment, normalized_difference, split_validate,
    true_params,
)
