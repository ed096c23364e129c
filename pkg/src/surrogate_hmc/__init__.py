"""Surrogate-likelihood Hamiltonian Monte Carlo for cosmic-ray modulation parameters.

A forward model maps eight heliospheric and diffusion parameters to a
32-bin proton spectrum. A SELU network is trained to emulate it, and the
network's exact input gradient drives NUTS over the five diffusion
parameters, with random-walk Metropolis as the gradient-free baseline.
"""

__version__ = "0.1.0"

from .diagnostics import (autocorrelation, credible_interval_1d, credible_region_2d,
                          effective_sample_size, posterior_predictive, summarize)
from .exceptions import (ConfigError, DegenerateIntervalError, DimensionError, DomainError,
                         InstabilityError, ModelCorruptError, ModelFormatError,
                         ModelVersionError, TrainingDivergedError)
from .nn import MLP, TrainConfig, forward, grad_input, train
from .oracle import (PARAM_NAMES, DomainBox, FluxSpectrum, HelioParams, OracleConfig,
                     generate_dataset, modulated_flux, rigidity_grid, solve_flux)
from .posterior import (SAMPLED_NAMES, FixedContext, PriorBox, SurrogatePosterior, chi_squared,
                        log_likelihood, log_posterior_and_grad, log_prior)
from .samplers import (Chain, ChainConfig, DualAvgState, dual_avg_update, leapfrog, nuts_step,
                       run_chain, rwmh_step)
from .surrogate import Surrogate, SurrogateRegressor, load_model, save_model

__all__ = [
    "Chain", "ChainConfig", "ConfigError", "DegenerateIntervalError", "DimensionError",
    "DomainBox", "DomainError", "DualAvgState", "FixedContext", "FluxSpectrum", "HelioParams",
    "InstabilityError", "MLP", "ModelCorruptError", "ModelFormatError", "ModelVersionError",
    "OracleConfig", "PARAM_NAMES", "PriorBox", "SAMPLED_NAMES", "Surrogate",
    "SurrogatePosterior", "SurrogateRegressor", "TrainConfig", "TrainingDivergedError",
    "autocorrelation", "chi_squared", "credible_interval_1d", "credible_region_2d",
    "dual_avg_update", "effective_sample_size", "forward", "generate_dataset", "grad_input",
    "leapfrog", "load_model", "log_likelihood", "log_posterior_and_grad", "log_prior",
    "modulated_flux", "nuts_step", "posterior_predictive", "rigidity_grid", "run_chain",
    "rwmh_step", "save_model", "solve_flux", "summarize", "train",
]
