"""Fitting: MAP, marginal-likelihood (Laplace) and NUTS full Bayes."""

from .diagnostics import ess_bulk, ess_tail, rhat, summarize_draws
from .hmc import auto_parametrization, fit_hmc
from .optimize import fit_map, fit_mmle
from .results import FitResult, SamplerConfig, load_fit, save_fit
