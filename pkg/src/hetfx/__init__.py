"""Characteristic-function tests for treatment effect heterogeneity.

The package tests whether a randomized experiment's treatment effects
vary across units. Without covariates, the workhorse statistic compares
the characteristic functions of within-group outcome differences, which
removes the average effect from the problem entirely; a location-shift
competitor with a plug-in effect estimate is included for comparison.
With covariates, outcomes are residualized per group and the squared ECF
distance between residual distributions is tested by permutation.
"""

from ._parallel import resolve_threads
from .oracle import DEFAULT_QUADRATURE, QuadratureConfig, l_quadrature_oracle
from .regression import LinearFit, NWConfig, NWFit, bandwidth_rule, \
    interaction_design, linear_interaction_fit, nw_fit, residualize_group_mean, \
    residualize_linear, residualize_nw
from .resampling import ResamplingPlan, TestReport, assignment_sampler, \
    bootstrap_test_l, ci_permutation_test, covariate_permutation_test, hkz_test, \
    permutation_test_l, welch_ci
from .sample import DegenerateSampleError, DegenerateVarianceError, \
    ExperimentSample, HetfxError, InputError, ResidualizedSample
from .simulation import DGPConfig, MonteCarloCell, MonteCarloResult, TestConfig, \
    VariationFlags, gen_cov, gen_nocov, generate, plain_statistic, \
    run_single_test, run_size_power, size_adjusted_power
from .stats import TStatResult, VarianceEstimate, d_theta_stat, diff_in_means, \
    ecf, hkz_stat, l_theta_stat, t_stat_test, zeta_hat

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_QUADRATURE",
    "DGPConfig",
    "DegenerateSampleError",
    "DegenerateVarianceError",
    "ExperimentSample",
    "HetfxError",
    "InputError",
    "LinearFit",
    "MonteCarloCell",
    "MonteCarloResult",
    "NWConfig",
    "NWFit",
    "QuadratureConfig",
    "ResamplingPlan",
    "ResidualizedSample",
    "TStatResult",
    "TestConfig",
    "TestReport",
    "VarianceEstimate",
    "VariationFlags",
    "assignment_sampler",
    "bandwidth_rule",
    "bootstrap_test_l",
    "ci_permutation_test",
    "covariate_permutation_test",
    "d_theta_stat",
    "diff_in_means",
    "ecf",
    "gen_cov",
    "gen_nocov",
    "generate",
    "hkz_stat",
    "hkz_test",
    "interaction_design",
    "l_quadrature_oracle",
    "l_theta_stat",
    "linear_interaction_fit",
    "nw_fit",
    "permutation_test_l",
    "plain_statistic",
    "residualize_group_mean",
    "residualize_linear",
    "residualize_nw",
    "resolve_threads",
    "run_single_test",
    "run_size_power",
    "size_adjusted_power",
    "t_stat_test",
    "welch_ci",
    "zeta_hat",
]
