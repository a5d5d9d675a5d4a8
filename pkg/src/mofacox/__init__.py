"""Factor-adjusted decorrelated score (FADS) test for a covariate group in a Cox model."""

from ._backend import BACKEND
from .survival import (FeatureAssembly, RiskSetAggregates, SurvivalDataset,
                       break_ties, hessian_block, hessian_operator,
                       neg_log_partial_likelihood, riskset_aggregates, score)
from .errors import (DegenerateInformationError, InfeasibleProjectionError,
                     LinearPredictorOverflow, MofaCoxError, NoEventsError, StageError,
                     TiedEventTimesError)
from .factors import FactorDecomposition, estimate_num_factors, fit_factors, sample_covariance
from .lasso import PenalizedFit, cross_validate_lambda1, fit_lasso_cox, rate_lambda1
from .fads import (FadsConfig, TestResult, decorrelated_score, estimate_projection,
                   rate_lambda2, run_fads_test)
from .simulation import SimConfig, SimReport, run_power_study, theoretical_power
from .io import InputError, ingest

__version__ = "0.1.0"
