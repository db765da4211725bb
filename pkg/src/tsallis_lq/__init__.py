"""Tsallis-entropy-regularised linear-quadratic control with multiplicative noise."""
from .dp_core import ThetaMatrix, model_based_pi, policy_evaluate, policy_improve, q_value
from .estimators import (DataDrivenPolicyIteration, IVQFunctionRegressor, ModelBasedPolicyIteration,
                         TsallisLQRegulator)
from .exact_solver import QuadraticValue, SolverConfig, SolverError, solve, value_at
from .lq_model import LqModel, NoiseChannel, QGaussianPolicy, load_model, save_model, step
from .lstd_iv import PeConfig, approximate_pi
from .mv_portfolio import MarketSpec, MvProblem, benchmark_problem, simulate_wealth, to_lq
from .qcalc import QGaussian, q_exp, q_log

__version__ = "0.1.0"

__all__ = [
    "DataDrivenPolicyIteration", "IVQFunctionRegressor", "LqModel", "MarketSpec",
    "ModelBasedPolicyIteration", "MvProblem", "NoiseChannel", "PeConfig", "QGaussian",
    "QGaussianPolicy", "QuadraticValue", "SolverConfig", "SolverError", "ThetaMatrix",
    "TsallisLQRegulator", "approximate_pi", "load_model", "model_based_pi", "benchmark_problem",
    "policy_evaluate", "policy_improve", "q_exp", "q_log", "q_value", "save_model",
    "simulate_wealth", "solve", "step", "to_lq", "value_at",
]
