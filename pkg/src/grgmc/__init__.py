"""Group GMC: convexity-preserving nonconvex penalization for grouped variable selection."""

from .design import GroupedDesign, StandardizationRecord, lambda_max, load_problem, standardize
from .path import LambdaGrid, cross_validate, make_grid, solution_path
from .penalties import GmcConfig, group_gmc_penalty, objective_value
from .pdhg import PdhgOptions, kkt_residual, pdhg_solve
from .simulate import compute_metrics, run_case, simulate_anova, theory_diagnostics

__version__ = "0.1.0"

__all__ = [
    "GroupedDesign", "StandardizationRecord", "lambda_max", "load_problem", "standardize",
    "LambdaGrid", "cross_validate", "make_grid", "solution_path",
    "GmcConfig", "group_gmc_penalty", "objective_value",
    "PdhgOptions", "kkt_residual", "pdhg_solve",
    "compute_metrics", "run_case", "simulate_anova", "theory_diagnostics",
]
