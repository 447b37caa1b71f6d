"""Expected-utility maximization under a budget with state-dependent, possibly non-concave utilities."""

from .conjugate import ConjugateSolution, conjugate_at, selection_curves
from .envelope import ConcaveEnvelope, check_good_concavification, concavify, gap_functions
from .errors import *  # noqa: F401,F403
from .kernels import BACKEND
from .oracle import DiscreteInstance, brute_solve, discretize
from .solver import Problem, SolveReport, classify_case, eval_g, eval_J, feasibility, g_curve, solve
from .statespace import BenchmarkMap, ExpectationEngine, PricingKernel, StateDistribution, StateModel
from .utility import (
    PiecewiseUtility,
    UtilityFamily,
    affine_family,
    check_admissibility,
    custom_family,
    digital_family,
    eval_utility,
    s_shaped_family,
    two_piece_family,
)
from .varapp import VarScenario, closed_form_selection, modified_utility, thresholds, var_solve

__version__ = "0.1.0"
