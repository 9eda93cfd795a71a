"""LP and MILP solvers used by the tap optimizer."""
from .bnb import InfeasibleProblem, MipResult, branch_and_bound
from .simplex import BoundedLP, LPResult, solve_lp

__all__ = ["BoundedLP", "LPResult", "solve_lp", "branch_and_bound", "MipResult", "InfeasibleProblem"]
