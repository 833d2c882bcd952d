"""Mixed-integer QP solver: active-set relaxations under branch and bound."""

from .bnb import (
    FIRST_FEASIBLE,
    INFEASIBLE_STATUS,
    NODE_LIMIT,
    OPTIMAL_STATUS,
    MiqpProblem,
    NumericalFailure,
    Solution,
    SolverOpts,
    SolveStats,
    TooManyBinaries,
    brute_force,
    solve,
)
from .qp import QPOptions, QPSolution, solve_qp

__all__ = [
    "FIRST_FEASIBLE",
    "INFEASIBLE_STATUS",
    "NODE_LIMIT",
    "OPTIMAL_STATUS",
    "MiqpProblem",
    "NumericalFailure",
    "QPOptions",
    "QPSolution",
    "Solution",
    "SolveStats",
    "SolverOpts",
    "TooManyBinaries",
    "brute_force",
    "solve",
    "solve_qp",
]
