"""Budget-limited MIQP feedback control simulated as a hybrid system."""

from .bnb import (SolverBudget, SolverResult, SolveStatus, WarmStart, certified_value,
                  repair_warm_start, solve_bnb)
from .cw import CwParams, control_matrix, cw_control_matrix, cw_stm, discretize, propagate
from .errors import (ConfigError, ControllerStarved, DimensionError, FlowDomainError,
                     HybridContractError, IndefiniteError, InfeasibleError, MiqpError,
                     NoIncumbentWithinBudget, QuadratureError, UnboundedError,
                     UnboundedIntegerError)
from .hybrid import (HybridState, HybridTrajectory, StabilityReport, flow, jump, lyapunov,
                     run_hybrid, stability_report, validate_trajectory, write_trajectory_csv)
from .miqp import MiqpProblem, MiqpSolution, check_feasibility, eval_objective
from .mpc import (MpcConfig, MpcDecisionLayout, build_mpc, extract_control, reformulate_l1,
                  shift_warm_start)
from .qp import QpResult, QpStatus, QpSubproblem, kkt_residual, solve_qp

__version__ = "0.1.0"
