from .lp import LpProblem, LpResult, lp_kkt_residual, solve_lp
from .qp import QpProblem, QpResult, qp_kkt_residual, solve_qp
from .status import Status

__all__ = [
    "LpProblem",
    "LpResult",
    "QpProblem",
    "QpResult",
    "Status",
    "lp_kkt_residual",
    "qp_kkt_residual",
    "solve_lp",
    "solve_qp",
]
