import logging
import typing as tp

import numpy as np

from previewmpc import types
from previewmpc.errors import DimensionError
from previewmpc.solvers.status import Status
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-11
FEASIBILITY_TOL = 1e-9


class LpProblem(TreeObject):
    """Linear program `max cᵀx s.t. Hx ≤ g` over a free variable `x ∈ Rᵈ`."""

    c: types.Vector[np.ndarray]
    H: types.Matrix[np.ndarray]
    g: types.Vector[np.ndarray]

    def __init__(self, c: tp.Any, H: tp.Any, g: tp.Any):
        """
        Arguments:
            c: objective direction, a d-vector.
            H: p×d constraint matrix.
            g: p-vector of right hand sides.
        """
        super().__init__()

        c = types.as_vector(c, "c")
        g = types.as_vector(g, "g")
        H = np.asarray(H, dtype=np.float64)

        if H.size == 0:
            H = H.reshape(g.shape[0], c.shape[0])

        check_dimensions(c, H, g)

        self.c = c
        self.H = H
        self.g = g

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.g.shape[0]


class LpResult(TreeObject):
    x: types.Vector[np.ndarray]
    y: types.Vector[np.ndarray]

    status: Status
    value: float
    kkt_residual: float
    iterations: int

    def __init__(
        self,
        status: Status,
        x: np.ndarray,
        y: np.ndarray,
        value: float,
        kkt_residual: float,
        iterations: int,
    ):
        super().__init__()
        self.status = status
        self.x = x
        self.y = y
        self.value = value
        self.kkt_residual = kkt_residual
        self.iterations = iterations

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


class _Tableau:
    """
    Canonical form of `A y = b, y ≥ 0` with respect to the current basis.

    `A` and `b` are kept reduced (the basic columns form an identity) so reduced
    costs are `cost - cost[basis] @ A`.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray, basis: tp.List[int]) -> None:
        self.A = A
        self.b = b
        self.basis = basis

    def reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        return cost - cost[self.basis] @ self.A

    def objective(self, cost: np.ndarray) -> float:
        return float(cost[self.basis] @ self.b)

    def pivot(self, row: int, column: int) -> None:
        pivot_row = self.A[row] / self.A[row, column]
        pivot_rhs = self.b[row] / self.A[row, column]

        factors = self.A[:, column].copy()
        factors[row] = 0.0

        self.A -= np.outer(factors, pivot_row)
        self.b -= factors * pivot_rhs
        self.A[row] = pivot_row
        self.b[row] = pivot_rhs
        self.basis[row] = column

    def delete_row(self, row: int) -> None:
        self.A = np.delete(self.A, row, axis=0)
        self.b = np.delete(self.b, row)
        del self.basis[row]


def _run_simplex(
    tableau: _Tableau, cost: np.ndarray, n_allowed: int, max_iter: int
) -> tp.Tuple[Status, int]:
    """Minimizes `cost` over the tableau with Bland's rule, only the first
    `n_allowed` columns may enter the basis."""
    for iteration in range(max_iter):
        reduced = tableau.reduced_costs(cost)
        basic = set(tableau.basis)

        entering = next(
            (
                j
                for j in range(n_allowed)
                if j not in basic and reduced[j] < -PIVOT_TOL
            ),
            None,
        )

        if entering is None:
            return Status.OPTIMAL, iteration

        column = tableau.A[:, entering]
        positive = np.flatnonzero(column > PIVOT_TOL)

        if positive.size == 0:
            return Status.UNBOUNDED, iteration

        ratios = tableau.b[positive] / column[positive]
        best = ratios.min()
        ties = positive[ratios <= best + PIVOT_TOL]
        # Bland: among tied rows leave the smallest basic index
        leaving = min(ties, key=lambda row: tableau.basis[row])

        tableau.pivot(int(leaving), entering)

    return Status.MAX_ITER, max_iter


def solve_lp(problem: LpProblem, max_iter: tp.Optional[int] = None) -> LpResult:
    """
    Solves `max cᵀx s.t. Hx ≤ g` with a dense two-phase simplex method.

    The simplex runs on the dual `min gᵀy s.t. Hᵀy = c, y ≥ 0`, which has only
    `d` equality rows, and the primal optimizer is read off the optimal basis.
    Bland's rule is used for both the entering and the leaving variable so the
    method cannot cycle and is deterministic.

    Arguments:
        problem: the LP to solve.
        max_iter: pivot limit per phase, defaults to `50 * (p + d) + 100`.

    Returns:
        An `LpResult`. For `UNBOUNDED` problems `value` is `+inf`, for
        `INFEASIBLE` problems `value` is `-inf`; `x` is `nan` in both cases.
    """
    c, H, g = problem.c, problem.H, problem.g
    p, d = H.shape

    if max_iter is None:
        max_iter = 50 * (p + d) + 100

    if p == 0:
        if np.all(np.abs(c) <= PIVOT_TOL):
            return _result(Status.OPTIMAL, problem, np.zeros(d), np.zeros(0), 0)
        return _result(Status.UNBOUNDED, problem, None, None, 0)

    # phase one: artificial basis for Hᵀy = c, rows signed so the rhs is nonnegative
    signs = np.where(c < 0.0, -1.0, 1.0)
    A = np.hstack([H.T * signs[:, None], np.eye(d)])
    b = np.abs(c).astype(np.float64)
    tableau = _Tableau(A, b, list(range(p, p + d)))

    phase_one_cost = np.concatenate([np.zeros(p), np.ones(d)])
    status, iterations = _run_simplex(tableau, phase_one_cost, p + d, max_iter)

    if status == Status.MAX_ITER:
        logger.debug("simplex phase one hit the pivot limit (%d)", max_iter)
        return _result(Status.MAX_ITER, problem, None, None, iterations)

    if tableau.objective(phase_one_cost) > FEASIBILITY_TOL * (1.0 + np.abs(c).max()):
        # the dual is infeasible: the primal is either unbounded or infeasible
        if np.any(c != 0.0):
            feasibility = solve_lp(LpProblem(np.zeros(d), H, g), max_iter=max_iter)
            status = (
                Status.UNBOUNDED
                if feasibility.status == Status.OPTIMAL
                else Status.INFEASIBLE
            )
        else:
            status = Status.INFEASIBLE
        return _result(status, problem, None, None, iterations)

    # drive the remaining (zero level) artificials out of the basis
    row = 0
    while row < len(tableau.basis):
        if tableau.basis[row] >= p:
            candidates = np.flatnonzero(np.abs(tableau.A[row, :p]) > PIVOT_TOL)
            if candidates.size > 0:
                tableau.pivot(row, int(candidates[0]))
            else:
                # linearly dependent row of Hᵀ
                tableau.delete_row(row)
                continue
        row += 1

    # phase two, artificials never re-enter
    phase_two_cost = np.concatenate([g, np.zeros(d)])
    status, phase_two_iterations = _run_simplex(tableau, phase_two_cost, p, max_iter)
    iterations += phase_two_iterations

    if status == Status.UNBOUNDED:
        # unbounded dual means an empty primal feasible set
        return _result(Status.INFEASIBLE, problem, None, None, iterations)

    if status == Status.MAX_ITER:
        logger.debug("simplex phase two hit the pivot limit (%d)", max_iter)
        return _result(Status.MAX_ITER, problem, None, None, iterations)

    y = np.zeros(p)
    basis = np.asarray(tableau.basis, dtype=int)
    y[basis] = np.maximum(tableau.b, 0.0)

    if basis.size > 0:
        x = np.linalg.lstsq(H[basis], g[basis], rcond=None)[0]
    else:
        x = np.zeros(d)

    return _result(Status.OPTIMAL, problem, x, y, iterations)


def _result(
    status: Status,
    problem: LpProblem,
    x: tp.Optional[np.ndarray],
    y: tp.Optional[np.ndarray],
    iterations: int,
) -> LpResult:
    d = problem.dim
    p = problem.n_constraints

    if status != Status.OPTIMAL:
        value = (
            np.inf
            if status == Status.UNBOUNDED
            else -np.inf
            if status == Status.INFEASIBLE
            else np.nan
        )
        return LpResult(
            status=status,
            x=np.full(d, np.nan),
            y=np.full(p, np.nan),
            value=float(value),
            kkt_residual=np.inf,
            iterations=iterations,
        )

    assert x is not None and y is not None

    return LpResult(
        status=status,
        x=x,
        y=y,
        value=float(problem.c @ x),
        kkt_residual=lp_kkt_residual(problem, x, y),
        iterations=iterations,
    )


def lp_kkt_residual(problem: LpProblem, x: np.ndarray, y: np.ndarray) -> float:
    """
    Largest of the primal feasibility, dual feasibility (sign and stationarity)
    and complementary slackness residuals of a primal/dual pair.
    """
    slack = problem.g - problem.H @ x
    residuals = [
        max(0.0, -float(slack.min(initial=0.0))),
        max(0.0, -float(y.min(initial=0.0))),
        float(np.abs(problem.H.T @ y - problem.c).max(initial=0.0)),
        float(np.abs(y * slack).max(initial=0.0)),
    ]
    return max(residuals)


def check_dimensions(c: np.ndarray, H: np.ndarray, g: np.ndarray) -> None:
    if H.ndim != 2 or H.shape != (g.shape[0], c.shape[0]):
        raise DimensionError(
            f"LP data must satisfy H: p×d, g: p, c: d, got H {H.shape}, g {g.shape}, c {c.shape}"
        )
