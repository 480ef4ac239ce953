import logging
import typing as tp

import numpy as np

from previewmpc import types
from previewmpc.errors import ConfigError, DimensionError
from previewmpc.solvers.status import Status
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9
STEP_TOL = 1e-12
ZERO_ROW_TOL = 1e-14


class QpProblem(TreeObject):
    """
    Strictly convex quadratic program

    ```
    min  ½ uᵀ Hess u + linᵀ u + const_term
    s.t. ineqA u ≤ ineqB
    ```
    """

    Hess: types.Matrix[np.ndarray]
    lin: types.Vector[np.ndarray]
    ineqA: types.Matrix[np.ndarray]
    ineqB: types.Vector[np.ndarray]
    const_term: float

    def __init__(
        self,
        Hess: tp.Any,
        lin: tp.Any,
        ineqA: tp.Any = None,
        ineqB: tp.Any = None,
        const_term: float = 0.0,
    ):
        super().__init__()

        lin = types.as_vector(lin, "lin")
        dim = lin.shape[0]
        Hess = types.as_matrix(Hess, "Hess", shape=(dim, dim))

        if ineqA is None:
            ineqA = np.zeros((0, dim))
            ineqB = np.zeros(0)

        ineqB = types.as_vector(ineqB, "ineqB")

        if ineqB.size == 0:
            ineqA = np.zeros((0, dim))
        else:
            ineqA = np.asarray(ineqA, dtype=np.float64).reshape(ineqB.shape[0], -1)

        if ineqA.shape[1] != dim:
            raise DimensionError(
                f"'ineqA' must have {dim} columns, got shape {ineqA.shape}"
            )

        self.Hess = 0.5 * (Hess + Hess.T)
        self.lin = lin
        self.ineqA = ineqA
        self.ineqB = ineqB
        self.const_term = float(const_term)

    @property
    def dim(self) -> int:
        return self.lin.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.ineqB.shape[0]

    def objective(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=np.float64)
        return float(0.5 * u @ self.Hess @ u + self.lin @ u + self.const_term)


class QpResult(TreeObject):
    u: types.Vector[np.ndarray]
    multipliers: types.Vector[np.ndarray]

    status: Status
    value: float
    kkt_residual: float
    iterations: int

    def __init__(
        self,
        status: Status,
        u: np.ndarray,
        multipliers: np.ndarray,
        value: float,
        kkt_residual: float,
        iterations: int,
    ):
        super().__init__()
        self.status = status
        self.u = u
        self.multipliers = multipliers
        self.value = value
        self.kkt_residual = kkt_residual
        self.iterations = iterations

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


def solve_qp(problem: QpProblem, max_iter: tp.Optional[int] = None) -> QpResult:
    """
    Solves a strictly convex QP with the dual active-set method of Goldfarb and
    Idnani.

    The method starts from the unconstrained minimizer and repeatedly adds the
    most violated constraint, dropping active constraints whose multiplier
    would turn negative. Every iterate is dual feasible, so the first primal
    feasible iterate is optimal, and a constraint that cannot be added
    certifies that the feasible set is empty. Ties are broken by the lowest
    constraint index which makes the result deterministic.

    Arguments:
        problem: the QP, `Hess` must be positive definite.
        max_iter: limit on add/drop steps, defaults to `10 * (rows + vars)`.

    Returns:
        A `QpResult`. For `INFEASIBLE` and `MAX_ITER` the last iterate is
        returned in `u`.
    """
    H = problem.Hess
    f = problem.lin
    d = problem.dim

    if max_iter is None:
        max_iter = 10 * (problem.n_constraints + d)

    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ConfigError("'Hess' must be symmetric positive definite")

    L_inv = np.linalg.solve(L, np.eye(d))
    H_inv = L_inv.T @ L_inv

    # normalized rows in `nᵀu ≥ b` form
    norms = np.linalg.norm(problem.ineqA, axis=1)
    zero_rows = norms <= ZERO_ROW_TOL

    if np.any(problem.ineqB[zero_rows] < -FEASIBILITY_TOL):
        logger.debug("qp has a violated constraint with a zero row")
        return _result(Status.INFEASIBLE, problem, -H_inv @ f, None, 0)

    rows = np.flatnonzero(~zero_rows)
    N_all = -(problem.ineqA[rows] / norms[rows, None])
    b_all = -(problem.ineqB[rows] / norms[rows])

    x = -H_inv @ f
    active: tp.List[int] = []
    duals = np.zeros(0)
    iterations = 0

    while True:
        slack = N_all @ x - b_all
        if active:
            slack[active] = np.inf

        if slack.size == 0 or slack.min() >= -FEASIBILITY_TOL:
            status = Status.OPTIMAL
            break

        p = int(np.argmin(slack))
        n_p = N_all[p]
        duals_plus = np.append(duals, 0.0)
        added = False

        while not added:
            if iterations >= max_iter:
                logger.debug("qp reached the iteration limit (%d)", max_iter)
                multipliers = _expand(duals, active, rows, norms, problem)
                return _result(Status.MAX_ITER, problem, x, multipliers, iterations)
            iterations += 1

            if active:
                N_act = N_all[active].T
                HN = H_inv @ N_act
                N_star = np.linalg.solve(N_act.T @ HN, HN.T)
                z = H_inv @ n_p - HN @ (N_star @ n_p)
                r = N_star @ n_p
            else:
                z = H_inv @ n_p
                r = np.zeros(0)

            # dual step length, blocked by an active multiplier reaching zero
            t1 = np.inf
            drop = None
            for j in range(r.shape[0]):
                if r[j] > STEP_TOL:
                    ratio = duals_plus[j] / r[j]
                    if ratio < t1:
                        t1 = ratio
                        drop = j

            # primal step length, reaching the boundary of constraint p
            curvature = float(z @ n_p)
            t2 = np.inf
            if np.linalg.norm(z) > STEP_TOL and curvature > STEP_TOL:
                t2 = -float(n_p @ x - b_all[p]) / curvature

            t = min(t1, t2)

            if not np.isfinite(t):
                logger.debug("qp constraint %d cannot be satisfied", int(rows[p]))
                multipliers = _expand(duals, active, rows, norms, problem)
                return _result(Status.INFEASIBLE, problem, x, multipliers, iterations)

            if np.isfinite(t2):
                x = x + t * z

            duals_plus[:-1] -= t * r
            duals_plus[-1] += t

            if t2 <= t1:
                active.append(p)
                duals = duals_plus
                added = True
            else:
                assert drop is not None
                del active[drop]
                duals_plus = np.delete(duals_plus, drop)

    if active:
        x, duals = _refine(H, f, N_all, b_all, active, x, duals)

    multipliers = _expand(duals, active, rows, norms, problem)

    logger.debug(
        "qp solved in %d steps with %d active constraints", iterations, len(active)
    )

    return _result(status, problem, x, multipliers, iterations)


def _refine(
    H: np.ndarray,
    f: np.ndarray,
    N_all: np.ndarray,
    b_all: np.ndarray,
    active: tp.List[int],
    x: np.ndarray,
    duals: np.ndarray,
) -> tp.Tuple[np.ndarray, np.ndarray]:
    # one direct solve of the KKT system of the final working set, kept only
    # when it lowers the residual of the accumulated iterate
    N_act = N_all[active]
    k, d = N_act.shape
    kkt = np.block([[H, -N_act.T], [N_act, np.zeros((k, k))]])
    rhs = np.concatenate([-f, b_all[active]])

    try:
        solution = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return x, duals

    x_new, duals_new = solution[:d], solution[d:]

    def residual(u: np.ndarray, lam: np.ndarray) -> float:
        stationarity = np.abs(H @ u + f - N_act.T @ lam).max()
        violation = max(0.0, -float((N_all @ u - b_all).min()))
        return max(float(stationarity), violation, max(0.0, -float(lam.min())))

    if residual(x_new, duals_new) < residual(x, duals):
        return x_new, duals_new
    return x, duals


def _expand(
    duals: np.ndarray,
    active: tp.List[int],
    rows: np.ndarray,
    norms: np.ndarray,
    problem: QpProblem,
) -> np.ndarray:
    # multipliers of the original (unnormalized) rows
    multipliers = np.zeros(problem.n_constraints)
    for value, index in zip(duals, active):
        original = rows[index]
        multipliers[original] = max(value, 0.0) / norms[original]
    return multipliers


def _result(
    status: Status,
    problem: QpProblem,
    u: np.ndarray,
    multipliers: tp.Optional[np.ndarray],
    iterations: int,
) -> QpResult:
    if multipliers is None:
        multipliers = np.zeros(problem.n_constraints)

    return QpResult(
        status=status,
        u=u,
        multipliers=multipliers,
        value=problem.objective(u),
        kkt_residual=(
            qp_kkt_residual(problem, u, multipliers)
            if status == Status.OPTIMAL
            else np.inf
        ),
        iterations=iterations,
    )


def qp_kkt_residual(problem: QpProblem, u: np.ndarray, multipliers: np.ndarray) -> float:
    """
    Largest of the stationarity, primal feasibility, dual sign and
    complementary slackness residuals of `(u, multipliers)`.
    """
    slack = problem.ineqB - problem.ineqA @ u
    gradient = problem.Hess @ u + problem.lin + problem.ineqA.T @ multipliers

    residuals = [
        float(np.abs(gradient).max(initial=0.0)),
        max(0.0, -float(slack.min(initial=0.0))),
        max(0.0, -float(multipliers.min(initial=0.0))),
        float(np.abs(multipliers * slack).max(initial=0.0)),
    ]
    return max(residuals)
