import logging
import typing as tp

import numpy as np

from previewmpc import types
from previewmpc.config import SystemConfig
from previewmpc.errors import CertificationError, ConfigError, DimensionError, DisturbanceBoundError
from previewmpc.model import (
    CostWeights,
    DynamicsModel,
    LinearModel,
    PreviewWindow,
    jacobian_linearize,
    rollout,
    step_dynamics,
)
from previewmpc.polytope import SET_TOL, HPolytope
from previewmpc.solvers import QpProblem, Status, solve_qp
from previewmpc.synthesis import TerminalIngredients, verify_assumption4
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)

SL_MAX_PASSES = 20
SL_TOL = 1e-8


class OcpSpec(TreeObject):
    """
    Finite horizon problem with known in-horizon disturbance

    ```
    min  Σᵢ ‖xᵢ‖²_Q + ‖uᵢ‖²_R + ‖wᵢ‖²_S + ‖x_N‖²_P
    s.t. xᵢ₊₁ = f(xᵢ, uᵢ, wᵢ),  xᵢ ∈ X (i < N),  uᵢ ∈ U,  x_N ∈ Xf
    ```
    """

    model: DynamicsModel
    N: int
    X: HPolytope
    U: HPolytope
    W: tp.Optional[HPolytope]
    weights: CostWeights
    terminal: TerminalIngredients

    def __init__(
        self,
        model: DynamicsModel,
        N: int,
        X: HPolytope,
        U: HPolytope,
        weights: CostWeights,
        terminal: TerminalIngredients,
        W: tp.Optional[HPolytope] = None,
        stability_mode: bool = True,
    ):
        """
        Arguments:
            model: the plant.
            N: prediction horizon, at least 1.
            X: state constraint set.
            U: input constraint set.
            weights: stage cost weights.
            terminal: terminal ingredients.
            W: disturbance set used to check preview windows.
            stability_mode: certify the terminal ingredients against the
                linearization at the origin and the constraint sets, and
                reject them when the certificate fails. Without `W` the
                attached certificate is used.
        """
        super().__init__()

        if int(N) < 1:
            raise ConfigError(f"horizon 'N' must be at least 1, got {N}")

        if X.dim != model.n or U.dim != model.m:
            raise DimensionError(
                f"constraint sets have dimensions ({X.dim}, {U.dim}), expected ({model.n}, {model.m})"
            )
        if W is not None and W.dim != model.q:
            raise DimensionError(f"'W' has dimension {W.dim}, expected {model.q}")
        if terminal.K.shape != (model.m, model.n):
            raise DimensionError(
                f"terminal gain has shape {terminal.K.shape}, expected {(model.m, model.n)}"
            )

        if stability_mode:
            terminal = _certified(model, X, U, W, weights, terminal)

        self.model = model
        self.N = int(N)
        self.X = X
        self.U = U
        self.W = W
        self.weights = weights
        self.terminal = terminal

    @classmethod
    def from_system(
        cls, system: SystemConfig, terminal: TerminalIngredients, N: int, **kwargs
    ) -> "OcpSpec":
        return cls(
            model=system.model,
            N=N,
            X=system.X,
            U=system.U,
            weights=system.weights,
            terminal=terminal,
            W=system.W,
            **kwargs,
        )


class QpForm(QpProblem):
    """
    Condensed OCP in the stacked input `u = [u₀; …; u_{N-1}]`.

    Predicted states are `x = free_response + input_response @ u`, stacked as
    `[x₀; …; x_N]`. Constraint rows are ordered as states (`i < N`), inputs and
    terminal set.
    """

    free_response: types.Vector[np.ndarray]
    input_response: types.Matrix[np.ndarray]
    N: int

    def __init__(
        self,
        Hess: np.ndarray,
        lin: np.ndarray,
        const_term: float,
        ineqA: np.ndarray,
        ineqB: np.ndarray,
        free_response: np.ndarray,
        input_response: np.ndarray,
        N: int,
    ):
        super().__init__(Hess, lin, ineqA, ineqB, const_term=const_term)
        self.free_response = free_response
        self.input_response = input_response
        self.N = N

    def predicted_states(self, u: np.ndarray) -> np.ndarray:
        states = self.free_response + self.input_response @ np.asarray(u).reshape(-1)
        return states.reshape(self.N + 1, -1)


class OcpSolution(TreeObject):
    u_seq: types.Matrix[np.ndarray]
    x_seq: types.Matrix[np.ndarray]

    value: float
    status: Status
    kkt_residual: float
    iterations: int

    def __init__(
        self,
        u_seq: np.ndarray,
        x_seq: np.ndarray,
        value: float,
        status: Status,
        kkt_residual: float,
        iterations: int,
    ):
        super().__init__()
        self.u_seq = u_seq
        self.x_seq = x_seq
        self.value = value
        self.status = status
        self.kkt_residual = kkt_residual
        self.iterations = iterations

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL

    @property
    def first_input(self) -> np.ndarray:
        return self.u_seq[0]

    @property
    def terminal_state(self) -> np.ndarray:
        return self.x_seq[-1]


def _certified(
    model: DynamicsModel,
    X: HPolytope,
    U: HPolytope,
    W: tp.Optional[HPolytope],
    weights: CostWeights,
    terminal: TerminalIngredients,
) -> TerminalIngredients:
    # stored certificates come from files, so they are recomputed when possible
    if W is not None:
        lin = jacobian_linearize(model, np.zeros(model.n), np.zeros(model.m), np.zeros(model.q))
        certificate = verify_assumption4(terminal, lin, weights, X, U, W)
        terminal = terminal.replace(certificate=certificate)
    elif terminal.certificate is None:
        raise CertificationError("terminal ingredients carry no certificate and no 'W' is given")

    certificate = terminal.certificate
    if not certificate.certified:
        raise CertificationError(
            f"terminal ingredients are not certified: {certificate.to_dict()}"
        )
    return terminal


# --------------------------------------------------
# condensing
# --------------------------------------------------


def condense_affine(
    spec: OcpSpec,
    x0: np.ndarray,
    As: tp.Sequence[np.ndarray],
    Bs: tp.Sequence[np.ndarray],
    offsets: tp.Sequence[np.ndarray],
    disturbance_cost: float,
    u_offset: tp.Optional[np.ndarray] = None,
) -> QpForm:
    """Condenses `xᵢ₊₁ = Aᵢxᵢ + Bᵢuᵢ + cᵢ`. The inputs constrained to `U` are
    `uᵢ + u_offsetᵢ`."""
    N, n, m = spec.N, spec.model.n, spec.model.m

    free = np.zeros((N + 1, n))
    gamma = np.zeros((N + 1, n, N * m))
    free[0] = x0

    for i in range(N):
        free[i + 1] = As[i] @ free[i] + offsets[i]
        gamma[i + 1] = As[i] @ gamma[i]
        gamma[i + 1][:, i * m : (i + 1) * m] += Bs[i]

    gamma = gamma.reshape((N + 1) * n, N * m)
    free = free.reshape(-1)

    P = spec.terminal.P
    Q_bar = np.kron(np.eye(N + 1), spec.weights.Q)
    Q_bar[N * n :, N * n :] = P
    R_bar = np.kron(np.eye(N), spec.weights.R)

    Hess = 2.0 * (gamma.T @ Q_bar @ gamma + R_bar)
    lin = 2.0 * gamma.T @ Q_bar @ free
    const_term = float(free @ Q_bar @ free + disturbance_cost)

    rows = []
    rhs = []

    X, U, Xf = spec.X, spec.U, spec.terminal.Xf

    for i in range(N):
        block = slice(i * n, (i + 1) * n)
        rows.append(X.H @ gamma[block])
        rhs.append(X.g - X.H @ free[block])

    if u_offset is None:
        u_offset = np.zeros((N, m))

    for i in range(N):
        selector = np.zeros((m, N * m))
        selector[:, i * m : (i + 1) * m] = np.eye(m)
        rows.append(U.H @ selector)
        rhs.append(U.g - U.H @ u_offset[i])

    terminal = slice(N * n, (N + 1) * n)
    rows.append(Xf.H @ gamma[terminal])
    rhs.append(Xf.g - Xf.H @ free[terminal])

    return QpForm(
        Hess=Hess,
        lin=lin,
        const_term=const_term,
        ineqA=np.vstack(rows),
        ineqB=np.concatenate(rhs),
        free_response=free,
        input_response=gamma,
        N=N,
    )


def condense(spec: OcpSpec, x0: tp.Any, window: PreviewWindow) -> QpForm:
    """
    Eliminates the predicted states of a linear model,
    `xᵢ = Aⁱx₀ + Σⱼ Aⁱ⁻¹⁻ʲ(Buⱼ + B_w wⱼ)`. The disturbance terms, including
    `Σᵢ‖wᵢ‖²_S`, enter `lin` and `const_term`, so the QP objective equals the
    OCP cost for every input sequence.
    """
    model = spec.model

    if not isinstance(model, LinearModel):
        raise ConfigError("condense needs a linear model, use solve_ocp for nonlinear plants")

    x0 = types.as_vector(x0, "x0", size=model.n)
    values = _check_window(spec, window)
    lin = model.dynamics

    return condense_affine(
        spec,
        x0,
        As=[lin.A] * spec.N,
        Bs=[lin.B] * spec.N,
        offsets=[lin.Bw @ w for w in values],
        disturbance_cost=_disturbance_cost(spec.weights, values),
    )


def _disturbance_cost(weights: CostWeights, values: np.ndarray) -> float:
    return float(np.einsum("ti,ij,tj->", values, weights.S, values))


def _check_window(spec: OcpSpec, window: PreviewWindow) -> np.ndarray:
    if window.N != spec.N:
        raise DimensionError(f"preview window has length {window.N}, expected {spec.N}")
    if window.q != spec.model.q:
        raise DimensionError(
            f"preview window has {window.q} channels, expected {spec.model.q}"
        )

    if spec.W is not None and window.W is None:
        for i, w in enumerate(window.values):
            if not spec.W.contains_point(w, tol=SET_TOL):
                raise DisturbanceBoundError(
                    f"preview value {i} = {w.tolist()} lies outside the disturbance set"
                )

    return window.values


# --------------------------------------------------
# evaluation
# --------------------------------------------------


def trajectory_cost(
    weights: CostWeights,
    terminal: TerminalIngredients,
    x_seq: tp.Any,
    u_seq: tp.Any,
    w_seq: tp.Any,
) -> float:
    """Evaluates `Σᵢ ‖xᵢ‖²_Q + ‖uᵢ‖²_R + ‖wᵢ‖²_S + ‖x_N‖²_P` directly from the
    trajectory."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    u_seq = np.asarray(u_seq, dtype=np.float64)
    w_seq = np.asarray(w_seq, dtype=np.float64)

    stages = sum(
        weights.stage_cost(x, u, w) for x, u, w in zip(x_seq[:-1], u_seq, w_seq)
    )
    return float(stages + terminal.terminal_cost(x_seq[-1]))


def constraint_margin(spec: OcpSpec, x_seq: tp.Any, u_seq: tp.Any) -> float:
    """
    Smallest slack of all OCP constraints along a trajectory: states `i < N` in
    `X`, inputs in `U` and the final state in `Xf`. Negative values are
    violations.
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    u_seq = np.asarray(u_seq, dtype=np.float64)
    Xf = spec.terminal.Xf

    margins = [-spec.X.violation(x) for x in x_seq[:-1]]
    margins += [-spec.U.violation(u) for u in u_seq]
    margins.append(-Xf.violation(x_seq[-1]) if not Xf.empty else -np.inf)

    return float(min(margins))


def candidate_inputs(solution: OcpSolution, K: tp.Any) -> np.ndarray:
    """Shifted sequence `{u₁, …, u_{N-1}, K·x_N}` built from an optimal
    solution."""
    K = np.asarray(K, dtype=np.float64)
    tail = K @ solution.terminal_state
    return np.vstack([solution.u_seq[1:], tail[None, :]])


# --------------------------------------------------
# solve
# --------------------------------------------------


def solve_ocp(
    spec: OcpSpec,
    x0: tp.Any,
    window: PreviewWindow,
    warm: tp.Optional[tp.Any] = None,
) -> OcpSolution:
    """
    Solves the OCP from `x0` with the preview `window`.

    Linear models are condensed and solved as a single QP. Nonlinear models use
    successive linearization around the current input guess (`warm` when
    given, zeros otherwise), stopping when the input update has norm at most
    `1e-8` or after 20 passes with status `MAX_ITER`.

    Arguments:
        spec: the problem.
        x0: current state.
        window: exact preview of the next `N` disturbances.
        warm: optional `N×m` initial input guess for nonlinear models.

    Returns:
        An `OcpSolution`, its status is never raised. `x_seq` is the rollout
        of `u_seq` through the model and `value` the OCP cost along it.
    """
    model = spec.model
    x0 = types.as_vector(x0, "x0", size=model.n)
    values = _check_window(spec, window)

    if isinstance(model, LinearModel):
        qp = condense(spec, x0, window)
        result = solve_qp(qp)
        return _solution(spec, x0, values, result.u, result.status, result.kkt_residual, result.iterations)

    return _successive_linearization(spec, x0, values, warm)


def _successive_linearization(
    spec: OcpSpec, x0: np.ndarray, values: np.ndarray, warm: tp.Optional[tp.Any]
) -> OcpSolution:
    model = spec.model
    N, m = spec.N, model.m

    u_bar = (
        np.zeros((N, m))
        if warm is None
        else np.asarray(warm, dtype=np.float64).reshape(N, m)
    )
    iterations = 0
    kkt_residual = np.inf

    for sl_pass in range(SL_MAX_PASSES):
        x_bar = rollout(model, x0, u_bar, values)
        As, Bs, offsets = [], [], []

        for i in range(N):
            lin = jacobian_linearize(model, x_bar[i], u_bar[i], values[i])
            f_bar = step_dynamics(model, x_bar[i], u_bar[i], values[i])
            As.append(lin.A)
            Bs.append(lin.B)
            offsets.append(f_bar - lin.A @ x_bar[i] - lin.B @ u_bar[i])

        qp = condense_affine(
            spec,
            x0,
            As,
            Bs,
            offsets,
            disturbance_cost=_disturbance_cost(spec.weights, values),
        )
        result = solve_qp(qp)
        iterations += result.iterations
        kkt_residual = result.kkt_residual

        if result.status != Status.OPTIMAL:
            logger.debug("successive linearization pass %d: qp %s", sl_pass, result.status)
            return _solution(spec, x0, values, u_bar, result.status, np.inf, iterations)

        u_next = result.u.reshape(N, m)
        change = float(np.linalg.norm(u_next - u_bar))
        u_bar = u_next

        logger.debug("successive linearization pass %d: input change %.3g", sl_pass, change)

        if change <= SL_TOL:
            return _solution(spec, x0, values, u_bar, Status.OPTIMAL, kkt_residual, iterations)

    return _solution(spec, x0, values, u_bar, Status.MAX_ITER, kkt_residual, iterations)


def _solution(
    spec: OcpSpec,
    x0: np.ndarray,
    values: np.ndarray,
    u: np.ndarray,
    status: Status,
    kkt_residual: float,
    iterations: int,
) -> OcpSolution:
    u_seq = np.asarray(u, dtype=np.float64).reshape(spec.N, spec.model.m)
    x_seq = rollout(spec.model, x0, u_seq, values)

    value = (
        trajectory_cost(spec.weights, spec.terminal, x_seq, u_seq, values)
        if status != Status.INFEASIBLE
        else np.inf
    )

    return OcpSolution(
        u_seq=u_seq,
        x_seq=x_seq,
        value=value,
        status=status,
        kkt_residual=kkt_residual,
        iterations=iterations,
    )
