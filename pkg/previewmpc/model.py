import logging
import typing as tp

import jax
import jax.numpy as jnp
import numpy as np

from previewmpc import types
from previewmpc.errors import ConfigError, DimensionError, DisturbanceBoundError
from previewmpc.polytope import SET_TOL, HPolytope, is_bounded
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12
FD_STEP = 1e-6
JACOBIAN_RTOL = 1e-5

Evaluator = tp.Callable[[np.ndarray, np.ndarray, np.ndarray], tp.Any]
JacobianEvaluator = tp.Callable[
    [np.ndarray, np.ndarray, np.ndarray], tp.Tuple[tp.Any, tp.Any, tp.Any]
]


class LinearDynamics(TreeObject):
    """Matrices of `x⁺ = Ax + Bu + B_w w`."""

    A: types.Matrix[np.ndarray]
    B: types.Matrix[np.ndarray]
    Bw: types.Matrix[np.ndarray]

    def __init__(self, A: tp.Any, B: tp.Any, Bw: tp.Any):
        super().__init__()

        A = types.as_matrix(A, "A")
        n = A.shape[0]

        if A.shape != (n, n):
            raise DimensionError(f"'A' must be square, got shape {A.shape}")

        B = np.asarray(B, dtype=np.float64)
        Bw = np.asarray(Bw, dtype=np.float64)

        self.A = A
        self.B = types.as_matrix(B.reshape(n, -1) if B.ndim < 2 else B, "B")
        self.Bw = types.as_matrix(Bw.reshape(n, -1) if Bw.ndim < 2 else Bw, "Bw")

        if self.B.shape[0] != n or self.Bw.shape[0] != n:
            raise DimensionError(
                f"'B' and 'Bw' must have {n} rows, got {self.B.shape} and {self.Bw.shape}"
            )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> int:
        return self.Bw.shape[1]

    def closed_loop(self, K: np.ndarray) -> np.ndarray:
        """Returns `A_K = A + BK`."""
        return self.A + self.B @ K


class DynamicsModel(TreeObject):
    """Discrete-time plant `x⁺ = f(x, u, w)` with dimensions `(n, m, q)`."""

    n: int
    m: int
    q: int
    name: str

    def __init__(self, n: int, m: int, q: int, name: str):
        super().__init__()

        if min(n, m, q) < 1:
            raise DimensionError(f"model dimensions must be positive, got n={n}, m={m}, q={q}")

        self.n = int(n)
        self.m = int(m)
        self.q = int(q)
        self.name = name

    @property
    def is_linear(self) -> bool:
        return False

    def evaluate(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError()


class LinearModel(DynamicsModel):
    dynamics: LinearDynamics

    def __init__(self, dynamics: LinearDynamics, name: str = "linear"):
        super().__init__(dynamics.n, dynamics.m, dynamics.q, name)
        self.dynamics = dynamics

    @classmethod
    def from_matrices(cls, A: tp.Any, B: tp.Any, Bw: tp.Any, name: str = "linear") -> "LinearModel":
        return cls(LinearDynamics(A, B, Bw), name=name)

    @property
    def is_linear(self) -> bool:
        return True

    def evaluate(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        lin = self.dynamics
        return lin.A @ x + lin.B @ u + lin.Bw @ w


class NonlinearModel(DynamicsModel):
    """
    Plant given by an evaluator `f(x, u, w)` and optionally by an evaluator of
    its Jacobians `(∂f/∂x, ∂f/∂u, ∂f/∂w)`.
    """

    f: Evaluator
    jacobians: tp.Optional[JacobianEvaluator]
    params: tp.Dict[str, tp.Any]

    def __init__(
        self,
        f: Evaluator,
        n: int,
        m: int,
        q: int,
        jacobians: tp.Optional[JacobianEvaluator] = None,
        name: str = "nonlinear",
        params: tp.Optional[tp.Dict[str, tp.Any]] = None,
    ):
        super().__init__(n, m, q, name)
        self.f = f
        self.jacobians = jacobians
        self.params = dict(params or {})

    def evaluate(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray:
        value = np.asarray(self.f(x, u, w), dtype=np.float64).reshape(-1)

        if value.shape[0] != self.n:
            raise DimensionError(
                f"model '{self.name}' returned {value.shape[0]} states, expected {self.n}"
            )

        return value


# --------------------------------------------------
# dynamics
# --------------------------------------------------


def step_dynamics(model: DynamicsModel, x: tp.Any, u: tp.Any, w: tp.Any) -> np.ndarray:
    """
    Evaluates `x⁺ = f(x, u, w)`.

    For linear models the result is `A @ x + B @ u + Bw @ w`, always summed in
    that order.

    Raises:
        DimensionError: if a vector does not match the model dimensions.
    """
    x = types.as_vector(x, "x", size=model.n)
    u = types.as_vector(u, "u", size=model.m)
    w = types.as_vector(w, "w", size=model.q)

    return model.evaluate(x, u, w)


def rollout(
    model: DynamicsModel, x0: tp.Any, inputs: tp.Any, disturbances: tp.Any
) -> np.ndarray:
    """Applies `step_dynamics` along input and disturbance sequences, returns
    the `len(inputs) + 1` visited states."""
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1, model.m)
    disturbances = np.asarray(disturbances, dtype=np.float64).reshape(-1, model.q)

    if inputs.shape[0] != disturbances.shape[0]:
        raise DimensionError(
            f"got {inputs.shape[0]} inputs but {disturbances.shape[0]} disturbances"
        )

    states = [types.as_vector(x0, "x0", size=model.n)]

    for u, w in zip(inputs, disturbances):
        states.append(step_dynamics(model, states[-1], u, w))

    return np.asarray(states)


def jacobian_linearize(
    model: DynamicsModel, x0: tp.Any, u0: tp.Any, w0: tp.Any
) -> LinearDynamics:
    """
    Linearizes the model around `(x0, u0, w0)`.

    Linear models return their own matrices. Nonlinear models use their
    analytic Jacobians when present, otherwise central finite differences with
    step `h = max(1e-6, 1e-6·|coordinate|)`. Evaluator errors propagate.
    """
    if isinstance(model, LinearModel):
        return model.dynamics

    x0 = types.as_vector(x0, "x0", size=model.n)
    u0 = types.as_vector(u0, "u0", size=model.m)
    w0 = types.as_vector(w0, "w0", size=model.q)

    if isinstance(model, NonlinearModel) and model.jacobians is not None:
        A, B, Bw = model.jacobians(x0, u0, w0)
        return LinearDynamics(
            types.as_matrix(A, "df/dx", shape=(model.n, model.n)),
            types.as_matrix(B, "df/du", shape=(model.n, model.m)),
            types.as_matrix(Bw, "df/dw", shape=(model.n, model.q)),
        )

    return LinearDynamics(*finite_difference_jacobians(model, x0, u0, w0))


def finite_difference_jacobians(
    model: DynamicsModel, x0: np.ndarray, u0: np.ndarray, w0: np.ndarray
) -> tp.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    def column_block(argument: int) -> np.ndarray:
        point = [x0, u0, w0]
        base = point[argument]
        columns = []

        for j in range(base.shape[0]):
            h = max(FD_STEP, FD_STEP * abs(base[j]))
            plus = [p.copy() for p in point]
            minus = [p.copy() for p in point]
            plus[argument][j] += h
            minus[argument][j] -= h

            columns.append((model.evaluate(*plus) - model.evaluate(*minus)) / (2.0 * h))

        return np.stack(columns, axis=1)

    return column_block(0), column_block(1), column_block(2)


class JacobianCheck(TreeObject):
    max_relative_error: float
    samples: int
    passed: bool

    def __init__(self, max_relative_error: float, samples: int, passed: bool):
        super().__init__()
        self.max_relative_error = max_relative_error
        self.samples = samples
        self.passed = passed


def check_jacobians(
    model: NonlinearModel, samples: int = 20, seed: int = 0, radius: float = 0.1
) -> JacobianCheck:
    """
    Compares the analytic Jacobians of a model against central finite
    differences at points sampled uniformly in a box of half width `radius`
    around the origin. Every entry must agree within `1e-5` relative.
    """
    if model.jacobians is None:
        raise ConfigError(f"model '{model.name}' has no analytic Jacobians to check")

    rng = np.random.default_rng(seed)
    worst = 0.0

    for _ in range(samples):
        x = rng.uniform(-radius, radius, model.n)
        u = rng.uniform(-radius, radius, model.m)
        w = rng.uniform(-radius, radius, model.q)

        analytic = model.jacobians(x, u, w)
        numeric = finite_difference_jacobians(model, x, u, w)

        for a, b in zip(analytic, numeric):
            a = np.asarray(a, dtype=np.float64)
            error = np.abs(a - b) / np.maximum(1.0, np.abs(a))
            worst = max(worst, float(error.max(initial=0.0)))

    return JacobianCheck(
        max_relative_error=worst, samples=samples, passed=worst <= JACOBIAN_RTOL
    )


# --------------------------------------------------
# builtin nonlinear plants
# --------------------------------------------------


def _jax_model(
    fun: tp.Callable[..., jnp.ndarray],
    n: int,
    m: int,
    q: int,
    name: str,
    params: tp.Dict[str, tp.Any],
) -> NonlinearModel:
    f_jit = jax.jit(fun)
    jac_jit = jax.jit(jax.jacfwd(fun, argnums=(0, 1, 2)))

    def f(x, u, w):
        return np.asarray(f_jit(x, u, w), dtype=np.float64)

    def jacobians(x, u, w):
        return tuple(np.asarray(J, dtype=np.float64) for J in jac_jit(x, u, w))

    return NonlinearModel(f, n, m, q, jacobians=jacobians, name=name, params=params)


def pendulum(
    dt: float = 0.05,
    gravity: float = 9.81,
    length: float = 1.0,
    mass: float = 1.0,
    damping: float = 0.1,
) -> NonlinearModel:
    """Damped pendulum, explicit Euler step, torque input and additive
    disturbance on both states."""

    def fun(x, u, w):
        theta, omega = x[0], x[1]
        acceleration = (
            -gravity / length * jnp.sin(theta)
            - damping * omega
            + u[0] / (mass * length**2)
        )
        return jnp.stack(
            [theta + dt * omega + w[0], omega + dt * acceleration + w[1]]
        )

    params = dict(dt=dt, gravity=gravity, length=length, mass=mass, damping=damping)
    return _jax_model(fun, 2, 1, 2, "pendulum", params)


def bilinear(a: tp.Any = 0.9, b: tp.Any = 1.0) -> NonlinearModel:
    """`x⁺ = a⊙x + b⊙u + x⊙w + w`, scalar or diagonal."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.broadcast_to(np.asarray(b, dtype=np.float64), a.shape).copy()
    a_j = jnp.asarray(a)
    b_j = jnp.asarray(b)

    def fun(x, u, w):
        return a_j * x + b_j * u + x * w + w

    n = a.shape[0]
    return _jax_model(fun, n, n, n, "bilinear", dict(a=a.tolist(), b=b.tolist()))


BUILTINS: tp.Dict[str, tp.Callable[..., NonlinearModel]] = {
    "pendulum": pendulum,
    "bilinear": bilinear,
}


def builtin_model(name: str, params: tp.Optional[tp.Mapping[str, tp.Any]] = None) -> NonlinearModel:
    if name not in BUILTINS:
        raise ConfigError(
            f"unknown builtin model '{name}', expected one of {sorted(BUILTINS)}"
        )
    try:
        return BUILTINS[name](**dict(params or {}))
    except TypeError as e:
        raise ConfigError(f"invalid parameters for builtin model '{name}': {e}")


# --------------------------------------------------
# weights and windows
# --------------------------------------------------


class CostWeights(TreeObject):
    """Stage cost weights of `‖x‖²_Q + ‖u‖²_R + ‖w‖²_S`."""

    Q: types.Matrix[np.ndarray]
    R: types.Matrix[np.ndarray]
    S: types.Matrix[np.ndarray]

    def __init__(self, Q: tp.Any, R: tp.Any, S: tp.Any):
        super().__init__()
        self.Q = check_weight(Q, "Q", definite=False)
        self.R = check_weight(R, "R", definite=True)
        self.S = check_weight(S, "S", definite=True)

    def stage_cost(self, x: tp.Any, u: tp.Any, w: tp.Optional[tp.Any] = None) -> float:
        """`‖x‖²_Q + ‖u‖²_R (+ ‖w‖²_S)`, the `w` term is left out when `w` is None."""
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        cost = x @ self.Q @ x + u @ self.R @ u

        if w is not None:
            w = np.asarray(w, dtype=np.float64)
            cost = cost + w @ self.S @ w

        return float(cost)


def check_weight(value: tp.Any, name: str, definite: bool) -> np.ndarray:
    M = types.as_matrix(value, name)

    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"'{name}' must be square, got shape {M.shape}")

    if np.abs(M - M.T).max(initial=0.0) > SYMMETRY_TOL:
        raise ConfigError(f"'{name}' must be symmetric")

    eigmin = float(np.linalg.eigvalsh(M).min())

    if definite and eigmin <= 0.0:
        raise ConfigError(f"'{name}' must be positive definite, min eigenvalue {eigmin:.3g}")
    if not definite and eigmin < -SYMMETRY_TOL:
        raise ConfigError(
            f"'{name}' must be positive semidefinite, min eigenvalue {eigmin:.3g}"
        )

    return M


class PreviewWindow(TreeObject):
    """
    Known disturbance values `w(k|k), …, w(k+N-1|k)` stored as an `N×q` array.

    When `W` is given every value is checked against it with tolerance `1e-9`.
    """

    values: types.Matrix[np.ndarray]
    W: tp.Optional[HPolytope]

    def __init__(self, values: tp.Any, W: tp.Optional[HPolytope] = None):
        super().__init__()

        values = types.as_matrix(values, "values")

        if W is not None:
            if values.shape[1] != W.dim:
                raise DimensionError(
                    f"window values have {values.shape[1]} channels, the disturbance set has {W.dim}"
                )
            for i, w in enumerate(values):
                if not W.contains_point(w, tol=SET_TOL):
                    raise DisturbanceBoundError(
                        f"preview value {i} = {w.tolist()} lies outside the disturbance set"
                    )

        self.values = values
        self.W = W

    @classmethod
    def zeros(cls, N: int, q: int, W: tp.Optional[HPolytope] = None) -> "PreviewWindow":
        return cls(np.zeros((N, q)), W)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]

    @property
    def head(self) -> np.ndarray:
        return self.values[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def shift_preview(
    window: PreviewWindow, w_incoming: tp.Any, W: tp.Optional[HPolytope] = None
) -> PreviewWindow:
    """
    Advances the window by one step: drops `w(k|k)` and appends the newly
    revealed value at the tail.

    Raises:
        DisturbanceBoundError: if `w_incoming` lies outside `W` (or the
            window's own disturbance set).
    """
    W = W if W is not None else window.W
    w_incoming = types.as_vector(w_incoming, "w_incoming", size=window.q)

    if W is not None and not W.contains_point(w_incoming, tol=SET_TOL):
        raise DisturbanceBoundError(
            f"incoming disturbance {w_incoming.tolist()} lies outside the disturbance set"
        )

    values = np.concatenate([window.values[1:], w_incoming[None, :]], axis=0)

    return window.replace(values=values, W=W)


class AugmentedState(TreeObject):
    """Plant state together with the current preview window."""

    x: types.Vector[np.ndarray]
    window: PreviewWindow

    def __init__(self, x: tp.Any, window: PreviewWindow):
        super().__init__()
        self.x = types.as_vector(x, "x")
        self.window = window

    def stacked(self) -> np.ndarray:
        """Returns `z = [x; w(k|k); …; w(k+N-1|k)]`."""
        return np.concatenate([self.x, self.window.values.reshape(-1)])


def preview_shift_matrices(N: int, q: int) -> tp.Tuple[np.ndarray, np.ndarray]:
    """
    Matrices of the window dynamics `𝐰⁺ = A_w 𝐰 + B_w w_new`: `A_w` shifts the
    blocks up by one and `B_w` writes the new value in the last block.
    """
    A_w = np.kron(np.eye(N, k=1), np.eye(q))
    B_w = np.zeros((N * q, q))
    B_w[(N - 1) * q :] = np.eye(q)
    return A_w, B_w


def augmented_system(lin: LinearDynamics, N: int) -> LinearDynamics:
    """
    Linear system of the augmented state `z = [x; 𝐰]` with input `u` and the
    newly revealed disturbance as its disturbance input.
    """
    n, m, q = lin.n, lin.m, lin.q
    A_w, B_w = preview_shift_matrices(N, q)

    F = np.zeros((n + N * q, n + N * q))
    F[:n, :n] = lin.A
    F[:n, n : n + q] = lin.Bw
    F[n:, n:] = A_w

    G_u = np.vstack([lin.B, np.zeros((N * q, m))])
    G_w = np.vstack([np.zeros((n, q)), B_w])

    return LinearDynamics(F, G_u, G_w)


# --------------------------------------------------
# validation
# --------------------------------------------------


class PcSetReport(TreeObject):
    nonempty: bool
    bounded: bool
    origin_interior: bool
    interior_margin: float

    def __init__(self, nonempty: bool, bounded: bool, origin_interior: bool, interior_margin: float):
        super().__init__()
        self.nonempty = nonempty
        self.bounded = bounded
        self.origin_interior = origin_interior
        self.interior_margin = interior_margin

    @property
    def passed(self) -> bool:
        return self.nonempty and self.bounded and self.origin_interior


def validate_pc_set(set: HPolytope) -> PcSetReport:
    """
    Checks that a set is nonempty, bounded and holds the origin strictly
    inside. The interior margin is the distance from the origin to the closest
    face (rows are unit norm).
    """
    nonempty = not set.empty
    bounded = nonempty and is_bounded(set)
    margin = float(set.g.min(initial=np.inf)) if nonempty else -np.inf

    return PcSetReport(
        nonempty=nonempty,
        bounded=bounded,
        origin_interior=nonempty and margin > 0.0,
        interior_margin=margin,
    )


class AssumptionReport(TreeObject):
    sets: tp.Dict[str, PcSetReport]
    equilibrium_residual: float
    disturbance_lipschitz: tp.Optional[float]
    continuity_verified: bool

    def __init__(
        self,
        sets: tp.Dict[str, PcSetReport],
        equilibrium_residual: float,
        disturbance_lipschitz: tp.Optional[float],
    ):
        super().__init__()
        self.sets = sets
        self.equilibrium_residual = equilibrium_residual
        self.disturbance_lipschitz = disturbance_lipschitz
        self.continuity_verified = disturbance_lipschitz is not None

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.sets.values()) and self.equilibrium_residual <= 1e-9


def check_assumptions(
    model: DynamicsModel, X: HPolytope, U: HPolytope, W: HPolytope
) -> AssumptionReport:
    """
    Offline checks on the problem data: `X`, `U`, `W` are PC-sets, the origin is
    an equilibrium and the plant is continuous in `w`. The continuity modulus
    `‖B_w‖₂·s` is only known for linear models, nonlinear ones are reported as
    unverified.
    """
    for name, s, size in (("X", X, model.n), ("U", U, model.m), ("W", W, model.q)):
        if s.dim != size:
            raise DimensionError(f"'{name}' has dimension {s.dim}, expected {size}")

    sets = {"X": validate_pc_set(X), "U": validate_pc_set(U), "W": validate_pc_set(W)}
    origin = step_dynamics(model, np.zeros(model.n), np.zeros(model.m), np.zeros(model.q))

    lipschitz = (
        float(np.linalg.norm(model.dynamics.Bw, 2))
        if isinstance(model, LinearModel)
        else None
    )

    report = AssumptionReport(
        sets=sets,
        equilibrium_residual=float(np.abs(origin).max()),
        disturbance_lipschitz=lipschitz,
    )

    for name, r in sets.items():
        if not r.passed:
            logger.warning("set '%s' is not a PC-set: %s", name, r.to_dict())
    if lipschitz is None:
        logger.info("continuity in w of model '%s' is not verified", model.name)

    return report
