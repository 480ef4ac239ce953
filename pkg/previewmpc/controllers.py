import enum
import logging
import typing as tp

import numpy as np

from previewmpc import types
from previewmpc.errors import ConfigError, DisturbanceBoundError
from previewmpc.model import LinearModel, PreviewWindow, jacobian_linearize, rollout
from previewmpc.ocp import OcpSolution, OcpSpec, condense_affine, solve_ocp
from previewmpc.polytope import SET_TOL
from previewmpc.solvers import Status, solve_qp
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)


class ControllerKind(str, enum.Enum):
    PREVIEW = "preview"
    NOMINAL = "nominal"
    DRMPC = "drmpc"
    TERMINAL = "terminal"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, value: tp.Union[str, "ControllerKind"]) -> "ControllerKind":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(
                f"unknown controller '{value}', expected one of {[k.value for k in cls]}"
            )


class ControlStep(TreeObject):
    u: types.Vector[np.ndarray]
    solution: tp.Optional[OcpSolution]
    fallback: bool

    def __init__(self, u: np.ndarray, solution: tp.Optional[OcpSolution], fallback: bool):
        super().__init__()
        self.u = u
        self.solution = solution
        self.fallback = fallback


# --------------------------------------------------
# control laws
# --------------------------------------------------


def terminal_law(K: tp.Any, x: tp.Any) -> np.ndarray:
    """Local controller `u = Kx`."""
    K = np.asarray(K, dtype=np.float64).reshape(-1, np.size(x))
    return K @ np.asarray(x, dtype=np.float64).reshape(-1)


def _first_input_or_fallback(
    spec: OcpSpec, x: np.ndarray, solution: OcpSolution, name: str
) -> np.ndarray:
    if solution.optimal:
        return solution.first_input

    logger.warning(
        "%s OCP returned '%s' at x=%s, applying the terminal law as fallback",
        name,
        solution.status,
        np.array2string(x, precision=4),
    )
    return terminal_law(spec.terminal.K, x)


def preview_mpc_step(
    spec: OcpSpec,
    x: tp.Any,
    window: PreviewWindow,
    warm: tp.Optional[tp.Any] = None,
) -> tp.Tuple[np.ndarray, OcpSolution]:
    """
    Solves the OCP with the exact preview window and returns the first optimal
    input with the full solution. When the OCP is not solved to optimality the
    terminal law `Kx` is returned and a warning is logged.
    """
    x = types.as_vector(x, "x", size=spec.model.n)
    solution = solve_ocp(spec, x, window, warm=warm)

    return _first_input_or_fallback(spec, x, solution, "preview"), solution


def nominal_mpc_step(
    spec: OcpSpec, x: tp.Any, warm: tp.Optional[tp.Any] = None
) -> tp.Tuple[np.ndarray, OcpSolution]:
    """Preview MPC with the window forced to zero, the disturbance is ignored
    in the prediction and in the cost."""
    x = types.as_vector(x, "x", size=spec.model.n)
    window = PreviewWindow.zeros(spec.N, spec.model.q)
    solution = solve_ocp(spec, x, window, warm=warm)

    return _first_input_or_fallback(spec, x, solution, "nominal"), solution


def matched_split(B: np.ndarray, Bw: np.ndarray, w: np.ndarray) -> tp.Tuple[np.ndarray, np.ndarray]:
    """
    Splits `B_w w` into the part the input can cancel and the rest.

    Returns:
        `(u_ff, residual)` with `u_ff = -B⁺B_w w` and
        `residual = (I - BB⁺)B_w w`.
    """
    B_pinv = np.linalg.pinv(B)
    disturbance = Bw @ w

    u_ff = -B_pinv @ disturbance
    residual = disturbance - B @ (B_pinv @ disturbance)

    return u_ff, residual


def drmpc_step(
    spec: OcpSpec, x: tp.Any, w_now: tp.Any
) -> tp.Tuple[np.ndarray, OcpSolution]:
    """
    Feedforward compensation followed by a nominal OCP on the residual.

    The applied input is `u = u_c + u_ff` with `u_ff = -B⁺B_w w_now`. `u_c`
    solves a nominal OCP whose first prediction step carries the unmatched
    residual `(I - BB⁺)B_w w_now` and whose later steps assume `w = 0`. The
    input constraint applies to the total input and the cost penalizes `u_c`.
    Only the current disturbance is used, not the preview.

    Nonlinear plants are predicted with their linearization at the origin.
    """
    model = spec.model
    x = types.as_vector(x, "x", size=model.n)
    w_now = types.as_vector(w_now, "w_now", size=model.q)

    if spec.W is not None and not spec.W.contains_point(w_now, tol=SET_TOL):
        raise DisturbanceBoundError(
            f"disturbance {w_now.tolist()} lies outside the disturbance set"
        )

    lin = (
        model.dynamics
        if isinstance(model, LinearModel)
        else jacobian_linearize(model, np.zeros(model.n), np.zeros(model.m), np.zeros(model.q))
    )
    N, m = spec.N, model.m

    u_ff, residual = matched_split(lin.B, lin.Bw, w_now)

    offsets = [np.zeros(model.n) for _ in range(N)]
    offsets[0] = residual
    u_offset = np.zeros((N, m))
    u_offset[0] = u_ff

    qp = condense_affine(
        spec,
        x,
        As=[lin.A] * N,
        Bs=[lin.B] * N,
        offsets=offsets,
        disturbance_cost=0.0,
        u_offset=u_offset,
    )
    result = solve_qp(qp)

    u_c = result.u.reshape(N, m)
    disturbances = np.zeros((N, model.q))
    disturbances[0] = w_now

    solution = OcpSolution(
        u_seq=u_c + u_offset,
        x_seq=rollout(model, x, u_c + u_offset, disturbances),
        value=result.value if result.status != Status.INFEASIBLE else np.inf,
        status=result.status,
        kkt_residual=result.kkt_residual,
        iterations=result.iterations,
    )

    return _first_input_or_fallback(spec, x, solution, "drmpc"), solution


# --------------------------------------------------
# policies
# --------------------------------------------------


class Controller(TreeObject):
    """Receding horizon policy mapping `(x, window)` to an input."""

    spec: OcpSpec
    kind: ControllerKind

    def __init__(self, spec: OcpSpec):
        super().__init__()
        self.spec = spec

    def __call__(
        self, x: tp.Any, window: PreviewWindow, warm: tp.Optional[tp.Any] = None
    ) -> ControlStep:
        raise NotImplementedError()


class PreviewMpc(Controller):
    kind = ControllerKind.PREVIEW

    def __call__(self, x, window, warm=None) -> ControlStep:
        u, solution = preview_mpc_step(self.spec, x, window, warm=warm)
        return ControlStep(u, solution, fallback=not solution.optimal)


class NominalMpc(Controller):
    kind = ControllerKind.NOMINAL

    def __call__(self, x, window, warm=None) -> ControlStep:
        u, solution = nominal_mpc_step(self.spec, x, warm=warm)
        return ControlStep(u, solution, fallback=not solution.optimal)


class Drmpc(Controller):
    kind = ControllerKind.DRMPC

    def __call__(self, x, window, warm=None) -> ControlStep:
        u, solution = drmpc_step(self.spec, x, window.head)
        return ControlStep(u, solution, fallback=not solution.optimal)


class TerminalLaw(Controller):
    kind = ControllerKind.TERMINAL

    def __call__(self, x, window, warm=None) -> ControlStep:
        return ControlStep(terminal_law(self.spec.terminal.K, x), None, fallback=False)


CONTROLLERS: tp.Dict[ControllerKind, tp.Type[Controller]] = {
    ControllerKind.PREVIEW: PreviewMpc,
    ControllerKind.NOMINAL: NominalMpc,
    ControllerKind.DRMPC: Drmpc,
    ControllerKind.TERMINAL: TerminalLaw,
}


def make_controller(kind: tp.Union[str, ControllerKind], spec: OcpSpec) -> Controller:
    return CONTROLLERS[ControllerKind.parse(kind)](spec)
