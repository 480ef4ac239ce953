import csv
import logging
import typing as tp
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from previewmpc import types
from previewmpc.console import render_table
from previewmpc.controllers import ControllerKind, make_controller
from previewmpc.errors import ConfigError, DimensionError, InfeasibleError, MaxIterError
from previewmpc.model import (
    CostWeights,
    DynamicsModel,
    PreviewWindow,
    rollout,
    shift_preview,
    step_dynamics,
)
from previewmpc.ocp import OcpSolution, OcpSpec, candidate_inputs, constraint_margin
from previewmpc.polytope import HPolytope, project_point
from previewmpc.solvers import Status
from previewmpc.synthesis import IssLevelSet, TerminalIngredients
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)

CANDIDATE_TOL = 1e-7
DECREASE_TOL = 1e-8
DISTURBANCE_KINDS = ("constant", "sinusoid", "uniform", "sequence")
COMPARED = (ControllerKind.NOMINAL, ControllerKind.DRMPC, ControllerKind.PREVIEW)


class Scenario(TreeObject):
    """
    Closed loop experiment: initial state, number of steps `T`, horizon `N`,
    controller and disturbance generator description.

    The disturbance mapping has a `kind` among `constant` (`value`),
    `sinusoid` (per channel `amplitude`, `period`, `phase`), `uniform`
    (`seed`) and `sequence` (`values`).
    """

    x0: types.Vector[np.ndarray]
    T: int
    N: int
    controller: ControllerKind
    disturbance: tp.Dict[str, tp.Any]
    seeds: tp.Optional[tp.List[int]]

    def __init__(
        self,
        x0: tp.Any,
        T: int,
        N: int,
        controller: tp.Union[str, ControllerKind] = ControllerKind.PREVIEW,
        disturbance: tp.Optional[tp.Mapping[str, tp.Any]] = None,
        seeds: tp.Optional[tp.Sequence[int]] = None,
    ):
        super().__init__()

        disturbance = dict(disturbance or {"kind": "constant", "value": 0.0})

        if disturbance.get("kind") not in DISTURBANCE_KINDS:
            raise ConfigError(
                f"disturbance 'kind' must be one of {DISTURBANCE_KINDS}, got {disturbance.get('kind')!r}"
            )
        if int(T) < 1 or int(N) < 1:
            raise ConfigError(f"'T' and 'N' must be positive, got T={T}, N={N}")

        self.x0 = types.as_vector(x0, "x0")
        self.T = int(T)
        self.N = int(N)
        self.controller = ControllerKind.parse(controller)
        self.disturbance = disturbance
        self.seeds = None if seeds is None else [int(s) for s in seeds]

    @classmethod
    def from_config(cls, config: tp.Mapping[str, tp.Any]) -> "Scenario":
        missing = [key for key in ("x0", "T", "N") if key not in config]
        if missing:
            raise ConfigError(f"scenario is missing fields {missing}")

        return cls(
            x0=config["x0"],
            T=config["T"],
            N=config["N"],
            controller=config.get("controller", ControllerKind.PREVIEW),
            disturbance=config.get("disturbance", None),
            seeds=config.get("seeds", None),
        )

    def with_seed(self, seed: int) -> "Scenario":
        disturbance = dict(self.disturbance)
        disturbance["seed"] = int(seed)
        return self.replace(disturbance=disturbance)


# --------------------------------------------------
# disturbances
# --------------------------------------------------


class DisturbanceRealization(TreeObject):
    values: types.Matrix[np.ndarray]
    clipped: int

    def __init__(self, values: np.ndarray, clipped: int):
        super().__init__()
        self.values = values
        self.clipped = clipped


def generate_disturbances(
    config: tp.Mapping[str, tp.Any], W: HPolytope, length: int
) -> DisturbanceRealization:
    """
    Generates `length` disturbance values from a generator description and
    clips them onto `W` by Euclidean projection. The number of clipped values
    is recorded and logged.

    Uniform samples use `jax.random` with one `PRNGKey(seed)` split across the
    channels, so a seed always produces the same stream.
    """
    q = W.dim
    kind = config.get("kind")
    t = np.arange(length, dtype=np.float64)

    if kind == "constant":
        value = np.broadcast_to(np.asarray(config.get("value", 0.0), dtype=np.float64), (q,))
        values = np.tile(value, (length, 1))
    elif kind == "sinusoid":
        amplitude = _channel_param(config, "amplitude", q, None)
        period = _channel_param(config, "period", q, None)
        phase = _channel_param(config, "phase", q, 0.0)
        if np.any(period <= 0.0):
            raise ConfigError("sinusoid 'period' must be positive")
        values = amplitude * np.sin(2.0 * np.pi * t[:, None] / period + phase)
    elif kind == "uniform":
        lo, hi = W.bounding_box()
        keys = jax.random.split(jax.random.PRNGKey(int(config.get("seed", 0))), q)
        values = np.stack(
            [
                np.asarray(
                    jax.random.uniform(
                        keys[j], (length,), minval=lo[j], maxval=hi[j], dtype=jnp.float64
                    )
                )
                for j in range(q)
            ],
            axis=1,
        )
    elif kind == "sequence":
        values = np.asarray(config.get("values", []), dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != q:
            raise DimensionError(
                f"disturbance sequence must have shape (length, {q}), got {values.shape}"
            )
        if values.shape[0] < length:
            raise DimensionError(
                f"disturbance sequence has {values.shape[0]} values, {length} are needed"
            )
        values = values[:length].copy()
    else:
        raise ConfigError(f"unknown disturbance kind {kind!r}")

    clipped = 0
    for i, w in enumerate(values):
        if not W.contains_point(w):
            values[i] = project_point(W, w)
            clipped += 1

    if clipped:
        logger.warning("clipped %d of %d disturbance values onto W", clipped, length)

    return DisturbanceRealization(values=values, clipped=clipped)


def _channel_param(
    config: tp.Mapping[str, tp.Any], name: str, q: int, default: tp.Optional[float]
) -> np.ndarray:
    if name not in config:
        if default is None:
            raise ConfigError(f"sinusoid disturbance needs '{name}'")
        return np.full(q, default)

    return np.broadcast_to(np.asarray(config[name], dtype=np.float64), (q,)).copy()


# --------------------------------------------------
# trace
# --------------------------------------------------


class ClosedLoopTrace(TreeObject):
    """
    Record of a closed loop run. Arrays are indexed by step `k`; `x` also holds
    the final state `x(T)`.
    """

    x: types.Matrix[np.ndarray]
    u: types.Matrix[np.ndarray]
    w: types.Matrix[np.ndarray]
    stage_cost: types.Vector[np.ndarray]
    value: types.Vector[np.ndarray]
    candidate_margin: types.Vector[np.ndarray]
    terminal_states: types.Matrix[np.ndarray]
    window_norms: types.Vector[np.ndarray]

    status: tp.List[str]
    candidate_feasible: tp.List[tp.Optional[bool]]
    fallback: tp.List[bool]
    controller: ControllerKind
    clipped: int
    max_violation: float

    def __init__(
        self,
        x: np.ndarray,
        u: np.ndarray,
        w: np.ndarray,
        stage_cost: np.ndarray,
        value: np.ndarray,
        status: tp.List[str],
        candidate_feasible: tp.List[tp.Optional[bool]],
        candidate_margin: np.ndarray,
        terminal_states: np.ndarray,
        window_norms: np.ndarray,
        fallback: tp.List[bool],
        controller: ControllerKind,
        clipped: int,
        max_violation: float,
    ):
        super().__init__()
        self.x = x
        self.u = u
        self.w = w
        self.stage_cost = stage_cost
        self.value = value
        self.status = status
        self.candidate_feasible = candidate_feasible
        self.candidate_margin = candidate_margin
        self.terminal_states = terminal_states
        self.window_norms = window_norms
        self.fallback = fallback
        self.controller = controller
        self.clipped = clipped
        self.max_violation = max_violation

    @property
    def T(self) -> int:
        return self.u.shape[0]

    @property
    def fallback_count(self) -> int:
        return int(sum(self.fallback))

    def summary(self) -> tp.Dict[str, tp.Any]:
        return {
            "controller": self.controller.value,
            "T": self.T,
            "running_cost": running_cost(self),
            "max_violation": self.max_violation,
            "fallback_count": self.fallback_count,
            "clipped": self.clipped,
            "all_optimal": all(s == Status.OPTIMAL.value for s in self.status),
            "all_candidates_feasible": all(
                f is not False for f in self.candidate_feasible
            ),
            "final_state_norm": float(np.linalg.norm(self.x[-1])),
        }

    def render_summary(self, color: bool = True) -> str:
        rows = [(key, value) for key, value in self.summary().items()]
        return render_table(["metric", "value"], rows, title="closed loop", color=color)

    def to_csv(self, path: tp.Union[str, Path]) -> Path:
        """Writes one row per step with columns `k, x_*, u_*, w_*, stage_cost,
        value, status, candidate_feasible`."""
        path = Path(path)
        n, m, q = self.x.shape[1], self.u.shape[1], self.w.shape[1]

        header = (
            ["k"]
            + [f"x_{i + 1}" for i in range(n)]
            + [f"u_{i + 1}" for i in range(m)]
            + [f"w_{i + 1}" for i in range(q)]
            + ["stage_cost", "value", "status", "candidate_feasible"]
        )

        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)

            for k in range(self.T):
                feasible = self.candidate_feasible[k]
                writer.writerow(
                    [k]
                    + [repr(float(v)) for v in self.x[k]]
                    + [repr(float(v)) for v in self.u[k]]
                    + [repr(float(v)) for v in self.w[k]]
                    + [
                        repr(float(self.stage_cost[k])),
                        repr(float(self.value[k])),
                        self.status[k],
                        "" if feasible is None else str(feasible).lower(),
                    ]
                )

        return path

    def replay(self, model: DynamicsModel) -> np.ndarray:
        """Recomputes the states from `x(0)` and the recorded inputs and
        disturbances."""
        return rollout(model, self.x[0], self.u, self.w)


def running_cost(trace: ClosedLoopTrace) -> float:
    """Sum of the disturbance free stage costs `‖x‖²_Q + ‖u‖²_R`."""
    return float(np.sum(trace.stage_cost))


# --------------------------------------------------
# simulation
# --------------------------------------------------


class CandidateCheck(tp.NamedTuple):
    feasible: bool
    margin: float


def check_candidate_feasibility(
    solution: OcpSolution,
    x_next: tp.Any,
    next_window: PreviewWindow,
    spec: OcpSpec,
) -> CandidateCheck:
    """
    Builds the shifted candidate `{u₁, …, u_{N-1}, K·x_N}` from the optimal
    solution at step `k`, rolls it out from the realized `x(k+1)` under the
    window seen at `k+1` and checks every OCP constraint including the
    terminal set.

    Returns:
        The verdict and the smallest constraint slack (negative when violated).
    """
    inputs = candidate_inputs(solution, spec.terminal.K)
    states = rollout(spec.model, x_next, inputs, next_window.values)
    margin = constraint_margin(spec, states, inputs)

    return CandidateCheck(feasible=margin >= -CANDIDATE_TOL, margin=margin)


def _max_violation(spec: OcpSpec, x: np.ndarray, u: np.ndarray) -> float:
    violations = [spec.X.violation(s) for s in x] + [spec.U.violation(v) for v in u]
    return max(0.0, float(max(violations)))


def simulate(
    scenario: Scenario,
    spec: OcpSpec,
    controller: tp.Optional[tp.Union[str, ControllerKind]] = None,
    disturbances: tp.Optional[DisturbanceRealization] = None,
) -> ClosedLoopTrace:
    """
    Runs the receding horizon loop for `scenario.T` steps.

    At every step the controller sees the exact window `w(k), …, w(k+N-1)`,
    the plant is stepped with the true `w(k)` and the window is advanced with
    `shift_preview`. For the preview controller the shifted candidate sequence
    is checked at every transition.

    Arguments:
        scenario: the experiment.
        spec: the OCP, its horizon must equal `scenario.N`.
        controller: overrides `scenario.controller`.
        disturbances: a precomputed realization of length `T + N`, generated
            from the scenario when omitted.

    Raises:
        InfeasibleError: if the OCP is infeasible at `k = 0`.
        MaxIterError: if the solver hits its iteration limit at `k = 0`.
    """
    if spec.W is None:
        raise ConfigError("simulation needs the disturbance set 'W' in the OCP spec")
    if scenario.N != spec.N:
        raise DimensionError(f"scenario horizon {scenario.N} differs from the OCP horizon {spec.N}")

    kind = ControllerKind.parse(controller or scenario.controller)
    policy = make_controller(kind, spec)
    model, W, N, T = spec.model, spec.W, spec.N, scenario.T

    x = types.as_vector(scenario.x0, "x0", size=model.n)

    if disturbances is None:
        disturbances = generate_disturbances(scenario.disturbance, W, T + N)

    w_all = disturbances.values
    if w_all.shape != (T + N, model.q):
        raise DimensionError(
            f"disturbance realization has shape {w_all.shape}, expected {(T + N, model.q)}"
        )

    window = PreviewWindow(w_all[:N], W)
    warm = None

    xs, us, stage_costs, values = [x], [], [], []
    statuses, feasible, margins, terminal_states, window_norms, fallback = [], [], [], [], [], []

    for k in range(T):
        step = policy(x, window, warm)
        solution = step.solution

        if k == 0 and solution is not None and not solution.optimal:
            if solution.status == Status.MAX_ITER:
                raise MaxIterError(f"OCP hit the iteration limit at k=0 from x0={x.tolist()}")
            raise InfeasibleError(f"OCP is infeasible at k=0 from x0={x.tolist()}")

        u = step.u
        x_next = step_dynamics(model, x, u, w_all[k])
        next_window = shift_preview(window, w_all[k + N], W)

        if kind == ControllerKind.PREVIEW and solution is not None and solution.optimal:
            check = check_candidate_feasibility(solution, x_next, next_window, spec)
            feasible.append(check.feasible)
            margins.append(check.margin)
            warm = candidate_inputs(solution, spec.terminal.K)
        else:
            feasible.append(None)
            margins.append(np.nan)
            warm = None

        us.append(u)
        stage_costs.append(spec.weights.stage_cost(x, u))
        window_norms.append(window.norm())
        fallback.append(step.fallback)

        if solution is not None:
            values.append(solution.value)
            statuses.append(solution.status.value)
            terminal_states.append(solution.terminal_state)
        else:
            values.append(spec.terminal.terminal_cost(x))
            statuses.append("terminal")
            terminal_states.append(np.full(model.n, np.nan))

        x = x_next
        window = next_window
        xs.append(x)

    trace = ClosedLoopTrace(
        x=np.asarray(xs),
        u=np.asarray(us),
        w=w_all[:T].copy(),
        stage_cost=np.asarray(stage_costs),
        value=np.asarray(values),
        status=statuses,
        candidate_feasible=feasible,
        candidate_margin=np.asarray(margins),
        terminal_states=np.asarray(terminal_states),
        window_norms=np.asarray(window_norms),
        fallback=fallback,
        controller=kind,
        clipped=disturbances.clipped,
        max_violation=_max_violation(spec, np.asarray(xs), np.asarray(us)),
    )

    if trace.fallback_count:
        logger.warning(
            "%s controller fell back to the terminal law in %d of %d steps",
            kind.value,
            trace.fallback_count,
            T,
        )

    logger.info(
        "simulated %d steps with the %s controller, running cost %.6g",
        T,
        kind.value,
        running_cost(trace),
    )

    return trace


# --------------------------------------------------
# diagnostics
# --------------------------------------------------


class IssDecreaseLog(TreeObject):
    """
    Per transition `k → k+1`: `delta_value = V(k+1) - V(k)`, the terminal
    predicted state weight `‖x*(k+N|k)‖²_Delta`, the window norm and a flag
    for increases while the terminal predicted state is outside the level set.
    Transitions without two optimal solves hold `nan` and are never flagged.
    """

    delta_value: types.Vector[np.ndarray]
    terminal_weight: types.Vector[np.ndarray]
    window_norm: types.Vector[np.ndarray]
    flagged: tp.List[bool]

    def __init__(
        self,
        delta_value: np.ndarray,
        terminal_weight: np.ndarray,
        window_norm: np.ndarray,
        flagged: tp.List[bool],
    ):
        super().__init__()
        self.delta_value = delta_value
        self.terminal_weight = terminal_weight
        self.window_norm = window_norm
        self.flagged = flagged

    @property
    def n_flagged(self) -> int:
        return int(sum(self.flagged))

    def max_increase(self) -> float:
        finite = self.delta_value[np.isfinite(self.delta_value)]
        return float(finite.max(initial=-np.inf))


def iss_decrease_log(
    trace: ClosedLoopTrace,
    ing: TerminalIngredients,
    weights: CostWeights,
    level_set: tp.Optional[IssLevelSet] = None,
) -> IssDecreaseLog:
    """
    Monitors the decrease of the optimal value along a trace. A transition is
    flagged when `ΔV ≥ 0` (beyond `1e-8`) and the terminal predicted state lies
    outside `level_set`; without a level set every increase is flagged.
    """
    T = trace.T
    optimal = [s == Status.OPTIMAL.value for s in trace.status]

    delta = np.full(max(T - 1, 0), np.nan)
    terminal_weight = np.full(T, np.nan)
    flagged = [False] * max(T - 1, 0)

    for k in range(T):
        if optimal[k]:
            x_N = trace.terminal_states[k]
            terminal_weight[k] = float(x_N @ ing.Delta @ x_N)

    for k in range(T - 1):
        if not (optimal[k] and optimal[k + 1]):
            continue

        delta[k] = trace.value[k + 1] - trace.value[k]

        if delta[k] > DECREASE_TOL:
            outside = level_set is None or not level_set.contains(trace.terminal_states[k])
            flagged[k] = outside

    log = IssDecreaseLog(
        delta_value=delta,
        terminal_weight=terminal_weight,
        window_norm=trace.window_norms.copy(),
        flagged=flagged,
    )

    if log.n_flagged:
        logger.info("value increased outside the level set in %d steps", log.n_flagged)

    return log


# --------------------------------------------------
# comparison
# --------------------------------------------------


class ComparisonTable(TreeObject):
    """Running costs per seed (sorted) for the nominal, DRMPC and preview
    controllers under identical disturbance streams."""

    seeds: tp.List[int]
    costs: tp.Dict[str, tp.List[float]]
    traces: tp.Dict[int, tp.Dict[str, ClosedLoopTrace]]

    def __init__(
        self,
        seeds: tp.List[int],
        costs: tp.Dict[str, tp.List[float]],
        traces: tp.Dict[int, tp.Dict[str, ClosedLoopTrace]],
    ):
        super().__init__()
        self.seeds = seeds
        self.costs = costs
        self.traces = traces

    @property
    def means(self) -> tp.Dict[str, float]:
        return {kind: float(np.mean(values)) for kind, values in self.costs.items()}

    def rows(self) -> tp.List[tp.List[tp.Any]]:
        kinds = [k.value for k in COMPARED]
        rows: tp.List[tp.List[tp.Any]] = [
            [seed] + [self.costs[kind][i] for kind in kinds]
            for i, seed in enumerate(self.seeds)
        ]
        rows.append(["mean"] + [self.means[kind] for kind in kinds])
        return rows

    def to_csv(self, path: tp.Union[str, Path]) -> Path:
        path = Path(path)

        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["seed"] + [k.value for k in COMPARED])
            for row in self.rows():
                writer.writerow(
                    [row[0]] + [repr(float(v)) for v in row[1:]]
                )

        return path

    def render(self, color: bool = True) -> str:
        return render_table(
            ["seed"] + [k.value for k in COMPARED],
            self.rows(),
            title="running cost",
            float_format="{:.3f}",
            color=color,
        )


def _compare_seed(
    scenario: Scenario, spec: OcpSpec, seed: int
) -> tp.Tuple[int, tp.Dict[str, ClosedLoopTrace]]:
    assert spec.W is not None

    seeded = scenario.with_seed(seed)
    realization = generate_disturbances(seeded.disturbance, spec.W, seeded.T + seeded.N)

    traces = {
        kind.value: simulate(seeded, spec, controller=kind, disturbances=realization)
        for kind in COMPARED
    }

    reference = traces[ControllerKind.PREVIEW.value].w
    for kind, trace in traces.items():
        if not np.array_equal(trace.w, reference):
            raise RuntimeError(f"controller '{kind}' saw a different disturbance stream")

    return seed, traces


def compare_controllers(
    scenario: Scenario,
    spec: OcpSpec,
    seeds: tp.Sequence[int],
    jobs: int = 1,
) -> ComparisonTable:
    """
    Paired comparison of the nominal, DRMPC and preview controllers. For every
    seed one disturbance realization is generated and fed to all three
    controllers. Seeds run on a thread pool of `jobs` workers, results are
    sorted by seed.

    Raises:
        InfeasibleError: if any controller is infeasible at `k = 0`.
    """
    seeds = sorted(int(s) for s in seeds)

    if not seeds:
        raise ConfigError("compare needs at least one seed")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(lambda s: _compare_seed(scenario, spec, s), seeds))
    else:
        results = [_compare_seed(scenario, spec, s) for s in seeds]

    results.sort(key=lambda item: item[0])
    traces = {seed: per_kind for seed, per_kind in results}
    costs = {
        kind.value: [running_cost(traces[seed][kind.value]) for seed in seeds]
        for kind in COMPARED
    }

    table = ComparisonTable(seeds=seeds, costs=costs, traces=traces)

    logger.info(
        "compared controllers over %d seeds, mean running costs %s", len(seeds), table.means
    )

    return table
