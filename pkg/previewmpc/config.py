import logging
import typing as tp
from pathlib import Path

import numpy as np
import yaml

from previewmpc import types
from previewmpc.errors import ConfigError, DimensionError
from previewmpc.model import (
    CostWeights,
    DynamicsModel,
    LinearDynamics,
    LinearModel,
    builtin_model,
    check_weight,
    jacobian_linearize,
)
from previewmpc.polytope import HPolytope
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)

PathLike = tp.Union[str, Path]
ConfigLike = tp.Union[PathLike, tp.Mapping[str, tp.Any]]

DEFAULT_LAMBDA = 2.0


class SystemConfig(TreeObject):
    """Plant, constraint sets, stage cost weights and the terminal cost design
    parameters `Delta` and `lam`."""

    model: DynamicsModel
    X: HPolytope
    U: HPolytope
    W: HPolytope
    weights: CostWeights
    Delta: types.Matrix[np.ndarray]
    lam: float

    def __init__(
        self,
        model: DynamicsModel,
        X: HPolytope,
        U: HPolytope,
        W: HPolytope,
        weights: CostWeights,
        Delta: tp.Optional[tp.Any] = None,
        lam: float = DEFAULT_LAMBDA,
    ):
        super().__init__()

        for name, s, size in (("X", X, model.n), ("U", U, model.m), ("W", W, model.q)):
            if s.dim != size:
                raise DimensionError(f"'{name}' has dimension {s.dim}, expected {size}")

        for name, M, size in (
            ("Q", weights.Q, model.n),
            ("R", weights.R, model.m),
            ("S", weights.S, model.q),
        ):
            if M.shape != (size, size):
                raise DimensionError(
                    f"'{name}' must have shape {(size, size)}, got {M.shape}"
                )

        if Delta is None:
            Delta = np.eye(model.n)

        Delta = types.as_matrix(Delta, "Delta", shape=(model.n, model.n))

        self.model = model
        self.X = X
        self.U = U
        self.W = W
        self.weights = weights
        self.Delta = check_weight(Delta, "Delta", definite=True)
        self.lam = float(lam)

    def linearization(self) -> LinearDynamics:
        """Jacobian linearization at the origin."""
        model = self.model
        return jacobian_linearize(
            model, np.zeros(model.n), np.zeros(model.m), np.zeros(model.q)
        )

    def to_config(self) -> tp.Dict[str, tp.Any]:
        if isinstance(self.model, LinearModel):
            lin = self.model.dynamics
            config: tp.Dict[str, tp.Any] = {
                "n": self.model.n,
                "m": self.model.m,
                "q": self.model.q,
                "A": lin.A.tolist(),
                "B": lin.B.tolist(),
                "Bw": lin.Bw.tolist(),
            }
        else:
            config = {
                "nonlinear": self.model.name,
                "params": dict(getattr(self.model, "params", {})),
            }

        config.update(
            X=self.X.to_config(),
            U=self.U.to_config(),
            W=self.W.to_config(),
            Q=self.weights.Q.tolist(),
            R=self.weights.R.tolist(),
            S=self.weights.S.tolist(),
            Delta=self.Delta.tolist(),
        )
        config["lambda"] = self.lam

        return config


def load_mapping(source: ConfigLike, name: str = "config") -> tp.Dict[str, tp.Any]:
    """
    Reads a JSON or YAML file (JSON is parsed as YAML) into a dict, mappings
    are passed through.

    Raises:
        ConfigError: if the file is missing, unparsable or not a mapping.
    """
    if isinstance(source, tp.Mapping):
        return dict(source)

    path = Path(source)

    if not path.is_file():
        raise ConfigError(f"{name} file '{path}' does not exist")

    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {name} file '{path}': {e}")

    if not isinstance(data, tp.Mapping):
        raise ConfigError(f"{name} file '{path}' must contain a mapping")

    return dict(data)


def model_from_config(config: tp.Mapping[str, tp.Any]) -> DynamicsModel:
    if "nonlinear" in config:
        params = config.get("params", {}) or {}
        if not isinstance(params, tp.Mapping):
            raise ConfigError("'params' must be a mapping")
        return builtin_model(config["nonlinear"], params)

    missing = [key for key in ("A", "B", "Bw") if key not in config]
    if missing:
        raise ConfigError(f"system is missing fields {missing}")

    n = int(config.get("n", np.shape(config["A"])[0]))
    m = int(config.get("m", np.size(config["B"]) // n))
    q = int(config.get("q", np.size(config["Bw"]) // n))

    return LinearModel(
        LinearDynamics(
            types.as_matrix(config["A"], "A", shape=(n, n)),
            types.as_matrix(config["B"], "B", shape=(n, m)),
            types.as_matrix(config["Bw"], "Bw", shape=(n, q)),
        ),
        name=str(config.get("name", "linear")),
    )


def system_from_config(config: tp.Mapping[str, tp.Any]) -> SystemConfig:
    model = model_from_config(config)

    missing = [key for key in ("X", "U", "W", "Q", "R", "S") if key not in config]
    if missing:
        raise ConfigError(f"system is missing fields {missing}")

    weights = CostWeights(
        types.as_matrix(config["Q"], "Q", shape=(model.n, model.n)),
        types.as_matrix(config["R"], "R", shape=(model.m, model.m)),
        types.as_matrix(config["S"], "S", shape=(model.q, model.q)),
    )

    try:
        lam = float(config.get("lambda", DEFAULT_LAMBDA))
    except (TypeError, ValueError):
        raise ConfigError(f"'lambda' must be a number, got {config.get('lambda')!r}")

    return SystemConfig(
        model=model,
        X=HPolytope.from_config(config["X"], "X"),
        U=HPolytope.from_config(config["U"], "U"),
        W=HPolytope.from_config(config["W"], "W"),
        weights=weights,
        Delta=config.get("Delta", None),
        lam=lam,
    )


def load_system(source: ConfigLike) -> SystemConfig:
    """Loads a system description from a JSON/YAML file or a mapping."""
    system = system_from_config(load_mapping(source, "system"))

    logger.info(
        "loaded system '%s' with n=%d, m=%d, q=%d",
        system.model.name,
        system.model.n,
        system.model.m,
        system.model.q,
    )

    return system


def example_system() -> SystemConfig:
    """
    Double integrator with additive disturbance on both states, `‖x‖∞ ≤ 1`,
    `|u| ≤ 1`, `‖w‖∞ ≤ 0.1`, `Q = diag(10, 1)`, `R = 1`, `S = I`, `Delta = I`
    and `lam = 2`.
    """
    model = LinearModel.from_matrices(
        A=[[1.0, 1.0], [0.0, 1.0]],
        B=[[0.5], [1.0]],
        Bw=np.eye(2),
        name="double_integrator",
    )

    return SystemConfig(
        model=model,
        X=HPolytope.box([-1.0, -1.0], [1.0, 1.0]),
        U=HPolytope.box([-1.0], [1.0]),
        W=HPolytope.box([-0.1, -0.1], [0.1, 0.1]),
        weights=CostWeights(Q=np.diag([10.0, 1.0]), R=[[1.0]], S=np.eye(2)),
        Delta=np.eye(2),
        lam=2.0,
    )
