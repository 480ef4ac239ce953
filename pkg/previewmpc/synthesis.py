import logging
import typing as tp

import jax
import jax.numpy as jnp
import numpy as np

from previewmpc import types
from previewmpc.config import SystemConfig
from previewmpc.errors import ConfigError, ConvergenceError, SynthesisError
from previewmpc.model import CostWeights, LinearDynamics, check_weight
from previewmpc.polytope import (
    HPolytope,
    affine_preimage,
    chebyshev_center,
    contains,
    intersect,
    pontryagin_difference,
    project_point,
)
from previewmpc.tree_object import TreeObject

logger = logging.getLogger(__name__)

STABILITY_MARGIN = 1e-9
CERTIFICATE_TOL = 1e-8
RICCATI_TOL = 1e-12
RICCATI_MAX_ITER = 10_000
TERMINAL_SET_MAX_ITER = 500


class Certificate(TreeObject):
    """Numeric margins of the terminal ingredients, all must be `≥ -1e-8`."""

    spectral_radius: float
    lyapunov_residual: float
    decrease_eigmin: float
    rpi_margin: float
    state_margin: float
    input_margin: float
    certified: bool

    def __init__(
        self,
        spectral_radius: float,
        lyapunov_residual: float,
        decrease_eigmin: float,
        rpi_margin: float,
        state_margin: float,
        input_margin: float,
    ):
        super().__init__()
        self.spectral_radius = spectral_radius
        self.lyapunov_residual = lyapunov_residual
        self.decrease_eigmin = decrease_eigmin
        self.rpi_margin = rpi_margin
        self.state_margin = state_margin
        self.input_margin = input_margin
        self.certified = bool(
            spectral_radius < 1.0 - STABILITY_MARGIN
            and min(decrease_eigmin, rpi_margin, state_margin, input_margin)
            >= -CERTIFICATE_TOL
        )


class TerminalIngredients(TreeObject):
    """
    Local controller `u = Kx`, terminal cost `V_f(x) = xᵀPx` and terminal set
    `Xf`, together with the decrease weight `Delta` and scale `lam` used to
    build `P`.
    """

    K: types.Matrix[np.ndarray]
    P: types.Matrix[np.ndarray]
    Delta: types.Matrix[np.ndarray]
    lam: float
    Xf: HPolytope
    certificate: tp.Optional[Certificate]

    def __init__(
        self,
        K: tp.Any,
        P: tp.Any,
        Delta: tp.Any,
        lam: float,
        Xf: HPolytope,
        certificate: tp.Optional[Certificate] = None,
    ):
        super().__init__()

        K = types.as_matrix(K, "K")
        n = K.shape[1]

        self.K = K
        self.P = types.as_matrix(P, "P", shape=(n, n))
        self.Delta = types.as_matrix(Delta, "Delta", shape=(n, n))
        self.lam = float(lam)
        self.Xf = Xf
        self.certificate = certificate

        if Xf.dim != n:
            raise ConfigError(f"'Xf' has dimension {Xf.dim}, expected {n}")

    def terminal_cost(self, x: tp.Any) -> float:
        x = np.asarray(x, dtype=np.float64)
        return float(x @ self.P @ x)

    def to_config(self) -> tp.Dict[str, tp.Any]:
        config: tp.Dict[str, tp.Any] = {
            "K": self.K.tolist(),
            "P": self.P.tolist(),
            "Delta": self.Delta.tolist(),
            "lambda": self.lam,
            "Xf": self.Xf.to_config(),
        }
        if self.certificate is not None:
            config["certificate"] = self.certificate.to_dict()
        return config

    @classmethod
    def from_config(cls, config: tp.Mapping[str, tp.Any]) -> "TerminalIngredients":
        missing = [key for key in ("K", "P", "Delta", "lambda", "Xf") if key not in config]
        if missing:
            raise ConfigError(f"ingredients are missing fields {missing}")

        certificate = None
        if "certificate" in config and config["certificate"] is not None:
            c = dict(config["certificate"])
            c.pop("certified", None)
            try:
                certificate = Certificate(**c)
            except TypeError as e:
                raise ConfigError(f"invalid certificate: {e}")

        return cls(
            K=config["K"],
            P=config["P"],
            Delta=config["Delta"],
            lam=config["lambda"],
            Xf=HPolytope.from_config(config["Xf"], "Xf"),
            certificate=certificate,
        )


class IssLevelSet(TreeObject):
    """Sublevel set `{x : xᵀPx ≤ beta}` the terminal loop converges to."""

    P: types.Matrix[np.ndarray]
    beta: float
    disturbance_radius: float

    def __init__(self, P: np.ndarray, beta: float, disturbance_radius: float):
        super().__init__()
        self.P = P
        self.beta = beta
        self.disturbance_radius = disturbance_radius

    def contains(self, x: tp.Any, rtol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(x @ self.P @ x <= self.beta * (1.0 + rtol) + 1e-12)


# --------------------------------------------------
# gain and terminal weight
# --------------------------------------------------


def spectral_radius(M: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvals(M)).max(initial=0.0))


def is_stabilizable(A: np.ndarray, B: np.ndarray, tol: float = 1e-9) -> bool:
    """PBH test: `[A - λI, B]` has full row rank for every eigenvalue `|λ| ≥ 1`."""
    n = A.shape[0]

    for eigenvalue in np.linalg.eigvals(A):
        if abs(eigenvalue) < 1.0:
            continue

        pencil = np.hstack([A - eigenvalue * np.eye(n), B])
        if np.linalg.matrix_rank(pencil, tol=tol) < n:
            return False

    return True


def synthesize_gain(
    lin: LinearDynamics,
    weights: CostWeights,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
) -> np.ndarray:
    """
    Infinite horizon LQR gain `K = -(R + BᵀPB)⁻¹BᵀPA` with `P` the fixed point
    of the discrete Riccati iteration started at `Q`.

    Raises:
        SynthesisError: if `(A, B)` is not stabilizable or the gain does not
            stabilize the plant.
        ConvergenceError: if the iteration does not reach a relative change
            of `tol` in `max_iter` steps.
    """
    A, B = lin.A, lin.B
    Q, R = weights.Q, weights.R

    if not is_stabilizable(A, B):
        eigenvalues = np.round(np.linalg.eigvals(A), 6).tolist()
        raise SynthesisError(
            f"(A, B) is not stabilizable, uncontrollable unstable modes among eigenvalues {eigenvalues}"
        )

    P = Q.copy()

    for iteration in range(max_iter):
        K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_next = Q + A.T @ P @ (A + B @ K)
        P_next = 0.5 * (P_next + P_next.T)

        change = np.linalg.norm(P_next - P)
        P = P_next

        if change <= tol * max(1.0, np.linalg.norm(P)):
            break
    else:
        raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")

    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    radius = spectral_radius(lin.closed_loop(K))

    if radius >= 1.0 - STABILITY_MARGIN:
        raise SynthesisError(
            f"LQR gain does not stabilize the plant, spectral radius {radius:.6g}"
        )

    logger.debug(
        "Riccati iteration converged in %d steps, closed loop spectral radius %.6g",
        iteration + 1,
        radius,
    )

    return K


def solve_terminal_weight(
    lin: LinearDynamics,
    K: tp.Any,
    weights: CostWeights,
    Delta: tp.Any,
    lam: float,
    method: str = "direct",
) -> np.ndarray:
    """
    Solves the Lyapunov equation `P = A_KᵀPA_K + (Q + KᵀRK + lam·Delta)`.

    Arguments:
        lin: plant matrices.
        K: stabilizing gain.
        weights: stage cost weights.
        Delta: positive definite decrease weight.
        lam: scale, must be at least 1.
        method: `"direct"` solves the Kronecker linear system, `"iterative"`
            accumulates the series with doubling steps.

    Returns:
        The symmetric positive definite `P`.
    """
    if lam < 1.0:
        raise ConfigError(f"lambda must satisfy λ ≥ 1, got {lam}")

    K = types.as_matrix(K, "K", shape=(lin.m, lin.n))
    Delta = check_weight(types.as_matrix(Delta, "Delta", shape=(lin.n, lin.n)), "Delta", definite=True)

    A_K = lin.closed_loop(K)
    radius = spectral_radius(A_K)

    if radius >= 1.0 - STABILITY_MARGIN:
        raise SynthesisError(f"A + BK is not strictly stable, spectral radius {radius:.6g}")

    M = weights.Q + K.T @ weights.R @ K + lam * Delta
    n = lin.n

    if method == "direct":
        # column-major vec(A_Kᵀ P A_K) = (A_Kᵀ ⊗ A_Kᵀ) vec(P)
        lhs = np.eye(n * n) - np.kron(A_K.T, A_K.T)
        P = np.linalg.solve(lhs, M.reshape(-1, order="F")).reshape(n, n, order="F")
    elif method == "iterative":
        P = M.copy()
        power = A_K.copy()
        while np.linalg.norm(power) > 1e-17 * max(1.0, np.linalg.norm(P)):
            P = P + power.T @ P @ power
            power = power @ power
    else:
        raise ConfigError(f"unknown method '{method}', expected 'direct' or 'iterative'")

    return 0.5 * (P + P.T)


def lyapunov_residual(P: np.ndarray, A_K: np.ndarray, M: np.ndarray) -> float:
    """`‖P - A_KᵀPA_K - M‖_F / ‖P‖_F`."""
    return float(
        np.linalg.norm(P - A_K.T @ P @ A_K - M) / max(np.linalg.norm(P), 1e-300)
    )


# --------------------------------------------------
# terminal set
# --------------------------------------------------


def compute_terminal_set(
    lin: LinearDynamics,
    K: tp.Any,
    X: HPolytope,
    U: HPolytope,
    W: HPolytope,
    max_iter: int = TERMINAL_SET_MAX_ITER,
) -> HPolytope:
    """
    Maximal robust positively invariant set of `x⁺ = A_K x + B_w w` inside
    `X ∩ {x : Kx ∈ U}`.

    The set is the limit of `Ω₀ = X ∩ {Kx ∈ U}`,
    `Ωₜ₊₁ = Ωₜ ∩ {x : A_K x ∈ Ωₜ ⊖ B_w W}`, stopped when two consecutive sets
    contain each other.

    Raises:
        SynthesisError: if `A_K` is unstable or the iteration produces an empty set.
        ConvergenceError: if no fixed point is reached in `max_iter` steps.
    """
    K = types.as_matrix(K, "K", shape=(lin.m, lin.n))
    A_K = lin.closed_loop(K)
    radius = spectral_radius(A_K)

    if radius >= 1.0 - STABILITY_MARGIN:
        raise SynthesisError(f"A + BK is not strictly stable, spectral radius {radius:.6g}")

    omega = intersect(X, affine_preimage(U, K))

    if omega.empty:
        raise SynthesisError("X ∩ {x : Kx ∈ U} is empty")

    for iteration in range(max_iter):
        eroded = pontryagin_difference(omega, W, lin.Bw)

        if eroded.empty:
            raise SynthesisError("no robust terminal set exists for this W")

        omega_next = intersect(omega, affine_preimage(eroded, A_K))

        if omega_next.empty:
            raise SynthesisError("no robust terminal set exists for this W")

        logger.debug(
            "terminal set iteration %d: %d constraints", iteration, omega_next.n_constraints
        )

        if contains(omega_next, omega) and contains(omega, omega_next):
            logger.info(
                "terminal set converged after %d iterations with %d constraints",
                iteration + 1,
                omega_next.n_constraints,
            )
            return omega_next

        omega = omega_next

    raise ConvergenceError(
        f"terminal set iteration did not converge in {max_iter} iterations"
    )


# --------------------------------------------------
# verification
# --------------------------------------------------


def verify_assumption4(
    ing: TerminalIngredients,
    lin: LinearDynamics,
    weights: CostWeights,
    X: HPolytope,
    U: HPolytope,
    W: HPolytope,
) -> Certificate:
    """
    Certifies the terminal ingredients.

    The report holds the smallest eigenvalue of
    `P - A_KᵀPA_K - (Q + KᵀRK) - Delta`, the invariance margin
    `min gᵢ - (h_Xf(A_Kᵀhᵢ) + h_W(B_wᵀhᵢ))` over the rows of `Xf`, and the
    margins of `Xf ⊆ X` and `K·Xf ⊆ U`. Never raises.
    """
    K, P, Xf = ing.K, ing.P, ing.Xf
    A_K = lin.closed_loop(K)
    stage = weights.Q + K.T @ weights.R @ K

    decrease = P - A_K.T @ P @ A_K - stage - ing.Delta
    decrease_eigmin = float(np.linalg.eigvalsh(0.5 * (decrease + decrease.T)).min())

    if Xf.empty:
        rpi = state = control = -np.inf
    else:
        rpi = min(
            (
                gi - (Xf.support(A_K.T @ h) + W.support(lin.Bw.T @ h))
                for h, gi in zip(Xf.H, Xf.g)
            ),
            default=np.inf,
        )
        state = min((gi - Xf.support(h) for h, gi in zip(X.H, X.g)), default=np.inf)
        control = min(
            (gi - Xf.support(K.T @ h) for h, gi in zip(U.H, U.g)), default=np.inf
        )

    certificate = Certificate(
        spectral_radius=spectral_radius(A_K),
        lyapunov_residual=lyapunov_residual(P, A_K, stage + ing.lam * ing.Delta),
        decrease_eigmin=decrease_eigmin,
        rpi_margin=float(rpi),
        state_margin=float(state),
        input_margin=float(control),
    )

    if not certificate.certified:
        logger.warning("terminal ingredients are not certified: %s", certificate.to_dict())

    return certificate


def disturbance_radius(W: HPolytope) -> float:
    """Euclidean radius of the bounding box of `W`, from its support values."""
    lo, hi = W.bounding_box()
    return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))


def iss_level_set(
    ing: TerminalIngredients, weights: CostWeights, W: HPolytope, lin: LinearDynamics
) -> IssLevelSet:
    """
    Estimates the level `beta` of `V_f` that the terminal loop converges to
    under disturbances in `W`.

    With `V_f` bounded by `λ_min(P)‖x‖²` and `λ_max(P)‖x‖²`, decrease rate
    `(λ_min(Q) + λ_min(Delta))‖x‖²` and disturbance gain
    `c_w‖w‖² = λ_max(P)‖B_w‖²‖w‖²`:

    ```
    beta = λ_max(P)·c_w·r² / (λ_min(Q) + λ_min(Delta))
    ```

    where `r` is `disturbance_radius(W)`. This is an estimate, not a certificate.
    """
    eig_P = np.linalg.eigvalsh(ing.P)
    c_w = eig_P.max() * np.linalg.norm(lin.Bw, 2) ** 2
    decay = np.linalg.eigvalsh(weights.Q).min() + np.linalg.eigvalsh(ing.Delta).min()
    r = disturbance_radius(W)

    beta = float(eig_P.max() * c_w * r**2 / decay)

    return IssLevelSet(P=ing.P, beta=beta, disturbance_radius=r)


def terminal_loop_rollout(
    A_K: tp.Any, Bw: tp.Any, x0: tp.Any, disturbances: tp.Any
) -> np.ndarray:
    """States of `x⁺ = A_K x + B_w w` along a disturbance sequence, computed
    with `jax.lax.scan`. Returns an array of shape `(len(disturbances), n)`."""
    A_K = jnp.asarray(A_K)
    Bw = jnp.asarray(Bw)

    def step(x, w):
        x_next = A_K @ x + Bw @ w
        return x_next, x_next

    _, states = jax.lax.scan(step, jnp.asarray(x0, dtype=A_K.dtype), jnp.asarray(disturbances))

    return np.asarray(states)


def sample_disturbances(W: HPolytope, steps: int, seed: int = 0) -> np.ndarray:
    """Uniform samples on the bounding box of `W`, projected back onto `W`."""
    lo, hi = W.bounding_box()
    key = jax.random.PRNGKey(seed)
    samples = np.asarray(
        jax.random.uniform(key, (steps, W.dim), minval=lo, maxval=hi, dtype=jnp.float64)
    )

    return np.asarray(
        [w if W.contains_point(w) else project_point(W, w) for w in samples]
    )


def level_set_excursion(
    ing: TerminalIngredients,
    lin: LinearDynamics,
    W: HPolytope,
    steps: int = 10_000,
    burn_in: int = 200,
    seed: int = 0,
) -> float:
    """
    Largest `V_f(x)` after `burn_in` steps of the terminal loop driven by
    random disturbances from `W`, starting at the Chebyshev center of `Xf`.
    """
    disturbances = sample_disturbances(W, steps, seed)
    states = terminal_loop_rollout(
        lin.closed_loop(ing.K), lin.Bw, chebyshev_center(ing.Xf), disturbances
    )
    values = np.einsum("ti,ij,tj->t", states, ing.P, states)

    return float(values[burn_in:].max(initial=0.0))


# --------------------------------------------------
# pipeline
# --------------------------------------------------


def synthesize(system: SystemConfig, max_iter: int = TERMINAL_SET_MAX_ITER) -> TerminalIngredients:
    """
    Offline design: linearize at the origin, compute the LQR gain, the terminal
    weight and the terminal set, and attach the certificate.
    """
    lin = system.linearization()
    weights = system.weights

    K = synthesize_gain(lin, weights)
    P = solve_terminal_weight(lin, K, weights, system.Delta, system.lam)
    Xf = compute_terminal_set(lin, K, system.X, system.U, system.W, max_iter=max_iter)

    ingredients = TerminalIngredients(K=K, P=P, Delta=system.Delta, lam=system.lam, Xf=Xf)
    certificate = verify_assumption4(
        ingredients, lin, weights, system.X, system.U, system.W
    )

    logger.info(
        "synthesized terminal ingredients, certified=%s, rpi margin %.3g",
        certificate.certified,
        certificate.rpi_margin,
    )

    return ingredients.replace(certificate=certificate)
