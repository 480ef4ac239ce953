import hypothesis as hp
import numpy as np
import pytest
import scipy.linalg
from hypothesis import strategies as st

import previewmpc as pm
from previewmpc.model import CostWeights, LinearDynamics
from previewmpc.polytope import HPolytope, contains
from previewmpc.synthesis import (
    TerminalIngredients,
    compute_terminal_set,
    iss_level_set,
    is_stabilizable,
    level_set_excursion,
    lyapunov_residual,
    sample_disturbances,
    solve_terminal_weight,
    spectral_radius,
    synthesize,
    synthesize_gain,
    terminal_loop_rollout,
    verify_assumption4,
)


def scalar(a: float, b: float = 1.0, bw: float = 1.0) -> LinearDynamics:
    return LinearDynamics([[a]], [[b]], [[bw]])


def unit_weights(n: int = 1, m: int = 1) -> CostWeights:
    return CostWeights(np.eye(n), np.eye(m), np.eye(n))


def interval(r: float) -> HPolytope:
    return HPolytope.box([-r], [r])


class TestSynthesizeGain:
    def test_stable_plant(self):
        K = synthesize_gain(scalar(0.5), unit_weights())

        assert abs(0.5 + K[0, 0]) < 1.0

    def test_example_system(self, example_system):
        lin = example_system.linearization()

        K = synthesize_gain(lin, example_system.weights)

        assert K.shape == (1, 2)
        assert spectral_radius(lin.closed_loop(K)) < 1.0

    def test_scalar_fixed_point(self):
        K = synthesize_gain(scalar(2.0), unit_weights())

        # P² - 4P - 1 = 0
        P = 2.0 + np.sqrt(5.0)
        assert K[0, 0] == pytest.approx(-2.0 * P / (1.0 + P), rel=1e-10)

    @hp.given(seed=st.integers(0, 10_000))
    @hp.settings(deadline=None, max_examples=20)
    def test_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 2))
        lin = LinearDynamics(A, B, np.eye(3))
        weights = CostWeights(np.eye(3), np.eye(2), np.eye(3))

        K = synthesize_gain(lin, weights)
        P = scipy.linalg.solve_discrete_are(A, B, np.eye(3), np.eye(2))
        expected = -np.linalg.solve(np.eye(2) + B.T @ P @ B, B.T @ P @ A)

        np.testing.assert_allclose(K, expected, rtol=1e-6, atol=1e-8)

    def test_not_stabilizable(self):
        lin = LinearDynamics(2.0 * np.eye(2), np.zeros((2, 1)), np.eye(2))

        assert not is_stabilizable(lin.A, lin.B)

        with pytest.raises(pm.SynthesisError):
            synthesize_gain(lin, CostWeights(np.eye(2), [[1.0]], np.eye(2)))


class TestSolveTerminalWeight:
    def test_nilpotent(self):
        lin = scalar(0.5)
        K = [[-0.5]]

        P = solve_terminal_weight(lin, K, unit_weights(), [[1.0]], lam=2.0)

        assert P[0, 0] == pytest.approx(1.0 + 0.25 + 2.0)

    def test_geometric_series(self):
        # A_K = 0.5, Q + KᵀRK + λΔ = 1
        weights = CostWeights([[0.0]], [[1.0]], [[1.0]])

        P = solve_terminal_weight(scalar(0.5), [[0.0]], weights, [[1.0]], lam=1.0)

        assert P[0, 0] == pytest.approx(4.0 / 3.0)

    def test_certificate_margin(self, example_system):
        lin = example_system.linearization()
        weights = example_system.weights
        K = synthesize_gain(lin, weights)

        P = solve_terminal_weight(lin, K, weights, np.eye(2), lam=2.0)
        A_K = lin.closed_loop(K)
        residual = P - A_K.T @ P @ A_K - (weights.Q + K.T @ weights.R @ K) - np.eye(2)

        assert np.linalg.eigvalsh(residual).min() >= 1.0 - 1e-8
        assert np.linalg.eigvalsh(P).min() > 0.0

    def test_methods_agree(self, example_system):
        lin = example_system.linearization()
        K = synthesize_gain(lin, example_system.weights)

        direct = solve_terminal_weight(lin, K, example_system.weights, np.eye(2), 2.0)
        iterative = solve_terminal_weight(
            lin, K, example_system.weights, np.eye(2), 2.0, method="iterative"
        )

        np.testing.assert_allclose(direct, iterative, rtol=1e-10)

    def test_matches_scipy(self, example_system):
        lin = example_system.linearization()
        weights = example_system.weights
        K = synthesize_gain(lin, weights)
        A_K = lin.closed_loop(K)

        P = solve_terminal_weight(lin, K, weights, np.eye(2), 2.0)
        M = weights.Q + K.T @ weights.R @ K + 2.0 * np.eye(2)

        np.testing.assert_allclose(P, scipy.linalg.solve_discrete_lyapunov(A_K.T, M), rtol=1e-9)
        assert lyapunov_residual(P, A_K, M) <= 1e-10

    def test_lambda_below_one(self):
        with pytest.raises(pm.ConfigError, match="λ ≥ 1"):
            solve_terminal_weight(scalar(0.5), [[0.0]], unit_weights(), [[1.0]], lam=0.5)

    def test_unstable_closed_loop(self):
        with pytest.raises(pm.SynthesisError):
            solve_terminal_weight(scalar(1.5), [[0.0]], unit_weights(), [[1.0]], lam=2.0)

    def test_unknown_method(self):
        with pytest.raises(pm.ConfigError):
            solve_terminal_weight(scalar(0.5), [[0.0]], unit_weights(), [[1.0]], 2.0, method="qr")


class TestComputeTerminalSet:
    def test_invariant_seed(self):
        X = HPolytope.box([-1.0, -1.0], [1.0, 1.0])
        U = HPolytope.box([-1.0], [1.0])
        W = HPolytope.box([0.0, 0.0], [0.0, 0.0])
        lin = LinearDynamics(0.5 * np.eye(2), [[1.0], [0.0]], np.eye(2))

        Xf = compute_terminal_set(lin, [[0.0, 0.0]], X, U, W)

        assert contains(Xf, X) and contains(X, Xf)

    def test_scalar(self):
        # 0.5·1 + 0.1 ≤ 1, so the whole state interval is invariant
        Xf = compute_terminal_set(
            scalar(0.5), [[0.0]], interval(1.0), HPolytope.whole_space(1), interval(0.1)
        )

        lo, hi = Xf.bounding_box()
        assert lo[0] == pytest.approx(-1.0)
        assert hi[0] == pytest.approx(1.0)

    def test_scalar_input_limited(self):
        # |Kx| ≤ 0.5 with K = -0.5 caps the set at 1, A_K = 0.5 keeps it
        Xf = compute_terminal_set(
            scalar(1.0), [[-0.5]], interval(2.0), interval(0.5), interval(0.1)
        )

        assert Xf.support([1.0]) == pytest.approx(1.0)

    def test_no_robust_set(self):
        with pytest.raises(pm.SynthesisError, match="no robust terminal set"):
            compute_terminal_set(
                scalar(0.5), [[0.0]], interval(0.1), HPolytope.whole_space(1), interval(0.1)
            )

    def test_unstable(self):
        with pytest.raises(pm.SynthesisError):
            compute_terminal_set(scalar(1.5), [[0.0]], interval(1.0), interval(1.0), interval(0.1))

    def test_iteration_limit(self, example_system, example_ingredients):
        lin = example_system.linearization()

        with pytest.raises(pm.ConvergenceError):
            compute_terminal_set(
                lin, example_ingredients.K, example_system.X, example_system.U, example_system.W, max_iter=1
            )

    def test_example_system(self, example_system, example_ingredients):
        Xf = example_ingredients.Xf

        assert not Xf.empty
        assert contains(example_system.X, Xf)

    def test_robust_invariance(self, example_system, example_ingredients):
        lin = example_system.linearization()
        A_K = lin.closed_loop(example_ingredients.K)
        Xf = example_ingredients.Xf
        vertices = [np.array([a, b]) for a in (-0.1, 0.1) for b in (-0.1, 0.1)]

        for x in Xf.boundary_points(resolution_deg=5.0):
            for w in vertices:
                assert Xf.violation(A_K @ x + lin.Bw @ w) <= 1e-8

    def test_monotone_in_disturbance(self, example_system, example_ingredients):
        lin = example_system.linearization()
        larger = HPolytope.box([-0.11, -0.11], [0.11, 0.11])

        Xf = compute_terminal_set(lin, example_ingredients.K, example_system.X, example_system.U, larger)

        assert contains(example_ingredients.Xf, Xf)


class TestVerifyAssumption4:
    def test_example_certified(self, example_ingredients):
        certificate = example_ingredients.certificate

        assert certificate is not None
        assert certificate.certified
        assert certificate.decrease_eigmin >= 1.0 - 1e-8
        assert min(certificate.rpi_margin, certificate.state_margin, certificate.input_margin) >= -1e-8

    def test_lambda_one(self, example_system, example_ingredients):
        lin = example_system.linearization()
        P = solve_terminal_weight(lin, example_ingredients.K, example_system.weights, np.eye(2), lam=1.0)
        ingredients = example_ingredients.replace(P=P, lam=1.0)

        certificate = verify_assumption4(
            ingredients, lin, example_system.weights, example_system.X, example_system.U, example_system.W
        )

        assert certificate.decrease_eigmin == pytest.approx(0.0, abs=1e-8)

    def test_destabilizing_gain(self):
        lin = scalar(1.0)
        ingredients = TerminalIngredients(K=[[0.5]], P=[[1.0]], Delta=[[1.0]], lam=2.0, Xf=interval(1.0))

        certificate = verify_assumption4(
            ingredients, lin, unit_weights(), interval(1.0), interval(1.0), interval(0.1)
        )

        assert certificate.rpi_margin == pytest.approx(-0.6)
        assert not certificate.certified

    def test_decrease_property(self, example_system, example_ingredients):
        lin = example_system.linearization()
        weights = example_system.weights
        K, P, Xf = example_ingredients.K, example_ingredients.P, example_ingredients.Xf
        A_K = lin.closed_loop(K)
        lo, hi = Xf.bounding_box()
        samples = np.random.default_rng(0).uniform(lo, hi, size=(3000, 2))

        checked = 0
        for x in samples:
            if not Xf.contains_point(x):
                continue
            u = K @ x
            decrease = (A_K @ x) @ P @ (A_K @ x) - x @ P @ x
            bound = -(x @ weights.Q @ x) - u @ weights.R @ u - x @ x
            assert decrease <= bound + 1e-8
            checked += 1

        assert checked >= 100


class TestIngredients:
    def test_config_round_trip(self, example_ingredients):
        config = example_ingredients.to_config()
        loaded = TerminalIngredients.from_config(config)

        np.testing.assert_array_equal(loaded.K, example_ingredients.K)
        assert loaded.certificate.certified
        assert set(config) == {"K", "P", "Delta", "lambda", "Xf", "certificate"}

    def test_missing_fields(self):
        with pytest.raises(pm.ConfigError):
            TerminalIngredients.from_config({"K": [[0.0]]})

    def test_terminal_cost(self, example_ingredients):
        x = np.array([0.1, -0.2])

        assert example_ingredients.terminal_cost(x) == pytest.approx(x @ example_ingredients.P @ x)

    def test_frozen(self, example_ingredients):
        with pytest.raises(AttributeError):
            example_ingredients.lam = 3.0

    def test_synthesize_unstabilizable(self, example_system):
        system = example_system.replace(
            model=pm.LinearModel.from_matrices(2.0 * np.eye(2), np.zeros((2, 1)), np.eye(2))
        )

        with pytest.raises(pm.SynthesisError):
            synthesize(system)


class TestIssLevelSet:
    def test_zero_disturbance(self, example_system, example_ingredients):
        W = HPolytope.box([0.0, 0.0], [0.0, 0.0])

        level_set = iss_level_set(example_ingredients, example_system.weights, W, example_system.linearization())

        assert level_set.beta == 0.0

    def test_quadratic_scaling(self, example_system, example_ingredients):
        lin = example_system.linearization()
        small = iss_level_set(example_ingredients, example_system.weights, example_system.W, lin)
        large = iss_level_set(
            example_ingredients, example_system.weights, HPolytope.box([-0.2, -0.2], [0.2, 0.2]), lin
        )

        assert small.beta > 0.0
        assert large.beta == pytest.approx(4.0 * small.beta)

    def test_monte_carlo_containment(self):
        lin = scalar(0.3)
        weights = unit_weights()
        X, U, W = interval(1.0), interval(1.0), interval(0.1)

        ingredients = synthesize(
            pm.SystemConfig(pm.LinearModel(lin), X, U, W, CostWeights([[1.0]], [[1.0]], [[1.0]]))
        )
        level_set = iss_level_set(ingredients, weights, W, lin)

        excursion = level_set_excursion(ingredients, lin, W, steps=10_000, burn_in=200, seed=0)

        assert excursion <= level_set.beta * (1.0 + 0.05)

    def test_rollout_matches_loop(self):
        A_K = np.array([[0.5, 0.1], [0.0, 0.4]])
        Bw = np.eye(2)
        disturbances = sample_disturbances(HPolytope.box([-0.1, -0.1], [0.1, 0.1]), 50, seed=3)

        states = terminal_loop_rollout(A_K, Bw, [1.0, -1.0], disturbances)

        x = np.array([1.0, -1.0])
        for k, w in enumerate(disturbances):
            x = A_K @ x + Bw @ w
            np.testing.assert_allclose(states[k], x, atol=1e-12)

    def test_samples_deterministic(self):
        W = HPolytope([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [0.1, 0.1, 0.1])

        a = sample_disturbances(W, 100, seed=5)
        b = sample_disturbances(W, 100, seed=5)

        assert np.array_equal(a, b)
        assert all(W.contains_point(w) for w in a)
