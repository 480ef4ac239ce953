import numpy as np
import pytest

import previewmpc as pm
from previewmpc.config import load_system
from previewmpc.model import CostWeights, PreviewWindow, builtin_model, rollout
from previewmpc.ocp import (
    OcpSpec,
    candidate_inputs,
    condense,
    constraint_margin,
    solve_ocp,
    trajectory_cost,
)
from previewmpc.polytope import HPolytope
from previewmpc.solvers import Status
from previewmpc.synthesis import TerminalIngredients, synthesize

WINDOW = [[0.05, -0.02], [0.1, 0.0], [-0.03, 0.08], [0.0, -0.1], [0.02, 0.04]]


class TestCondense:
    def test_origin(self, example_system, example_ingredients):
        spec = OcpSpec.from_system(example_system, example_ingredients, N=1)

        qp = condense(spec, [0.0, 0.0], PreviewWindow.zeros(1, 2))

        np.testing.assert_array_equal(qp.lin, 0.0)
        assert qp.const_term == 0.0
        np.testing.assert_allclose(pm.solve_qp(qp).u, 0.0, atol=1e-12)

    def test_one_step_expansion(self, example_system, example_ingredients):
        spec = OcpSpec.from_system(example_system, example_ingredients, N=1)
        P = example_ingredients.P
        B = example_system.model.dynamics.B
        w = np.array([0.1, 0.0])

        qp = condense(spec, [0.0, 0.0], PreviewWindow([w]))

        # x₁ = Bu + w, cost = uᵀRu + (Bu + w)ᵀP(Bu + w) + wᵀSw
        assert qp.const_term == pytest.approx(w @ P @ w + 0.1**2)
        np.testing.assert_allclose(qp.lin, 2.0 * B.T @ P @ w)
        np.testing.assert_allclose(qp.Hess, 2.0 * (B.T @ P @ B + 1.0))

    def test_objective_matches_rollout(self, example_spec):
        x0 = np.array([-0.7, 0.4])
        window = PreviewWindow(WINDOW)
        u = np.random.default_rng(0).uniform(-1.0, 1.0, size=(5, 1))

        qp = condense(example_spec, x0, window)
        states = rollout(example_spec.model, x0, u, window.values)

        assert qp.objective(u.reshape(-1)) == pytest.approx(
            trajectory_cost(example_spec.weights, example_spec.terminal, states, u, window.values),
            rel=1e-12,
        )
        np.testing.assert_allclose(qp.predicted_states(u), states, atol=1e-12)

    def test_strictly_convex(self, example_spec):
        qp = condense(example_spec, [0.1, 0.1], PreviewWindow.zeros(5, 2))

        assert np.linalg.eigvalsh(qp.Hess).min() >= np.linalg.eigvalsh(example_spec.weights.R).min()

    def test_constraint_rows(self, example_spec):
        qp = condense(example_spec, [0.1, 0.1], PreviewWindow.zeros(5, 2))
        n_rows = 5 * example_spec.X.n_constraints + 5 * example_spec.U.n_constraints
        n_rows += example_spec.terminal.Xf.n_constraints

        assert qp.ineqA.shape == (n_rows, 5)

    def test_nonlinear_rejected(self, example_spec):
        spec = example_spec.replace(model=builtin_model("pendulum"))

        with pytest.raises(pm.ConfigError):
            condense(spec, [0.0, 0.0], PreviewWindow.zeros(5, 2))


class TestSolveOcp:
    def test_origin(self, example_spec):
        solution = solve_ocp(example_spec, [0.0, 0.0], PreviewWindow.zeros(5, 2))

        assert solution.status == Status.OPTIMAL
        np.testing.assert_allclose(solution.u_seq, 0.0, atol=1e-12)
        assert solution.value == pytest.approx(0.0, abs=1e-12)

    def test_value_consistency(self, example_spec):
        window = PreviewWindow(WINDOW)

        solution = solve_ocp(example_spec, [-0.7, 0.4], window)

        assert solution.optimal
        assert solution.kkt_residual <= 1e-7
        assert solution.x_seq.shape == (6, 2)
        assert solution.value == pytest.approx(
            trajectory_cost(
                example_spec.weights, example_spec.terminal, solution.x_seq, solution.u_seq, window.values
            ),
            rel=1e-8,
        )
        assert constraint_margin(example_spec, solution.x_seq, solution.u_seq) >= -1e-7

    def test_terminal_controller_bound(self, example_spec):
        x0 = pm.chebyshev_center(example_spec.terminal.Xf) + 0.01

        solution = solve_ocp(example_spec, x0, PreviewWindow.zeros(5, 2))

        assert solution.value <= example_spec.terminal.terminal_cost(x0) + 1e-9

    def test_zero_window_equals_nominal(self, example_spec):
        x0 = [-0.7, 0.4]

        solution = solve_ocp(example_spec, x0, PreviewWindow.zeros(5, 2))
        u, nominal = pm.nominal_mpc_step(example_spec, x0)

        np.testing.assert_array_equal(solution.u_seq, nominal.u_seq)
        np.testing.assert_array_equal(u, solution.first_input)

    def test_disturbance_weight_is_a_constant_shift(self, example_spec):
        window = PreviewWindow(WINDOW)
        heavier = example_spec.replace(
            weights=CostWeights(example_spec.weights.Q, example_spec.weights.R, 3.0 * np.eye(2))
        )

        base = solve_ocp(example_spec, [-0.7, 0.4], window)
        shifted = solve_ocp(heavier, [-0.7, 0.4], window)

        np.testing.assert_allclose(shifted.u_seq, base.u_seq, atol=1e-9)
        assert shifted.value - base.value == pytest.approx(
            2.0 * np.sum(window.values**2), rel=1e-8
        )

    def test_preview_neutrality(self, example_spec):
        heavier = example_spec.replace(
            weights=CostWeights(example_spec.weights.Q, example_spec.weights.R, 7.0 * np.eye(2))
        )

        a = solve_ocp(example_spec, [0.3, -0.2], PreviewWindow.zeros(5, 2))
        b = solve_ocp(heavier, [0.3, -0.2], PreviewWindow.zeros(5, 2))

        np.testing.assert_allclose(a.u_seq, b.u_seq, atol=1e-7)
        assert a.value == pytest.approx(b.value)

    def test_infeasible_initial_state(self, example_spec):
        solution = solve_ocp(example_spec, [1.5, 0.0], PreviewWindow.zeros(5, 2))

        assert solution.status == Status.INFEASIBLE
        assert solution.value == np.inf

    def test_window_checks(self, example_spec):
        with pytest.raises(pm.DimensionError):
            solve_ocp(example_spec, [0.0, 0.0], PreviewWindow.zeros(4, 2))

        with pytest.raises(pm.DisturbanceBoundError):
            solve_ocp(example_spec, [0.0, 0.0], PreviewWindow([[0.2, 0.0]] * 5))

    def test_deterministic(self, example_spec):
        window = PreviewWindow(WINDOW)

        a = solve_ocp(example_spec, [-0.7, 0.4], window)
        b = solve_ocp(example_spec, [-0.7, 0.4], window)

        assert np.array_equal(a.u_seq, b.u_seq)

    def test_candidate_inputs(self, example_spec):
        solution = solve_ocp(example_spec, [-0.7, 0.4], PreviewWindow(WINDOW))

        candidate = candidate_inputs(solution, example_spec.terminal.K)

        assert candidate.shape == (5, 1)
        np.testing.assert_array_equal(candidate[:-1], solution.u_seq[1:])
        np.testing.assert_allclose(candidate[-1], example_spec.terminal.K @ solution.terminal_state)


class TestOcpSpec:
    def test_horizon(self, example_system, example_ingredients):
        with pytest.raises(pm.ConfigError):
            OcpSpec.from_system(example_system, example_ingredients, N=0)

    def test_stored_certificate_is_recomputed(self, example_system, example_ingredients):
        certificate = example_ingredients.certificate.replace(rpi_margin=-1.0, certified=False)
        ingredients = example_ingredients.replace(certificate=certificate)

        spec = OcpSpec.from_system(example_system, ingredients, N=5)

        assert spec.terminal.certificate.certified
        assert spec.terminal.certificate.rpi_margin >= -1e-8

    def test_enlarged_terminal_set(self, example_system, example_ingredients):
        config = example_ingredients.to_config()
        config["Xf"]["g"] = [3.0 * g for g in config["Xf"]["g"]]

        tampered = TerminalIngredients.from_config(config)
        stripped = TerminalIngredients.from_config({k: v for k, v in config.items() if k != "certificate"})

        assert tampered.certificate.certified
        for ingredients in (tampered, stripped):
            with pytest.raises(pm.CertificationError):
                OcpSpec.from_system(example_system, ingredients, N=5)

        spec = OcpSpec.from_system(example_system, tampered, N=5, stability_mode=False)
        assert spec.N == 5

    def test_no_certificate_without_disturbance_set(self, example_system, example_ingredients):
        ingredients = example_ingredients.replace(certificate=None)

        with pytest.raises(pm.CertificationError, match="no certificate"):
            OcpSpec(
                model=example_system.model,
                N=5,
                X=example_system.X,
                U=example_system.U,
                weights=example_system.weights,
                terminal=ingredients,
            )

        spec = OcpSpec(
            model=example_system.model,
            N=5,
            X=example_system.X,
            U=example_system.U,
            weights=example_system.weights,
            terminal=example_ingredients,
        )
        assert spec.W is None

    def test_dimension_mismatch(self, example_system, example_ingredients):
        with pytest.raises(pm.DimensionError):
            OcpSpec.from_system(
                example_system.replace(U=HPolytope.box([-1.0, -1.0], [1.0, 1.0])), example_ingredients, N=5
            )


class TestNonlinear:
    @pytest.fixture(scope="class")
    def pendulum_spec(self):
        from pathlib import Path

        system = load_system(Path(__file__).parent.parent / "configs" / "pendulum_system.yaml")
        return OcpSpec.from_system(system, synthesize(system), N=10, stability_mode=False)

    def test_successive_linearization(self, pendulum_spec):
        window = PreviewWindow(np.full((10, 2), 0.005), pendulum_spec.W)

        solution = solve_ocp(pendulum_spec, [0.2, 0.0], window)

        assert solution.status == Status.OPTIMAL
        assert constraint_margin(pendulum_spec, solution.x_seq, solution.u_seq) >= -1e-7
        np.testing.assert_allclose(
            solution.x_seq, rollout(pendulum_spec.model, [0.2, 0.0], solution.u_seq, window.values)
        )

    def test_warm_start(self, pendulum_spec):
        window = PreviewWindow.zeros(10, 2)

        cold = solve_ocp(pendulum_spec, [0.2, 0.0], window)
        warm = solve_ocp(pendulum_spec, [0.2, 0.0], window, warm=cold.u_seq)

        assert warm.optimal
        np.testing.assert_allclose(warm.u_seq, cold.u_seq, atol=1e-6)
