import logging

import numpy as np
import pytest

import previewmpc as pm
from previewmpc.controllers import (
    ControllerKind,
    Drmpc,
    NominalMpc,
    PreviewMpc,
    TerminalLaw,
    drmpc_step,
    make_controller,
    matched_split,
    nominal_mpc_step,
    preview_mpc_step,
    terminal_law,
)
from previewmpc.harness import check_candidate_feasibility
from previewmpc.model import PreviewWindow, shift_preview, step_dynamics
from previewmpc.ocp import solve_ocp

WINDOW = [[0.05, -0.02], [0.1, 0.0], [-0.03, 0.08], [0.0, -0.1], [0.02, 0.04]]


class TestControllerKind:
    def test_parse(self):
        assert ControllerKind.parse("drmpc") == ControllerKind.DRMPC
        assert ControllerKind.parse(ControllerKind.NOMINAL) == ControllerKind.NOMINAL
        assert str(ControllerKind.PREVIEW) == "preview"

    def test_unknown(self):
        with pytest.raises(pm.ConfigError):
            ControllerKind.parse("tube")

    def test_make_controller(self, example_spec):
        assert isinstance(make_controller("preview", example_spec), PreviewMpc)
        assert isinstance(make_controller("nominal", example_spec), NominalMpc)
        assert isinstance(make_controller("drmpc", example_spec), Drmpc)
        assert isinstance(make_controller("terminal", example_spec), TerminalLaw)


class TestTerminalLaw:
    def test_scalar(self):
        assert terminal_law([[-0.5]], [2.0]) == pytest.approx(-1.0)

    def test_origin(self, example_ingredients):
        np.testing.assert_array_equal(terminal_law(example_ingredients.K, [0.0, 0.0]), 0.0)

    def test_keeps_terminal_set(self, example_system, example_ingredients):
        Xf = example_ingredients.Xf
        K = example_ingredients.K
        vertices = np.array([[-0.1, -0.1], [-0.1, 0.1], [0.1, -0.1], [0.1, 0.1]])

        for x in Xf.boundary_points(resolution_deg=15.0):
            u = terminal_law(K, x)
            assert example_system.U.contains_point(u, tol=1e-8)

            for w in vertices:
                x_next = step_dynamics(example_system.model, x, u, w)
                assert Xf.contains_point(x_next, tol=1e-8)

    def test_controller(self, example_spec):
        step = make_controller("terminal", example_spec)([0.1, 0.0], PreviewWindow.zeros(5, 2))

        assert step.solution is None
        assert not step.fallback
        np.testing.assert_allclose(step.u, example_spec.terminal.K @ np.array([0.1, 0.0]))


class TestPreviewMpc:
    def test_origin(self, example_spec):
        u, solution = preview_mpc_step(example_spec, [0.0, 0.0], PreviewWindow.zeros(5, 2))

        np.testing.assert_allclose(u, 0.0, atol=1e-12)
        assert solution.optimal

    def test_first_input(self, example_spec):
        window = PreviewWindow(WINDOW)

        u, solution = preview_mpc_step(example_spec, [-0.7, 0.4], window)

        np.testing.assert_array_equal(u, solve_ocp(example_spec, [-0.7, 0.4], window).u_seq[0])
        np.testing.assert_array_equal(u, solution.first_input)

    def test_candidate_feasible_for_vertex_disturbances(self, example_spec):
        vertices = [[s1 * 0.1, s2 * 0.1] for s1 in (-1.0, 1.0) for s2 in (-1.0, 1.0)]
        window = PreviewWindow(WINDOW, W=example_spec.W)
        starts = 0

        for x1 in np.linspace(-0.9, 0.9, 6):
            for x2 in np.linspace(-0.9, 0.9, 6):
                x = np.array([x1, x2])
                u, solution = preview_mpc_step(example_spec, x, window)
                if not solution.optimal:
                    continue
                starts += 1

                x_next = step_dynamics(example_spec.model, x, u, window.head)
                for w in vertices:
                    check = check_candidate_feasibility(
                        solution, x_next, shift_preview(window, w), example_spec
                    )
                    assert check.feasible, (x.tolist(), w, check.margin)

        assert starts >= 5

    def test_fallback(self, example_spec, caplog):
        x = np.array([1.5, 0.0])

        with caplog.at_level(logging.WARNING, logger="previewmpc.controllers"):
            step = make_controller("preview", example_spec)(x, PreviewWindow.zeros(5, 2))

        assert step.fallback
        assert step.solution.status == pm.Status.INFEASIBLE
        np.testing.assert_allclose(step.u, example_spec.terminal.K @ x)
        assert "fallback" in caplog.text


class TestNominalMpc:
    def test_equals_preview_for_zero_window(self, example_spec):
        u_nominal, _ = nominal_mpc_step(example_spec, [-0.7, 0.4])
        u_preview, _ = preview_mpc_step(example_spec, [-0.7, 0.4], PreviewWindow.zeros(5, 2))

        np.testing.assert_array_equal(u_nominal, u_preview)

    def test_origin(self, example_spec):
        u, _ = nominal_mpc_step(example_spec, [0.0, 0.0])

        np.testing.assert_allclose(u, 0.0, atol=1e-12)

    def test_prediction_error(self, example_spec):
        w = np.array([0.1, -0.05])

        u, solution = nominal_mpc_step(example_spec, [-0.7, 0.4])
        realized = step_dynamics(example_spec.model, [-0.7, 0.4], u, w)

        np.testing.assert_allclose(realized - solution.x_seq[1], example_spec.model.dynamics.Bw @ w)

    def test_ignores_window(self, example_spec):
        controller = make_controller("nominal", example_spec)

        a = controller([-0.7, 0.4], PreviewWindow(WINDOW))
        b = controller([-0.7, 0.4], PreviewWindow.zeros(5, 2))

        np.testing.assert_array_equal(a.u, b.u)


class TestDrmpc:
    def test_matched_split(self, example_system):
        lin = example_system.model.dynamics

        u_ff, residual = matched_split(lin.B, lin.Bw, np.array([0.1, 0.1]))

        np.testing.assert_allclose(u_ff, [-0.12])
        np.testing.assert_allclose(lin.B.T @ residual, 0.0, atol=1e-15)
        np.testing.assert_allclose(residual + lin.B @ u_ff, [0.1, 0.1])

    def test_fully_matched(self):
        B = np.array([[0.5], [1.0]])

        _, residual = matched_split(B, 2.0 * B, np.array([0.3]))

        np.testing.assert_allclose(residual, 0.0, atol=1e-15)

    def test_zero_disturbance_equals_nominal(self, example_spec):
        u_drmpc, _ = drmpc_step(example_spec, [-0.7, 0.4], [0.0, 0.0])
        u_nominal, _ = nominal_mpc_step(example_spec, [-0.7, 0.4])

        np.testing.assert_allclose(u_drmpc, u_nominal, atol=1e-12)

    def test_total_input_constrained(self, example_spec):
        w = np.array([0.1, 0.1])

        u, solution = drmpc_step(example_spec, [-0.7, 0.4], w)

        assert solution.optimal
        assert example_spec.U.contains_point(u, tol=1e-8)
        np.testing.assert_allclose(
            solution.x_seq[1], step_dynamics(example_spec.model, [-0.7, 0.4], u, w), atol=1e-12
        )

    def test_uses_window_head(self, example_spec):
        step = make_controller("drmpc", example_spec)([-0.7, 0.4], PreviewWindow(WINDOW))
        u, _ = drmpc_step(example_spec, [-0.7, 0.4], WINDOW[0])

        np.testing.assert_array_equal(step.u, u)

    def test_disturbance_outside_set(self, example_spec):
        with pytest.raises(pm.DisturbanceBoundError):
            drmpc_step(example_spec, [0.0, 0.0], [0.5, 0.0])
