import hypothesis as hp
import numpy as np
import pytest
from hypothesis import strategies as st
from scipy.optimize import linprog

import previewmpc as pm
from previewmpc.solvers import LpProblem, Status, solve_lp


def random_bounded_lp(seed: int, d: int, p: int) -> LpProblem:
    rng = np.random.default_rng(seed)
    H = np.vstack([rng.normal(size=(p, d)), np.eye(d), -np.eye(d)])
    g = np.concatenate([rng.uniform(0.1, 2.0, size=p), np.full(2 * d, 5.0)])
    c = rng.normal(size=d)
    return LpProblem(c, H, g)


class TestSolveLp:
    def test_box(self):
        problem = LpProblem([1.0, 2.0], np.vstack([np.eye(2), -np.eye(2)]), [1.0, 3.0, 1.0, 1.0])

        result = solve_lp(problem)

        assert result.status == Status.OPTIMAL
        assert result.value == pytest.approx(7.0)
        np.testing.assert_allclose(result.x, [1.0, 3.0], atol=1e-9)
        assert result.kkt_residual <= 1e-9

    def test_unbounded(self):
        problem = LpProblem([1.0, 0.0], [[0.0, 1.0]], [1.0])

        result = solve_lp(problem)

        assert result.status == Status.UNBOUNDED
        assert result.value == np.inf

    def test_infeasible(self):
        problem = LpProblem([1.0], [[1.0], [-1.0]], [-1.0, -1.0])

        result = solve_lp(problem)

        assert result.status == Status.INFEASIBLE
        assert result.value == -np.inf
        assert np.all(np.isnan(result.x))

    def test_no_constraints(self):
        assert solve_lp(LpProblem([0.0, 0.0], np.zeros((0, 2)), [])).optimal
        assert solve_lp(LpProblem([1.0, 0.0], np.zeros((0, 2)), [])).status == Status.UNBOUNDED

    def test_degenerate_vertex(self):
        # three constraints meet at (1, 1)
        H = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
        g = [1.0, 1.0, 2.0, 0.0, 0.0]

        result = solve_lp(LpProblem([1.0, 1.0], H, g))

        assert result.optimal
        assert result.value == pytest.approx(2.0)
        assert result.kkt_residual <= 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(pm.DimensionError):
            LpProblem([1.0, 2.0], [[1.0, 0.0, 0.0]], [1.0])

    def test_deterministic(self):
        problem = random_bounded_lp(3, 4, 12)

        results = [solve_lp(problem) for _ in range(3)]

        for result in results[1:]:
            assert np.array_equal(result.x, results[0].x)
            assert result.iterations == results[0].iterations

    @hp.given(
        seed=st.integers(min_value=0, max_value=10_000),
        d=st.integers(min_value=1, max_value=6),
        p=st.integers(min_value=0, max_value=20),
    )
    @hp.settings(deadline=None, max_examples=60)
    def test_matches_linprog(self, seed, d, p):
        problem = random_bounded_lp(seed, d, p)

        result = solve_lp(problem)
        reference = linprog(
            -problem.c, A_ub=problem.H, b_ub=problem.g, bounds=[(None, None)] * d, method="highs"
        )

        assert result.optimal
        assert result.value == pytest.approx(-reference.fun, abs=1e-7)
        assert result.kkt_residual <= 1e-7
