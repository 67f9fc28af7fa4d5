from __future__ import annotations

import math

import numpy as np
import pytest

from app.solver import (
    DimensionMismatch,
    InvalidSolverConfig,
    NonFiniteObjective,
    SolverConfig,
    SolverStatus,
    StartKind,
    maximize,
    reduce_radius,
    start_points,
    vertex_sweep_maximize,
)

EQUAL = SolverConfig(rho_begin=0.25, rho_end=1e-8, max_evals=5000, start=StartKind.EQUAL_SPLIT)


def _box(x: np.ndarray) -> np.ndarray:
    """Unit simplex: budget first, then nonnegativity."""
    return np.concatenate([[1.0 - x.sum()], x])


class TestMaximize:
    def test_interior_quadratic_optimum(self) -> None:
        def objective(x: np.ndarray) -> float:
            return -((x[0] - 0.3) ** 2) - (x[1] - 0.6) ** 2

        result = maximize(objective, _box, 2, EQUAL)
        assert result.feasible
        assert result.status is SolverStatus.CONVERGED
        assert result.x == pytest.approx((0.3, 0.6), abs=1e-3)

    def test_linear_objective_hits_the_budget(self) -> None:
        result = maximize(lambda x: float(2.0 * x[0] + x[1]), _box, 2, EQUAL)
        assert result.feasible
        assert result.objective == pytest.approx(2.0, abs=1e-6)
        assert result.x[0] == pytest.approx(1.0, abs=1e-6)

    def test_curved_constraint(self) -> None:
        def disc(x: np.ndarray) -> np.ndarray:
            return np.array([1.0 - x[0] ** 2 - x[1] ** 2])

        result = maximize(lambda x: float(x[0] + x[1]), disc, 2, EQUAL)
        assert result.feasible
        assert result.x == pytest.approx((math.sqrt(0.5), math.sqrt(0.5)), abs=1e-3)
        assert result.max_violation <= 1e-8

    def test_infeasible_start_recovers(self) -> None:
        config = SolverConfig(rho_begin=0.25, rho_end=1e-8, max_evals=5000, start=StartKind.USER, user_start=(2.0, 2.0))

        def objective(x: np.ndarray) -> float:
            return -((x[0] - 0.2) ** 2) - (x[1] - 0.2) ** 2

        result = maximize(objective, _box, 2, config)
        assert result.feasible
        assert result.x == pytest.approx((0.2, 0.2), abs=1e-3)

    def test_infeasible_problem_reports_least_violation(self) -> None:
        def contradictory(x: np.ndarray) -> np.ndarray:
            return np.array([x[0] - 1.0, -1.0 - x[0]])

        result = maximize(lambda x: float(x[0]), contradictory, 1, EQUAL)
        assert not result.feasible
        assert result.max_violation == pytest.approx(1.0, abs=1e-2)

    def test_budget_exhaustion(self) -> None:
        config = SolverConfig(rho_begin=0.25, rho_end=1e-8, max_evals=4, start=StartKind.EQUAL_SPLIT)
        result = maximize(lambda x: float(-x @ x), _box, 2, config)
        assert result.status is SolverStatus.MAX_EVALS
        assert result.evals == 4

    def test_deterministic(self) -> None:
        def objective(x: np.ndarray) -> float:
            return float(np.log1p(x).sum())

        first = maximize(objective, _box, 3)
        second = maximize(objective, _box, 3)
        assert first == second

    def test_radius_never_increases(self) -> None:
        seen: list[float] = []
        result = maximize(lambda x: -float((x - 0.25) @ (x - 0.25)), _box, 3, EQUAL, on_radius_change=seen.append)
        assert seen == list(result.radii)
        assert all(later <= earlier for earlier, later in zip(seen, seen[1:]))
        assert seen[0] == EQUAL.rho_begin
        assert seen[-1] == EQUAL.rho_end
        assert result.radius_reductions == len(seen) - 1


class TestVertexSweep:
    def test_start_order(self) -> None:
        points = start_points(2, SolverConfig())
        expected = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.5, 0.5]]
        assert [p.tolist() for p in points] == expected

    def test_duplicate_starts_dropped(self) -> None:
        assert [p.tolist() for p in start_points(1, SolverConfig())] == [[1.0], [0.0]]

    def test_evals_summed_over_starts(self) -> None:
        config = SolverConfig(rho_begin=0.25, rho_end=1e-6, max_evals=2000)
        result = vertex_sweep_maximize(lambda x: float(x[0] - x[1]), _box, 2, config)
        from_first_vertex = SolverConfig(rho_end=1e-6, max_evals=2000, start=StartKind.USER, user_start=(1.0, 0.0))
        single = maximize(lambda x: float(x[0] - x[1]), _box, 2, from_first_vertex)
        assert result.evals > single.evals
        assert result.x == pytest.approx((1.0, 0.0), abs=1e-6)

    def test_tie_goes_to_earliest_start(self) -> None:
        result = vertex_sweep_maximize(lambda x: 1.0, _box, 2, SolverConfig(rho_end=1e-4, max_evals=500))
        assert result.start_index == 0

    def test_budget_shared_across_starts(self) -> None:
        config = SolverConfig(max_evals=30)
        result = vertex_sweep_maximize(lambda x: float(x @ [1.0, 0.5, 0.2]), _box, 3, config)
        assert result.status is SolverStatus.MAX_EVALS
        assert result.evals == 30
        assert result.feasible

    def test_default_budget_not_spent_on_five_variables(self) -> None:
        weights = np.array([1.0, 0.9, 0.5, 0.2, 0.1])
        result = maximize(lambda x: float(x @ weights), _box, 5)
        assert result.status is SolverStatus.CONVERGED
        assert result.evals < SolverConfig().max_evals // 2
        assert result.x == pytest.approx((1.0, 0.0, 0.0, 0.0, 0.0), abs=1e-6)


class TestRadiusSchedule:
    def test_tenfold_while_far_from_the_end(self) -> None:
        assert reduce_radius(0.25, 1e-10) == pytest.approx(0.025)

    def test_geometric_mean_step_near_the_end(self) -> None:
        assert reduce_radius(2e-8, 1e-10) == pytest.approx(math.sqrt(200.0) * 1e-10)

    def test_snaps_to_the_end(self) -> None:
        assert reduce_radius(1.5e-9, 1e-10) == 1e-10


class TestValidation:
    def test_rho_end_above_rho_begin(self) -> None:
        with pytest.raises(InvalidSolverConfig):
            maximize(lambda x: 0.0, _box, 2, SolverConfig(rho_begin=1e-3, rho_end=1e-2))

    def test_max_evals_too_small(self) -> None:
        with pytest.raises(InvalidSolverConfig):
            maximize(lambda x: 0.0, _box, 2, SolverConfig(max_evals=3))

    def test_no_variables(self) -> None:
        with pytest.raises(DimensionMismatch):
            maximize(lambda x: 0.0, _box, 0)

    def test_user_start_length(self) -> None:
        with pytest.raises(DimensionMismatch):
            maximize(lambda x: 0.0, _box, 2, SolverConfig(start=StartKind.USER, user_start=(0.1,)))

    def test_user_start_missing(self) -> None:
        with pytest.raises(InvalidSolverConfig):
            maximize(lambda x: 0.0, _box, 2, SolverConfig(start=StartKind.USER))

    def test_non_finite_objective(self) -> None:
        with pytest.raises(NonFiniteObjective) as exc:
            maximize(lambda x: float("nan"), _box, 2, EQUAL)
        assert exc.value.x.shape == (2,)

    def test_constraint_count_must_not_change(self) -> None:
        def shifting(x: np.ndarray) -> np.ndarray:
            return np.ones(1 if x[0] > 0.5 else 2)

        with pytest.raises(DimensionMismatch):
            maximize(lambda x: float(x[0]), shifting, 1, SolverConfig(start=StartKind.USER, user_start=(0.6,)))
