"""Derivative-free constrained maximization by linear approximation.

The method keeps ``n + 1`` interpolation points (a simplex), fits linear models of
the objective and of every constraint through them, and takes trust-region steps
that solve the linearized problem as a small LP. Infeasible iterates are compared
through a merit function ``-f + mu * max_violation`` whose penalty ``mu`` only
grows. The trust-region radius never increases. When a trust step fails (too
short, or poor actual versus predicted progress) the simplex is first repaired by
one geometry step if it is badly shaped; on a well-shaped simplex the radius
shrinks instead, by a factor of ten while far from ``rho_end`` and then straight
to it.

Variables are expected to live in the unit simplex neighbourhood (normalized
allocations); ``rho_begin`` and ``rho_end`` are in those units.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from time import perf_counter

import numpy as np
import structlog
from scipy.optimize import linprog

from app import metrics
from app.errors import AllocatorError, InputError

LOGGER = structlog.get_logger(__name__)

Objective = Callable[[np.ndarray], float]
Constraints = Callable[[np.ndarray], Sequence[float] | np.ndarray]
RadiusHook = Callable[[float], None]

# simplex acceptability: vertices within BETA * rho of the best one, and at least
# ALPHA * rho away from their opposite face
ALPHA = 0.25
BETA = 2.1
GAMMA = 0.5
POOR_RATIO = 0.1
SHORT_STEP = 0.1
_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


class SolverError(AllocatorError):
    pass


class DimensionMismatch(SolverError, InputError):
    pass


class InvalidSolverConfig(SolverError, InputError):
    pass


class NonFiniteObjective(SolverError):
    def __init__(self, x: np.ndarray, value: float, what: str = "objective") -> None:
        super().__init__(f"{what} returned {value!r} at x={np.array2string(x, precision=6)}")
        self.x = x
        self.value = value


class StartKind(str, Enum):
    EQUAL_SPLIT = "equal_split"
    VERTEX_SWEEP = "vertex_sweep"
    USER = "user"


class SolverStatus(str, Enum):
    CONVERGED = "converged"
    MAX_EVALS = "max_evals"
    STALLED = "stalled"


@dataclass(frozen=True, slots=True)
class SolverConfig:
    rho_begin: float = 0.25
    rho_end: float = 1e-10
    max_evals: int = 10_000
    start: StartKind = StartKind.VERTEX_SWEEP
    user_start: tuple[float, ...] | None = None

    def check(self, n: int) -> None:
        if n < 1:
            raise DimensionMismatch(f"need at least one decision variable, got {n}")
        if not 0.0 < self.rho_end <= self.rho_begin:
            raise InvalidSolverConfig(
                f"need 0 < rho_end <= rho_begin, got rho_end={self.rho_end!r} rho_begin={self.rho_begin!r}"
            )
        if self.max_evals < n + 2:
            raise InvalidSolverConfig(f"max_evals must be at least n + 2 = {n + 2}, got {self.max_evals}")
        if self.start is StartKind.USER:
            if self.user_start is None:
                raise InvalidSolverConfig("start=user needs a user_start vector")
            if len(self.user_start) != n:
                raise DimensionMismatch(f"user_start has {len(self.user_start)} entries, expected {n}")


@dataclass(frozen=True, slots=True)
class SolverResult:
    x: tuple[float, ...]
    objective: float
    feasible: bool
    evals: int
    status: SolverStatus
    max_violation: float = 0.0
    radius_reductions: int = 0
    start_index: int = 0
    radii: tuple[float, ...] = field(default=(), repr=False)


class _BudgetExhausted(Exception):
    pass


@dataclass(slots=True)
class _Budget:
    """Evaluations left; one instance is shared by every start of a sweep."""

    remaining: int

    def spend(self) -> None:
        if self.remaining <= 0:
            raise _BudgetExhausted
        self.remaining -= 1


def reduce_radius(rho: float, rho_end: float) -> float:
    ratio = rho / rho_end
    if ratio <= 16.0:
        return rho_end
    if ratio <= 250.0:
        return math.sqrt(ratio) * rho_end
    return 0.1 * rho


class _Cobyla:
    """One solve from one starting point; owns its workspace."""

    def __init__(
        self,
        objective: Objective,
        constraints: Constraints,
        n: int,
        config: SolverConfig,
        on_radius_change: RadiusHook | None,
        budget: _Budget | None = None,
    ) -> None:
        self.objective = objective
        self.constraints = constraints
        self.n = n
        self.config = config
        self.on_radius_change = on_radius_change
        self.budget = budget if budget is not None else _Budget(config.max_evals)
        self.evals = 0
        self.m: int | None = None
        self.tol = config.rho_end
        self.best_feasible: tuple[float, np.ndarray] | None = None
        self.least_violation: tuple[float, float, np.ndarray] | None = None
        self.radii: list[float] = []

    # -- evaluation -------------------------------------------------------------

    def evaluate(self, x: np.ndarray) -> tuple[float, np.ndarray, float]:
        self.budget.spend()
        x = np.array(x, dtype=float)
        value = float(self.objective(x))
        self.evals += 1
        if not math.isfinite(value):
            raise NonFiniteObjective(x, value)
        c = np.asarray(self.constraints(x), dtype=float).ravel()
        if self.m is None:
            self.m = c.size
        elif c.size != self.m:
            raise DimensionMismatch(f"constraints returned {c.size} values, expected {self.m}")
        if not np.all(np.isfinite(c)):
            raise NonFiniteObjective(x, float(c[~np.isfinite(c)][0]), what="constraints")
        f = -value
        cv = max(0.0, -float(c.min())) if c.size else 0.0
        if cv <= self.tol and (self.best_feasible is None or f < self.best_feasible[0]):
            self.best_feasible = (f, x)
        if self.least_violation is None or (cv, f) < self.least_violation[:2]:
            self.least_violation = (cv, f, x)
        return f, c, cv

    def _set_radius(self, rho: float) -> None:
        self.radii.append(rho)
        if self.on_radius_change is not None:
            self.on_radius_change(rho)

    # -- main loop --------------------------------------------------------------

    def run(self, x0: np.ndarray) -> SolverResult:
        rho = self.config.rho_begin
        self._set_radius(rho)
        status = SolverStatus.CONVERGED
        try:
            sim, fval, cval, cvs = self._initial_simplex(np.asarray(x0, dtype=float), rho)
            mu = 0.0
            # the last trust step was rejected
            failed = False
            unsolvable = False
            while True:
                best = self._select_best(fval, cvs, mu)
                if best != 0:
                    for arr in (sim, fval, cval, cvs):
                        arr[[0, best]] = arr[[best, 0]]

                disp = sim[1:] - sim[0]
                try:
                    inv = np.linalg.inv(disp)
                except np.linalg.LinAlgError:
                    inv = None
                if inv is None or not np.all(np.isfinite(inv)):
                    self._rebuild(sim, fval, cval, cvs, rho)
                    continue

                grad_f = inv @ (fval[1:] - fval[0])
                grad_c = inv @ (cval[1:] - cval[0])
                dist = np.linalg.norm(disp, axis=1)
                sigma = 1.0 / np.linalg.norm(inv, axis=0)

                if failed:
                    failed = False
                    if dist.max() > BETA * rho or sigma.min() < ALPHA * rho:
                        k = int(np.argmax(dist)) if dist.max() > BETA * rho else int(np.argmin(sigma))
                        step = GAMMA * rho * inv[:, k] * sigma[k]
                        if self._merit_model(-step, grad_f, grad_c, cval[0], mu) < self._merit_model(
                            step, grad_f, grad_c, cval[0], mu
                        ):
                            step = -step
                        x_new = sim[0] + step
                        f_new, c_new, cv_new = self.evaluate(x_new)
                        sim[k + 1], fval[k + 1], cval[k + 1], cvs[k + 1] = x_new, f_new, c_new, cv_new
                        continue
                    if rho <= self.config.rho_end:
                        if unsolvable:
                            status = SolverStatus.STALLED
                        break
                    rho = reduce_radius(rho, self.config.rho_end)
                    self._set_radius(rho)
                    continue

                d = self._trust_step(grad_f, grad_c, cval[0], rho)
                unsolvable = d is None
                if d is None or np.linalg.norm(d) < SHORT_STEP * rho:
                    failed = True
                    continue

                pred_f = -float(grad_f @ d)
                cv_model = max(0.0, -float((cval[0] + grad_c.T @ d).min())) if self.m else 0.0
                pred_cv = cvs[0] - cv_model
                if pred_cv > 0.0:
                    barmu = -pred_f / pred_cv
                    if mu < 1.5 * barmu:
                        mu = 2.0 * barmu
                        if self._select_best(fval, cvs, mu) != 0:
                            continue

                x_new = sim[0] + d
                f_new, c_new, cv_new = self.evaluate(x_new)
                phi_best = fval[0] + mu * cvs[0]
                phi_new = f_new + mu * cv_new
                predicted = pred_f + mu * pred_cv
                ratio = (phi_best - phi_new) / predicted if predicted > 0.0 else -1.0

                weights = np.abs(inv.T @ d) * np.maximum(1.0, dist / rho)
                k = int(np.argmax(weights))
                if phi_new < phi_best or weights[k] > 1.0:
                    sim[k + 1], fval[k + 1], cval[k + 1], cvs[k + 1] = x_new, f_new, c_new, cv_new
                failed = ratio < POOR_RATIO
        except _BudgetExhausted:
            status = SolverStatus.MAX_EVALS
        return self._result(status)

    def _initial_simplex(
        self, x0: np.ndarray, rho: float
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        n = self.n
        f0, c0, cv0 = self.evaluate(x0)
        sim = np.empty((n + 1, n))
        fval = np.empty(n + 1)
        cval = np.empty((n + 1, self.m or 0))
        cvs = np.empty(n + 1)
        sim[0], fval[0], cval[0], cvs[0] = x0, f0, c0, cv0
        for j in range(n):
            x = x0.copy()
            # step inwards from the upper half of the unit range
            x[j] += -rho if x0[j] > 0.5 else rho
            sim[j + 1] = x
            fval[j + 1], cval[j + 1], cvs[j + 1] = self.evaluate(x)
        return sim, fval, cval, cvs

    def _rebuild(self, sim: np.ndarray, fval: np.ndarray, cval: np.ndarray, cvs: np.ndarray, rho: float) -> None:
        LOGGER.debug("solver.rebuild_simplex", rho=rho)
        for j in range(self.n):
            x = sim[0].copy()
            x[j] += -rho if x[j] > 0.5 else rho
            sim[j + 1] = x
            fval[j + 1], cval[j + 1], cvs[j + 1] = self.evaluate(x)

    @staticmethod
    def _select_best(fval: np.ndarray, cvs: np.ndarray, mu: float) -> int:
        phi = fval + mu * cvs
        best = 0
        for j in range(1, phi.size):
            if phi[j] < phi[best] or (phi[j] == phi[best] and cvs[j] < cvs[best]):
                best = j
        return best

    @staticmethod
    def _merit_model(d: np.ndarray, grad_f: np.ndarray, grad_c: np.ndarray, c0: np.ndarray, mu: float) -> float:
        violation = max(0.0, -float((c0 + grad_c.T @ d).min())) if c0.size else 0.0
        return float(grad_f @ d) + mu * violation

    def _trust_step(self, grad_f: np.ndarray, grad_c: np.ndarray, c0: np.ndarray, rho: float) -> np.ndarray | None:
        """Minimize the linear model over the box ``|d_i| <= rho / sqrt(n)``.

        The box sits inside the ball of radius ``rho``. Works in units of the box
        half-width. If the linearized constraints cannot all be met inside the
        box, the least achievable violation is allowed instead.
        """
        n = self.n
        m = c0.size
        half = rho / math.sqrt(n)
        bounds = [(-1.0, 1.0)] * n
        rhs = c0 / half
        corner = -np.sign(grad_f)
        if not m or (float(c0.min()) >= 0.0 and float((rhs + grad_c.T @ corner).min()) >= 0.0):
            return half * corner

        slack = 0.0
        if float(c0.min()) < 0.0:
            cost = np.zeros(n + 1)
            cost[-1] = 1.0
            a_ub = np.hstack([-grad_c.T, -np.ones((m, 1))])
            phase1 = linprog(
                cost, A_ub=a_ub, b_ub=rhs, bounds=bounds + [(0.0, None)], method="highs", options=_HIGHS_OPTIONS
            )
            if phase1.status != 0:
                return None
            slack = float(phase1.x[-1])
            fallback = half * np.asarray(phase1.x[:n])
        else:
            fallback = np.zeros(n)

        scale = float(np.abs(grad_f).max())
        cost = grad_f / scale if scale > 0.0 else np.zeros(n)
        phase2 = linprog(
            cost,
            A_ub=-grad_c.T,
            b_ub=rhs + slack * (1.0 + 1e-9),
            bounds=bounds,
            method="highs",
            options=_HIGHS_OPTIONS,
        )
        if phase2.status != 0:
            return fallback
        return half * np.asarray(phase2.x)

    def _result(self, status: SolverStatus) -> SolverResult:
        reductions = len(self.radii) - 1
        if self.best_feasible is not None:
            f, x = self.best_feasible
            feasible = True
            c = np.asarray(self.constraints(x), dtype=float)
            violation = max(0.0, -float(c.min())) if c.size else 0.0
        else:
            violation, f, x = self.least_violation  # type: ignore[misc]
            feasible = False
        return SolverResult(
            x=tuple(float(v) for v in x),
            objective=-f,
            feasible=feasible,
            evals=self.evals,
            status=status,
            max_violation=violation,
            radius_reductions=reductions,
            radii=tuple(self.radii),
        )


def _solve_from(
    x0: np.ndarray,
    objective: Objective,
    constraints: Constraints,
    n: int,
    config: SolverConfig,
    on_radius_change: RadiusHook | None,
    budget: _Budget | None = None,
) -> SolverResult:
    started = perf_counter()
    result = _Cobyla(objective, constraints, n, config, on_radius_change, budget).run(x0)
    metrics.observe_solve(
        latency_s=perf_counter() - started,
        evals=result.evals,
        status=result.status.value,
        radius_reductions=result.radius_reductions,
    )
    return result


def start_points(n: int, config: SolverConfig) -> list[np.ndarray]:
    """Starting points in sweep order: each vertex e_j, the origin, then equal split."""
    if config.start is StartKind.USER:
        return [np.asarray(config.user_start, dtype=float)]
    equal = np.full(n, 1.0 / n)
    if config.start is StartKind.EQUAL_SPLIT:
        return [equal]
    points = [np.eye(n)[j] for j in range(n)] + [np.zeros(n), equal]
    unique: list[np.ndarray] = []
    for point in points:
        if not any(np.array_equal(point, seen) for seen in unique):
            unique.append(point)
    return unique


def _better(candidate: SolverResult, incumbent: SolverResult) -> bool:
    if candidate.feasible != incumbent.feasible:
        return candidate.feasible
    if not candidate.feasible:
        return candidate.max_violation < incumbent.max_violation
    return candidate.objective > incumbent.objective


def vertex_sweep_maximize(
    objective: Objective,
    constraints: Constraints,
    n: int,
    config: SolverConfig | None = None,
    *,
    on_radius_change: RadiusHook | None = None,
) -> SolverResult:
    """Run :func:`maximize` from every vertex plus the equal split; keep the best.

    ``config.max_evals`` bounds the whole sweep. Once it is spent the remaining
    starts are skipped and the best result so far comes back with status
    ``MAX_EVALS``. Ties go to the earliest start.
    """
    config = config or SolverConfig()
    config.check(n)
    budget = _Budget(config.max_evals)
    best: SolverResult | None = None
    exhausted = False
    for index, x0 in enumerate(start_points(n, SolverConfig(start=StartKind.VERTEX_SWEEP))):
        if budget.remaining <= 0:
            exhausted = True
            break
        result = _solve_from(x0, objective, constraints, n, config, on_radius_change, budget)
        LOGGER.debug(
            "solver.start_done",
            start=index,
            objective=result.objective,
            feasible=result.feasible,
            status=result.status.value,
            evals=result.evals,
        )
        if best is None or _better(result, best):
            best = replace(result, start_index=index)
        if result.status is SolverStatus.MAX_EVALS:
            exhausted = True
            break
    assert best is not None
    status = SolverStatus.MAX_EVALS if exhausted else best.status
    if exhausted:
        LOGGER.warning("solver.sweep_budget_spent", max_evals=config.max_evals, best_start=best.start_index)
    return replace(best, evals=config.max_evals - budget.remaining, status=status)


def maximize(
    objective: Objective,
    constraints: Constraints,
    n: int,
    config: SolverConfig | None = None,
    *,
    on_radius_change: RadiusHook | None = None,
) -> SolverResult:
    """Maximize ``objective`` subject to ``constraints(x) >= 0``.

    Deterministic for identical inputs. Returns the best feasible point seen; when
    none was found the least-violating point comes back with ``feasible=False``.
    """
    config = config or SolverConfig()
    config.check(n)
    if config.start is StartKind.VERTEX_SWEEP:
        return vertex_sweep_maximize(objective, constraints, n, config, on_radius_change=on_radius_change)
    (x0,) = start_points(n, config)
    result = _solve_from(x0, objective, constraints, n, config, on_radius_change)
    LOGGER.debug("solver.done", objective=result.objective, status=result.status.value, evals=result.evals)
    return result
