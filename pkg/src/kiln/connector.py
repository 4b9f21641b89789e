"""Iterative Monte Carlo map/reduce connector.

One iteration generates a burst of independent annealing tasks (map),
picks the cheapest surviving configuration as the new incumbent with
elitism (reduce), and loops until the cost threshold or the iteration cap
is reached. All functions here are pure over value inputs; the
MonteCarloConnector class just binds them to one run spec so the scheduler
can drive them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .hrmc import Configuration, cost, make_instance, run_payload_task
from .model import ContractViolationError, RunSpec, TaskRecord
from .platforms import TaskOutcome
from .rng import derive_task_seed


@dataclass(frozen=True)
class AnnealingSchedule:
    t_initial: float
    t_final: float
    spread_factor: float


@dataclass(frozen=True)
class ConvergenceCriterion:
    cost_threshold: float
    max_iterations: int


@dataclass(frozen=True)
class BurstInput:
    iteration: int
    tasks: tuple[TaskRecord, ...]


@dataclass(frozen=True)
class ReducedResult:
    iteration: int
    best_task_index: int
    best_cost: float
    best_configuration: Configuration
    cost_trace: tuple[tuple[int, float], ...]


def schedule_temperature(
    iteration: int, schedule: AnnealingSchedule, max_iterations: int
) -> float:
    """Geometric cooling: t_initial at iteration 0, t_final at the cap."""
    ratio = schedule.t_final / schedule.t_initial
    return schedule.t_initial * ratio ** (iteration / max_iterations)


def task_temperature(
    k: int, n: int, base_temperature: float, spread_factor: float
) -> float:
    """Spread burst temperatures log-symmetrically around the schedule value.

    Exponents run from -1/2 to +1/2 across the burst, so spread_factor=1
    collapses to a single temperature and n=1 sits exactly on it.
    """
    exponent = (k - (n - 1) / 2) / max(n - 1, 1)
    return base_temperature * spread_factor**exponent


def map_phase(
    iteration: int,
    incumbent: Configuration,
    spec: RunSpec,
    schedule: AnnealingSchedule,
) -> BurstInput:
    """Generate one burst: tasks_per_burst tasks, unique seeds, spread temps.

    Every task in the burst will start its chain from the incumbent; the
    task records carry seed and parameters, the scheduler carries the
    incumbent to execution.
    """
    payload = spec.payload
    if len(incumbent.points) != payload.n_points:
        raise ContractViolationError(
            f"incumbent has {len(incumbent.points)} points, spec says {payload.n_points}"
        )
    n = spec.compute.tasks_per_burst
    base = schedule_temperature(iteration, schedule, payload.max_iterations)
    tasks = []
    for k in range(n):
        tasks.append(
            TaskRecord(
                task_index=k,
                iteration=iteration,
                seed=derive_task_seed(spec.master_seed, iteration, k),
                params=replace(
                    payload,
                    temperature=task_temperature(k, n, base, schedule.spread_factor),
                ),
            )
        )
    return BurstInput(iteration=iteration, tasks=tuple(tasks))


def reduce_phase(
    outcomes: list[TaskOutcome], previous: ReducedResult | None
) -> ReducedResult:
    """Pick the burst's cheapest result; keep the old incumbent if cheaper.

    Ties break toward the lowest task index. The elitism rule means the
    cost trace can never increase.
    """
    if not outcomes:
        raise ContractViolationError("reduce_phase called with no outcomes")
    for o in outcomes:
        if o.result is None:
            raise ContractViolationError(
                f"reduce_phase got a faulted outcome for task {o.task_index}"
            )
    iteration = 0 if previous is None else previous.iteration + 1
    winner = min(outcomes, key=lambda o: (o.result["best_cost"], o.task_index))
    best_cost = winner.result["best_cost"]
    best_index = winner.task_index
    best_config = Configuration(tuple((x, y) for x, y in winner.result["best_points"]))
    if previous is not None and previous.best_cost < best_cost:
        best_cost = previous.best_cost
        best_index = previous.best_task_index
        best_config = previous.best_configuration
    trace = (() if previous is None else previous.cost_trace) + ((iteration, best_cost),)
    return ReducedResult(
        iteration=iteration,
        best_task_index=best_index,
        best_cost=best_cost,
        best_configuration=best_config,
        cost_trace=trace,
    )


def converged(result: ReducedResult, criterion: ConvergenceCriterion) -> bool:
    """Done when under the cost threshold or out of iterations."""
    return (
        result.best_cost <= criterion.cost_threshold
        or result.iteration + 1 >= criterion.max_iterations
    )


def next_batch(
    result: ReducedResult,
    iteration: int,
    spec: RunSpec,
    schedule: AnnealingSchedule,
) -> BurstInput:
    """Regenerate the next burst from the reduced incumbent."""
    criterion = ConvergenceCriterion(
        spec.payload.cost_threshold, spec.payload.max_iterations
    )
    if converged(result, criterion):
        raise ContractViolationError("next_batch called after convergence")
    return map_phase(iteration + 1, result.best_configuration, spec, schedule)


class MonteCarloConnector:
    """Binds the map/reduce functions and the payload to one run spec.

    Builds the hidden-target instance once (target histogram plus the
    starting configuration) and exposes exactly the surface the scheduler
    drives: map_phase, run_task, reduce_phase, converged.
    """

    def __init__(self, spec: RunSpec):
        self.spec = spec
        p = spec.payload
        self.schedule = AnnealingSchedule(p.t_initial, p.t_final, p.spread_factor)
        self.criterion = ConvergenceCriterion(p.cost_threshold, p.max_iterations)
        self.target, self._initial = make_instance(
            p.n_points, p.bins, p.r_max, p.instance_seed, spec.master_seed
        )

    def initial_configuration(self) -> Configuration:
        return self._initial

    def map_phase(self, iteration: int, incumbent: Configuration) -> BurstInput:
        return map_phase(iteration, incumbent, self.spec, self.schedule)

    def run_task(self, task: TaskRecord, incumbent: Configuration) -> dict:
        p = task.params
        return run_payload_task(
            task_index=task.task_index,
            seed=task.seed,
            temperature=p.temperature,
            steps=p.steps,
            incumbent=incumbent,
            target=self.target,
            bins=p.bins,
            r_max=p.r_max,
            weight=p.energy_weight,
            r0=p.r0,
            r_floor=p.r_floor,
            sigma=p.sigma,
        )

    def reduce_phase(
        self, outcomes: list[TaskOutcome], previous: ReducedResult | None
    ) -> ReducedResult:
        return reduce_phase(outcomes, previous)

    def converged(self, result: ReducedResult) -> bool:
        return converged(result, self.criterion)

    def result_document(self, result: ReducedResult) -> dict:
        """Iteration summary in the task wire format plus the cost trace."""
        p = self.spec.payload
        breakdown = cost(
            result.best_configuration,
            self.target,
            p.bins,
            p.r_max,
            p.energy_weight,
            p.r0,
            p.r_floor,
        )
        return {
            "iteration": result.iteration,
            "best_task_index": result.best_task_index,
            "best_cost": result.best_cost,
            "chi2": breakdown.chi2,
            "energy": breakdown.energy,
            "best_points": [[x, y] for x, y in result.best_configuration.points],
            "cost_trace": [[i, c] for i, c in result.cost_trace],
        }
