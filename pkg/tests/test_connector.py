"""Burst generation, reduction with elitism, and convergence."""

import pytest

from kiln.connector import (
    AnnealingSchedule,
    ConvergenceCriterion,
    MonteCarloConnector,
    ReducedResult,
    converged,
    map_phase,
    next_batch,
    reduce_phase,
    schedule_temperature,
    task_temperature,
)
from kiln.hrmc import Configuration, random_configuration
from kiln.model import ContractViolationError, PayloadParams
from kiln.platforms import TaskOutcome
from kiln.rng import Stream, derive_task_seed

from conftest import make_spec


def _outcome(task_index, best_cost, points=((0.1, 0.1), (0.2, 0.2))):
    return TaskOutcome(
        task_index=task_index,
        result={
            "task_index": task_index,
            "best_cost": best_cost,
            "best_points": [list(p) for p in points],
        },
        fault=None,
        ticks=1,
    )


class TestTemperatures:
    def test_single_task_sits_on_schedule(self):
        schedule = AnnealingSchedule(1.0, 0.01, spread_factor=3.0)
        base = schedule_temperature(4, schedule, max_iterations=20)
        assert task_temperature(0, 1, base, 3.0) == pytest.approx(base)

    def test_unit_spread_collapses(self):
        schedule = AnnealingSchedule(2.0, 0.5, spread_factor=1.0)
        base = schedule_temperature(3, schedule, max_iterations=10)
        temps = [task_temperature(k, 4, base, 1.0) for k in range(4)]
        assert all(t == pytest.approx(base) for t in temps)

    def test_geometric_endpoints(self):
        schedule = AnnealingSchedule(1.0, 0.01, 2.0)
        assert schedule_temperature(0, schedule, 20) == pytest.approx(1.0)
        assert schedule_temperature(20, schedule, 20) == pytest.approx(0.01)

    def test_cooling_monotone(self):
        schedule = AnnealingSchedule(1.0, 0.01, 2.0)
        temps = [schedule_temperature(i, schedule, 20) for i in range(21)]
        assert temps == sorted(temps, reverse=True)
        assert all(t > 0 for t in temps)

    def test_spread_symmetric_in_log_space(self):
        temps = [task_temperature(k, 5, 1.0, 4.0) for k in range(5)]
        assert temps[2] == pytest.approx(1.0)  # middle task on the schedule
        assert temps[0] * temps[4] == pytest.approx(1.0)  # log-symmetric
        assert temps[1] * temps[3] == pytest.approx(1.0)


class TestMapPhase:
    def test_burst_shape_and_seeds(self, tmp_path):
        spec = make_spec(tmp_path)
        schedule = AnnealingSchedule(1.0, 0.01, 2.0)
        incumbent = random_configuration(spec.payload.n_points, Stream(1))
        burst = map_phase(3, incumbent, spec, schedule)
        assert burst.iteration == 3
        assert len(burst.tasks) == spec.compute.tasks_per_burst
        for k, task in enumerate(burst.tasks):
            assert task.task_index == k
            assert task.iteration == 3
            assert task.seed == derive_task_seed(spec.master_seed, 3, k)
            assert task.params.temperature > 0
        seeds = {t.seed for t in burst.tasks}
        assert len(seeds) == len(burst.tasks)

    def test_incumbent_size_checked(self, tmp_path):
        spec = make_spec(tmp_path)
        wrong = random_configuration(spec.payload.n_points + 1, Stream(1))
        with pytest.raises(ContractViolationError):
            map_phase(0, wrong, spec, AnnealingSchedule(1.0, 0.01, 2.0))

    def test_seeds_unique_across_whole_run(self, tmp_path):
        spec = make_spec(tmp_path)
        schedule = AnnealingSchedule(1.0, 0.01, 2.0)
        incumbent = random_configuration(spec.payload.n_points, Stream(1))
        seeds = set()
        count = 0
        for iteration in range(spec.payload.max_iterations):
            for task in map_phase(iteration, incumbent, spec, schedule).tasks:
                seeds.add(task.seed)
                count += 1
        assert len(seeds) == count


class TestReducePhase:
    def test_argmin_selection(self):
        result = reduce_phase([_outcome(0, 3.0), _outcome(1, 1.5), _outcome(2, 2.0)], None)
        assert result.best_task_index == 1
        assert result.best_cost == 1.5
        assert result.iteration == 0
        assert result.cost_trace == ((0, 1.5),)

    def test_tie_breaks_to_lowest_index(self):
        result = reduce_phase([_outcome(0, 2.0), _outcome(1, 2.0)], None)
        assert result.best_task_index == 0

    def test_elitism_retains_previous_incumbent(self):
        keeper = Configuration(((0.5, 0.5), (0.6, 0.6)))
        previous = ReducedResult(
            iteration=0, best_task_index=3, best_cost=1.2,
            best_configuration=keeper, cost_trace=((0, 1.2),),
        )
        result = reduce_phase([_outcome(0, 1.5)], previous)
        assert result.best_cost == 1.2
        assert result.best_task_index == 3
        assert result.best_configuration is keeper
        assert result.iteration == 1
        assert result.cost_trace == ((0, 1.2), (1, 1.2))

    def test_improvement_replaces_incumbent(self):
        previous = ReducedResult(
            iteration=0, best_task_index=3, best_cost=1.2,
            best_configuration=Configuration(((0.5, 0.5),)), cost_trace=((0, 1.2),),
        )
        result = reduce_phase([_outcome(2, 0.7)], previous)
        assert result.best_cost == 0.7
        assert result.best_task_index == 2

    def test_empty_outcomes_rejected(self):
        with pytest.raises(ContractViolationError):
            reduce_phase([], None)

    def test_faulted_outcome_rejected(self):
        from kiln.platforms import FaultKind

        bad = TaskOutcome(0, None, FaultKind.CRASH, ticks=1)
        with pytest.raises(ContractViolationError):
            reduce_phase([bad], None)

    def test_trace_non_increasing_over_random_sequences(self):
        stream = Stream(88)
        previous = None
        for _ in range(200):
            outcomes = [
                _outcome(i, stream.next_float() * 10) for i in range(4)
            ]
            previous = reduce_phase(outcomes, previous)
        costs = [c for _, c in previous.cost_trace]
        assert costs == sorted(costs, reverse=True)


class TestConverged:
    def test_threshold_reached(self):
        result = ReducedResult(0, 0, 0.04, Configuration(((0.1, 0.1),)), ((0, 0.04),))
        assert converged(result, ConvergenceCriterion(0.05, 20))

    def test_above_threshold_not_done(self):
        result = ReducedResult(0, 0, 0.06, Configuration(((0.1, 0.1),)), ((0, 0.06),))
        assert not converged(result, ConvergenceCriterion(0.05, 20))

    def test_iteration_cap(self):
        result = ReducedResult(19, 0, 99.0, Configuration(((0.1, 0.1),)), ())
        assert converged(result, ConvergenceCriterion(0.05, 20))

    def test_monotone_once_true_stays_true(self):
        # cost trace is non-increasing and the cap only grows nearer
        criterion = ConvergenceCriterion(0.5, 10)
        stream = Stream(5)
        previous = None
        seen_converged = False
        for _ in range(10):
            outcomes = [_outcome(0, 0.3 + stream.next_float())]
            previous = reduce_phase(outcomes, previous)
            now = converged(previous, criterion)
            if seen_converged:
                assert now
            seen_converged = seen_converged or now


class TestNextBatch:
    def test_propagates_incumbent_and_iteration(self, tmp_path):
        spec = make_spec(tmp_path)
        schedule = AnnealingSchedule(1.0, 0.01, 1.0)
        incumbent = random_configuration(spec.payload.n_points, Stream(3))
        points = tuple(incumbent.points)
        result = ReducedResult(0, 1, 5.0, Configuration(points), ((0, 5.0),))
        batch = next_batch(result, 0, spec, schedule)
        expected = map_phase(1, result.best_configuration, spec, schedule)
        assert batch == expected

    def test_after_convergence_rejected(self, tmp_path):
        spec = make_spec(tmp_path)  # cost_threshold default 0.05
        schedule = AnnealingSchedule(1.0, 0.01, 1.0)
        incumbent = random_configuration(spec.payload.n_points, Stream(3))
        result = ReducedResult(0, 0, 0.0, incumbent, ((0, 0.0),))
        with pytest.raises(ContractViolationError):
            next_batch(result, 0, spec, schedule)

    def test_temperatures_strictly_cooler(self, tmp_path):
        spec = make_spec(tmp_path)
        schedule = AnnealingSchedule(1.0, 0.01, 1.0)
        incumbent = random_configuration(spec.payload.n_points, Stream(3))
        t0 = map_phase(0, incumbent, spec, schedule).tasks[0].params.temperature
        result = ReducedResult(0, 0, 99.0, incumbent, ((0, 99.0),))
        t1 = next_batch(result, 0, spec, schedule).tasks[0].params.temperature
        assert t1 < t0


class TestMonteCarloConnector:
    def test_end_to_end_iteration_cycle(self, tmp_path):
        spec = make_spec(tmp_path)
        connector = MonteCarloConnector(spec)
        incumbent = connector.initial_configuration()
        burst = connector.map_phase(0, incumbent)
        outcomes = [
            TaskOutcome(t.task_index, connector.run_task(t, incumbent), None, 1)
            for t in burst.tasks
        ]
        result = connector.reduce_phase(outcomes, None)
        assert result.best_cost == min(o.result["best_cost"] for o in outcomes)
        doc = connector.result_document(result)
        assert doc["best_cost"] == pytest.approx(result.best_cost)
        assert doc["chi2"] + spec.payload.energy_weight * doc["energy"] == pytest.approx(
            result.best_cost
        )

    def test_elitism_non_increasing_over_seeds(self, tmp_path):
        # full fault-free reduce loop keeps the trace monotone for any seed
        for master_seed in (1, 7, 99):
            spec = make_spec(tmp_path, master_seed=master_seed)
            connector = MonteCarloConnector(spec)
            incumbent = connector.initial_configuration()
            previous = None
            for iteration in range(spec.payload.max_iterations):
                burst = connector.map_phase(iteration, incumbent)
                outcomes = [
                    TaskOutcome(t.task_index, connector.run_task(t, incumbent), None, 1)
                    for t in burst.tasks
                ]
                previous = connector.reduce_phase(outcomes, previous)
                incumbent = previous.best_configuration
            costs = [c for _, c in previous.cost_trace]
            assert costs == sorted(costs, reverse=True)
