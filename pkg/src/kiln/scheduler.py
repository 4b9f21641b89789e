"""The run engine: drives a validated spec through the stage machine.

The scheduler owns the whole lifecycle: provision the fleet, enforce the
quorum, configure survivors, loop bursts through the connector with retry
and reschedule handling, inject end-of-burst VM loss, curate iteration
outputs, transfer the staged results, and tear the fleet down on every
exit path. It is a single-owner event loop; outcomes are committed in
ascending task index order, which is what makes runs reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import tempfile
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .connector import MonteCarloConnector, ReducedResult
from .model import (
    AttemptRecord,
    BurstDone,
    ComputeSpec,
    ConfigOk,
    ContractViolationError,
    FatalError,
    ProvisionOk,
    ProvisionQuorumFail,
    ReduceDone,
    ReliabilitySpec,
    RunSpec,
    Stage,
    StageState,
    TaskRecord,
    TaskStatus,
    TransferOk,
    payload_params_to_dict,
    stage_transition,
)
from .platforms import FaultKind, VmHandle, VmState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuorumFailure:
    provisioned: int
    minimal: int


@dataclass(frozen=True)
class RunReport:
    spec_name: str
    final_stage: StageState
    iterations_executed: int
    tasks: tuple[TaskRecord, ...]
    vm_events: tuple[dict, ...]
    converged: bool
    best_metric: float | None
    output_manifest: tuple[dict, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec_name": self.spec_name,
            "final_stage": {
                "stage": self.final_stage.stage.value,
                "iteration": self.final_stage.iteration,
            },
            "iterations_executed": self.iterations_executed,
            "tasks": [t.to_dict() for t in self.tasks],
            "vm_events": list(self.vm_events),
            "converged": self.converged,
            "best_metric": self.best_metric,
            "output_manifest": list(self.output_manifest),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


class FailureKind(str, Enum):
    RETRY = "Retry"
    RESCHEDULE = "Reschedule"
    MARK_FAILED = "MarkFailed"


@dataclass(frozen=True)
class FailureAction:
    kind: FailureKind
    vm: int | None = None


def check_quorum(provisioned: int, compute: ComputeSpec) -> QuorumFailure | None:
    """None means proceed; a QuorumFailure carries both counts."""
    if provisioned >= compute.minimal_vms:
        return None
    return QuorumFailure(provisioned=provisioned, minimal=compute.minimal_vms)


def schedule_burst(
    tasks: Sequence[TaskRecord], vms: Sequence[VmHandle]
) -> dict[int, int]:
    """Round-robin: ascending task index over ascending VM id."""
    if not vms:
        raise ContractViolationError("schedule_burst with an empty fleet")
    if not tasks:
        raise ContractViolationError("schedule_burst with no tasks")
    vm_ids = sorted(vm.id for vm in vms)
    return {
        t.task_index: vm_ids[i % len(vm_ids)]
        for i, t in enumerate(sorted(tasks, key=lambda t: t.task_index))
    }


def handle_failure(
    task: TaskRecord,
    fault: FaultKind,
    reliability: ReliabilitySpec,
    vms: Sequence[VmHandle],
    loads: Mapping[int, int] | None = None,
) -> FailureAction:
    """Decide what a failed attempt gets: retry, reschedule, or give up.

    The retry budget is per placement: a task may attempt 1 + max_retries
    times on its current VM. Exhausting that, a single reschedule (if the
    spec allows it, the task has not moved before, and another Active
    configured VM exists) grants the same budget on the least-loaded other
    VM, ties broken toward the lowest id. ``loads`` carries unfinished-task
    counts per VM id; VMs absent from it count as idle.
    """
    loads = loads or {}
    by_id = {vm.id: vm for vm in vms}
    current = by_id.get(task.assigned_vm)
    current_alive = current is not None and current.state is VmState.ACTIVE
    if task.attempts_on_assigned_vm() <= reliability.max_retries and current_alive:
        return FailureAction(FailureKind.RETRY, vm=task.assigned_vm)
    if reliability.reschedule_failed and not task.was_rescheduled():
        candidates = [
            vm
            for vm in vms
            if vm.state is VmState.ACTIVE
            and vm.configured
            and vm.id != task.assigned_vm
        ]
        if candidates:
            target = min(candidates, key=lambda vm: (loads.get(vm.id, 0), vm.id))
            return FailureAction(FailureKind.RESCHEDULE, vm=target.id)
    return FailureAction(FailureKind.MARK_FAILED)


def run(
    spec: RunSpec,
    platform,
    connector: MonteCarloConnector,
    catalog=None,
    filters=None,
) -> RunReport:
    """Execute the full lifecycle and always leave a report behind.

    VMs are destroyed on every exit path. report.json is written into
    output_location for Complete and Failed runs alike; staged iteration
    outputs only reach output_location if the final transfer succeeds.
    """
    out_dir = Path(spec.output_location)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = _Engine(spec, platform, connector, catalog, filters).run()
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report


class _Engine:
    def __init__(self, spec, platform, connector, catalog, filters):
        self.spec = spec
        self.platform = platform
        self.connector = connector
        self.catalog = catalog
        self.filters = filters
        self.fleet: dict[int, VmHandle] = {}
        self.events: list[dict] = []
        self.tasks: list[TaskRecord] = []
        self.ticks = 0

    def run(self) -> RunReport:
        state = StageState()
        previous: ReducedResult | None = None
        manifest: list[dict] = []
        try:
            with tempfile.TemporaryDirectory(prefix="kiln-stage-") as staging_str:
                staging = Path(staging_str)
                state, quorum_ok = self._provision(state)
                if not quorum_ok:
                    return self._report(state, previous, manifest)
                state = self._configure(state)

                incumbent = self.connector.initial_configuration()
                while True:
                    burst_ok, outcomes = self._run_burst(state.iteration, incumbent)
                    if not burst_ok:
                        state = stage_transition(state, FatalError())
                        return self._report(state, previous, manifest)
                    self._burst_loss(state.iteration)
                    state = stage_transition(state, BurstDone())

                    iter_dir = staging / f"iter_{state.iteration:04d}"
                    self._write_iteration(iter_dir, outcomes)
                    previous = self.connector.reduce_phase(outcomes, previous)
                    (iter_dir / "reduce.json").write_text(
                        _dump(self.connector.result_document(previous)), encoding="utf-8"
                    )
                    done = self.connector.converged(previous)
                    state = stage_transition(state, ReduceDone(done))
                    self._curate(iter_dir, state.iteration)
                    state = stage_transition(state, ReduceDone(done))
                    if done:
                        break
                    incumbent = previous.best_configuration

                transferred = self._transfer(staging)
                if not transferred:
                    state = stage_transition(state, FatalError())
                    return self._report(state, previous, manifest)
                state = stage_transition(state, TransferOk())
                manifest = _checksum_tree(Path(self.spec.output_location))
                return self._report(state, previous, manifest)
        finally:
            self._teardown()

    # -- stages ------------------------------------------------------------

    def _provision(self, state: StageState) -> tuple[StageState, bool]:
        desired = self.spec.compute.desired_vms
        self.events.append({"event": "provision_requested", "count": desired})
        handles = self.platform.provision(desired)
        for vm in handles:
            self.fleet[vm.id] = vm
            self.events.append({"event": "provisioned", "vm": vm.id})
        failure = check_quorum(len(handles), self.spec.compute)
        if failure is not None:
            self.events.append(
                {
                    "event": "quorum_failed",
                    "provisioned": failure.provisioned,
                    "minimal": failure.minimal,
                }
            )
            return stage_transition(state, ProvisionQuorumFail()), False
        return stage_transition(state, ProvisionOk()), True

    def _configure(self, state: StageState) -> StageState:
        state = stage_transition(state, ConfigOk())  # fleet recorded
        setup = payload_params_to_dict(self.spec.payload)
        for vm_id in sorted(self.fleet):
            self.fleet[vm_id] = self.platform.configure(self.fleet[vm_id], setup)
            self.events.append({"event": "configured", "vm": vm_id})
        return stage_transition(state, ConfigOk())  # setup closed, executing

    def _active_vms(self) -> list[VmHandle]:
        return [
            vm
            for _, vm in sorted(self.fleet.items())
            if vm.state is VmState.ACTIVE and vm.configured
        ]

    def _run_burst(self, iteration, incumbent) -> tuple[bool, list]:
        """Execute one burst; False means the run is lost (task or fleet)."""
        active = self._active_vms()
        if not active:
            self.events.append({"event": "fleet_exhausted", "iteration": iteration})
            return False, []
        burst = self.connector.map_phase(iteration, incumbent)
        assignment = schedule_burst(burst.tasks, active)
        pending = [
            replace(t, assigned_vm=assignment[t.task_index]) for t in burst.tasks
        ]

        def payload(task: TaskRecord) -> dict:
            return self.connector.run_task(task, incumbent)

        outcomes = []
        for pos, task in enumerate(pending):
            task, outcome = self._run_task(task, pending[pos + 1 :], payload)
            self.tasks.append(task)
            if outcome is None:
                self.events.append(
                    {
                        "event": "task_failed_permanently",
                        "iteration": iteration,
                        "task": task.task_index,
                    }
                )
                return False, []
            outcomes.append(outcome)
        return True, outcomes

    def _run_task(self, task, rest, payload):
        """Drive one task to success or permanent failure."""
        while True:
            task = replace(task, status=TaskStatus.RUNNING)
            vm = self.fleet[task.assigned_vm]
            outcome = self.platform.execute_task(vm, task, payload)
            self.ticks += outcome.ticks
            attempt = AttemptRecord(
                vm=task.assigned_vm,
                outcome="success" if outcome.fault is None else outcome.fault.value,
                ticks=outcome.ticks,
            )
            task = replace(task, attempts=task.attempts + (attempt,))
            if outcome.fault is None:
                return replace(task, status=TaskStatus.SUCCEEDED), outcome
            loads = _unfinished_loads([task] + list(rest))
            action = handle_failure(
                task, outcome.fault, self.spec.reliability, self._active_vms(), loads
            )
            if action.kind is FailureKind.RETRY:
                continue
            if action.kind is FailureKind.RESCHEDULE:
                self.events.append(
                    {
                        "event": "rescheduled",
                        "iteration": task.iteration,
                        "task": task.task_index,
                        "from_vm": task.assigned_vm,
                        "to_vm": action.vm,
                    }
                )
                task = replace(task, assigned_vm=action.vm)
                continue
            return replace(task, status=TaskStatus.FAILED), None

    def _burst_loss(self, iteration: int) -> None:
        current = [vm for _, vm in sorted(self.fleet.items())]
        for vm in self.platform.end_burst_vm_loss(current):
            if vm.state is VmState.LOST and self.fleet[vm.id].state is not VmState.LOST:
                self.events.append(
                    {"event": "vm_lost", "vm": vm.id, "iteration": iteration}
                )
            self.fleet[vm.id] = vm

    def _write_iteration(self, iter_dir: Path, outcomes) -> None:
        iter_dir.mkdir(parents=True, exist_ok=True)
        for outcome in outcomes:
            path = iter_dir / f"map_{outcome.task_index:04d}.json"
            path.write_text(_dump(outcome.result), encoding="utf-8")

    def _curate(self, iter_dir: Path, iteration: int) -> None:
        if not (self.spec.curate and self.catalog is not None):
            return
        from .curation import DuplicateDatasetError

        try:
            self.catalog.ingest(
                iter_dir,
                experiment=self.spec.name,
                iteration=iteration,
                filters=self.filters,
                created_tick=self.ticks,
            )
        except DuplicateDatasetError as exc:
            # a re-run against the same catalog keeps its first datasets; the
            # run itself must not die over a curation rejection
            log.warning("ingest rejected duplicate dataset %s; continuing", exc)

    def _transfer(self, staging: Path) -> bool:
        files = sorted(p for p in staging.rglob("*") if p.is_file())
        attempts = 1 + self.spec.reliability.max_retries
        for i in range(attempts):
            if self.platform.transfer(files, staging, Path(self.spec.output_location)):
                self.events.append({"event": "transferred", "attempt": i})
                return True
            self.events.append({"event": "transfer_timeout", "attempt": i})
        return False

    def _teardown(self) -> None:
        """Destroy whatever is not destroyed yet; safe to call repeatedly."""
        for vm_id, vm in sorted(self.fleet.items()):
            if vm.state is VmState.DESTROYED:
                continue
            self.fleet[vm_id] = self.platform.destroy(vm)
            self.events.append({"event": "destroyed", "vm": vm_id})

    def _report(self, state, previous, manifest) -> RunReport:
        # the report must list the destroy events, so tear down before
        # snapshotting (the finally block then has nothing left to do)
        self._teardown()
        return RunReport(
            spec_name=self.spec.name,
            final_stage=state,
            iterations_executed=0 if previous is None else previous.iteration + 1,
            tasks=tuple(self.tasks),
            vm_events=tuple(self.events),
            converged=state.stage is Stage.COMPLETE and previous is not None,
            best_metric=None if previous is None else previous.best_cost,
            output_manifest=tuple(manifest),
        )


def _unfinished_loads(tasks) -> dict[int, int]:
    loads: dict[int, int] = {}
    for t in tasks:
        if t.status in (TaskStatus.PENDING, TaskStatus.RUNNING) and t.assigned_vm is not None:
            loads[t.assigned_vm] = loads.get(t.assigned_vm, 0) + 1
    return loads


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _checksum_tree(root: Path) -> list[dict]:
    entries = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.name == "report.json":
            continue
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        entries.append(
            {
                "path": path.relative_to(root).as_posix(),
                "size": path.stat().st_size,
                "sha256": digest,
            }
        )
    return entries
