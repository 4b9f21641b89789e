"""Compute backends: a fault-injecting simulated cloud and a local executor.

Both backends expose the same surface (provision, configure, execute_task,
end_burst_vm_loss, transfer, destroy) so the scheduler never knows which
one it is driving. The simulated cloud draws every infrastructure failure
from a single dedicated SplitMix64 stream, separate from all payload
streams, so a changed fault schedule cannot perturb the science of the
tasks that survive it.

Fault draws are consumed in one documented order: one draw per provision
request first, then per burst one crash draw per task execution (tasks in
ascending task_index order, each task's attempts back to back), then one
loss draw per Active VM in ascending id order, and finally one draw per
transfer attempt. A draw fails its check when the uniform value is
strictly below the configured probability, so probability 0 never fires
and probability 1 always does.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from .model import TaskRecord
from .rng import Stream


class IllegalVmStateError(RuntimeError):
    """Operation attempted on a VM whose state does not allow it."""


@dataclass(frozen=True)
class FaultModel:
    p_provision_fail: float = 0.0
    p_task_crash: float = 0.0
    p_transfer_timeout: float = 0.0
    p_vm_loss_per_burst: float = 0.0
    fault_seed: int = 0

    def __post_init__(self):
        for name in (
            "p_provision_fail",
            "p_task_crash",
            "p_transfer_timeout",
            "p_vm_loss_per_burst",
        ):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {p}")


class VmState(str, Enum):
    REQUESTED = "Requested"
    ACTIVE = "Active"
    LOST = "Lost"
    DESTROYED = "Destroyed"


@dataclass(frozen=True)
class VmHandle:
    id: int
    state: VmState
    configured: bool = False


class FaultKind(str, Enum):
    CRASH = "crash"
    VM_LOST = "vm_lost"
    TRANSFER_TIMEOUT = "transfer_timeout"


@dataclass(frozen=True)
class TaskOutcome:
    task_index: int
    result: dict | None
    fault: FaultKind | None
    ticks: int

    def __post_init__(self):
        if (self.result is None) == (self.fault is None):
            raise ValueError("exactly one of result / fault must be present")


PayloadFn = Callable[[TaskRecord], dict]


class SeededFaultSource:
    """Draws fault decisions from the dedicated stream and records them.

    Every decision is logged under a stable key so a run's complete fault
    schedule can be replayed through a ScriptedFaultSource (used by the
    reliability-monotonicity tests). Per-category draw counters support
    stream accounting.
    """

    def __init__(self, fault_model: FaultModel):
        self.fault_model = fault_model
        self.stream = Stream(fault_model.fault_seed)
        self.provision_log: dict[int, bool] = {}
        self.crash_log: dict[tuple[int, int, int], bool] = {}
        self.loss_log: dict[tuple[int, int], bool] = {}
        self.transfer_log: dict[int, bool] = {}
        self._provision_n = 0
        self._transfer_n = 0
        self._burst_n = 0

    @property
    def draws(self) -> int:
        return self.stream.draws

    def _check(self, p: float) -> bool:
        return self.stream.next_float() < p

    def provision_fails(self) -> bool:
        key = self._provision_n
        self._provision_n += 1
        hit = self._check(self.fault_model.p_provision_fail)
        self.provision_log[key] = hit
        return hit

    def task_crashes(self, iteration: int, task_index: int, attempt: int) -> bool:
        hit = self._check(self.fault_model.p_task_crash)
        self.crash_log[(iteration, task_index, attempt)] = hit
        return hit

    def burst_losses(self, vm_ids: Sequence[int]) -> dict[int, bool]:
        """One loss draw per VM, in ascending id order; one call per burst."""
        burst = self._burst_n
        self._burst_n += 1
        out = {}
        for vm_id in sorted(vm_ids):
            hit = self._check(self.fault_model.p_vm_loss_per_burst)
            self.loss_log[(burst, vm_id)] = hit
            out[vm_id] = hit
        return out

    def transfer_times_out(self) -> bool:
        key = self._transfer_n
        self._transfer_n += 1
        hit = self._check(self.fault_model.p_transfer_timeout)
        self.transfer_log[key] = hit
        return hit

    def schedule(self) -> dict:
        """Snapshot of all decisions made so far, for replay."""
        return {
            "provision": dict(self.provision_log),
            "crash": dict(self.crash_log),
            "loss": dict(self.loss_log),
            "transfer": dict(self.transfer_log),
        }


class ScriptedFaultSource:
    """Replays a recorded fault schedule; draws not in the script pass.

    Letting unknown draws succeed means a rerun that makes extra attempts
    (say, with a larger retry budget) sees exactly the recorded failures
    and nothing new, which is what a fixed fault schedule means.
    """

    def __init__(self, schedule: dict | None = None):
        schedule = schedule or {}
        self._provision = dict(schedule.get("provision", {}))
        self._crash = dict(schedule.get("crash", {}))
        self._loss = dict(schedule.get("loss", {}))
        self._transfer = dict(schedule.get("transfer", {}))
        self._provision_n = 0
        self._transfer_n = 0
        self._burst_n = 0

    def provision_fails(self) -> bool:
        key = self._provision_n
        self._provision_n += 1
        return self._provision.get(key, False)

    def task_crashes(self, iteration: int, task_index: int, attempt: int) -> bool:
        return self._crash.get((iteration, task_index, attempt), False)

    def burst_losses(self, vm_ids: Sequence[int]) -> dict[int, bool]:
        burst = self._burst_n
        self._burst_n += 1
        return {vm_id: self._loss.get((burst, vm_id), False) for vm_id in sorted(vm_ids)}

    def transfer_times_out(self) -> bool:
        key = self._transfer_n
        self._transfer_n += 1
        return self._transfer.get(key, False)


class SimulatedCloud:
    """Deterministic cloud backend with injected infrastructure faults."""

    def __init__(self, fault_model: FaultModel | None = None, fault_source=None):
        self.fault_model = fault_model or FaultModel()
        self.faults = fault_source if fault_source is not None else SeededFaultSource(self.fault_model)
        self._vms: dict[int, VmHandle] = {}
        self._setups: dict[int, dict] = {}
        self._next_id = 0
        self.provisioned_count = 0
        self.destroyed_count = 0
        self.executed_attempts = 0
        self.transfer_attempts = 0

    def _current(self, vm: VmHandle) -> VmHandle:
        try:
            return self._vms[vm.id]
        except KeyError:
            raise IllegalVmStateError(f"unknown VM id {vm.id}") from None

    def provision(self, count: int) -> list[VmHandle]:
        """Request count VMs; each independently fails its provision draw.

        Failed requests simply do not appear in the result, and ids are
        assigned densely, in request order, to the successes only. Quorum
        policy is the scheduler's business.
        """
        if count < 1:
            raise ValueError("provision needs count >= 1")
        handles = []
        for _ in range(count):
            if self.faults.provision_fails():
                continue
            vm = VmHandle(id=self._next_id, state=VmState.ACTIVE)
            self._next_id += 1
            self._vms[vm.id] = vm
            handles.append(vm)
        self.provisioned_count += len(handles)
        return handles

    def configure(self, vm: VmHandle, payload_setup: dict) -> VmHandle:
        current = self._current(vm)
        if current.state is not VmState.ACTIVE:
            raise IllegalVmStateError(
                f"cannot configure VM {current.id} in state {current.state.value}"
            )
        if current.configured:
            return current
        updated = replace(current, configured=True)
        self._vms[current.id] = updated
        self._setups[current.id] = dict(payload_setup)
        return updated

    def execute_task(self, vm: VmHandle, task: TaskRecord, payload: PayloadFn) -> TaskOutcome:
        """Run the payload on a VM; a crash draw can discard its output.

        The payload always executes (a crash models third-party failure
        after the compute was spent), so payload-side determinism never
        depends on the fault schedule. Success costs the task's full step
        count in ticks; a crash costs half.
        """
        current = self._current(vm)
        if current.state is not VmState.ACTIVE or not current.configured:
            raise IllegalVmStateError(
                f"cannot execute on VM {current.id}: state {current.state.value}, "
                f"configured={current.configured}"
            )
        doc = payload(task)
        crashed = self.faults.task_crashes(
            task.iteration, task.task_index, len(task.attempts)
        )
        self.executed_attempts += 1
        if crashed:
            return TaskOutcome(task.task_index, None, FaultKind.CRASH, ticks=max(task.params.steps // 2, 1))
        return TaskOutcome(task.task_index, doc, None, ticks=task.params.steps)

    def end_burst_vm_loss(self, vms: Sequence[VmHandle]) -> list[VmHandle]:
        """Each Active VM independently becomes Lost; called once per burst."""
        active_ids = [self._current(vm).id for vm in vms if self._current(vm).state is VmState.ACTIVE]
        lost = self.faults.burst_losses(active_ids)
        out = []
        for vm in vms:
            current = self._current(vm)
            if current.state is VmState.ACTIVE and lost.get(current.id, False):
                current = replace(current, state=VmState.LOST)
                self._vms[current.id] = current
            out.append(current)
        return out

    def transfer(self, files: Sequence[Path], base: Path, destination: Path) -> bool:
        """Copy files (relative to base) into destination, or time out.

        The timeout draw happens before anything is written, so an injected
        fault leaves the destination untouched. Genuine I/O problems raise
        OSError, which is deliberately distinct from the injected fault.
        """
        for f in files:
            if not Path(f).is_file():
                raise FileNotFoundError(f"transfer artifact missing: {f}")
        self.transfer_attempts += 1
        if self.faults.transfer_times_out():
            return False
        _copy_tree(files, base, destination)
        return True

    def destroy(self, vm: VmHandle) -> VmHandle:
        current = self._vms.get(vm.id)
        if current is None:
            current = vm
        if current.state is VmState.DESTROYED:
            return current
        updated = replace(current, state=VmState.DESTROYED)
        self._vms[updated.id] = updated
        self.destroyed_count += 1
        return updated


class LocalProcess:
    """In-process executor: the same surface with no faults at all.

    VMs are purely logical slots here; provisioning always succeeds,
    nothing crashes, nothing gets lost, transfers always land.
    """

    def __init__(self):
        self._vms: dict[int, VmHandle] = {}
        self._setups: dict[int, dict] = {}
        self._next_id = 0
        self.provisioned_count = 0
        self.destroyed_count = 0
        self.executed_attempts = 0
        self.transfer_attempts = 0

    def provision(self, count: int) -> list[VmHandle]:
        if count < 1:
            raise ValueError("provision needs count >= 1")
        handles = []
        for _ in range(count):
            vm = VmHandle(id=self._next_id, state=VmState.ACTIVE)
            self._next_id += 1
            self._vms[vm.id] = vm
            handles.append(vm)
        self.provisioned_count += len(handles)
        return handles

    def configure(self, vm: VmHandle, payload_setup: dict) -> VmHandle:
        current = self._vms[vm.id]
        if current.state is not VmState.ACTIVE:
            raise IllegalVmStateError(
                f"cannot configure VM {current.id} in state {current.state.value}"
            )
        if current.configured:
            return current
        updated = replace(current, configured=True)
        self._vms[current.id] = updated
        self._setups[current.id] = dict(payload_setup)
        return updated

    def execute_task(self, vm: VmHandle, task: TaskRecord, payload: PayloadFn) -> TaskOutcome:
        current = self._vms[vm.id]
        if current.state is not VmState.ACTIVE or not current.configured:
            raise IllegalVmStateError(
                f"cannot execute on VM {current.id}: state {current.state.value}, "
                f"configured={current.configured}"
            )
        doc = payload(task)
        self.executed_attempts += 1
        return TaskOutcome(task.task_index, doc, None, ticks=task.params.steps)

    def end_burst_vm_loss(self, vms: Sequence[VmHandle]) -> list[VmHandle]:
        return [self._vms[vm.id] for vm in vms]

    def transfer(self, files: Sequence[Path], base: Path, destination: Path) -> bool:
        for f in files:
            if not Path(f).is_file():
                raise FileNotFoundError(f"transfer artifact missing: {f}")
        self.transfer_attempts += 1
        _copy_tree(files, base, destination)
        return True

    def destroy(self, vm: VmHandle) -> VmHandle:
        current = self._vms.get(vm.id, vm)
        if current.state is VmState.DESTROYED:
            return current
        updated = replace(current, state=VmState.DESTROYED)
        self._vms[updated.id] = updated
        self.destroyed_count += 1
        return updated


def _copy_tree(files: Sequence[Path], base: Path, destination: Path) -> None:
    base = Path(base)
    destination = Path(destination)
    for f in files:
        rel = Path(f).relative_to(base)
        target = destination / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(f, target)


def make_platform(kind, fault_model: FaultModel | None = None):
    """Backend factory keyed by RunSpec.platform."""
    from .model import PlatformKind

    if kind == PlatformKind.LOCAL_PROCESS:
        return LocalProcess()
    return SimulatedCloud(fault_model)
