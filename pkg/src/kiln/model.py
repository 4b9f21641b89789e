"""Shared domain types: run specs, task records, and the stage machine.

Everything here is an immutable value object; the two operations
(``validate_run_spec`` and ``stage_transition``) are pure functions, so all
of it is safe to hand between threads.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Mapping, Union

from .rng import MASK64


class ContractViolationError(RuntimeError):
    """An operation was called outside its documented contract."""


class SpecValidationError(ValueError):
    """Raised by validate_run_spec; carries every violated constraint."""

    def __init__(self, issues: list[ValidationIssue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))


@dataclass(frozen=True)
class ValidationIssue:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class PlatformKind(str, Enum):
    SIMULATED_CLOUD = "simulated-cloud"
    LOCAL_PROCESS = "local-process"


@dataclass(frozen=True)
class ComputeSpec:
    desired_vms: int
    minimal_vms: int
    tasks_per_burst: int


@dataclass(frozen=True)
class ReliabilitySpec:
    max_retries: int
    reschedule_failed: bool


@dataclass(frozen=True)
class PayloadParams:
    """Knobs of the structure-fitting payload plus its annealing loop.

    ``temperature`` is the one per-task field: the burst generator assigns
    it, so in a run spec file it is normally absent (null).
    """

    n_points: int = 16
    steps: int = 500
    bins: int = 16
    r_max: float = 1.5
    energy_weight: float = 0.1
    r0: float = 0.1
    r_floor: float = 1e-3
    sigma: float = 0.05
    t_initial: float = 1.0
    t_final: float = 0.01
    spread_factor: float = 2.0
    cost_threshold: float = 0.05
    max_iterations: int = 20
    instance_seed: int = 7
    temperature: float | None = None


@dataclass(frozen=True)
class RunSpec:
    name: str
    platform: PlatformKind
    compute: ComputeSpec
    reliability: ReliabilitySpec
    payload: PayloadParams
    output_location: str
    curate: bool
    master_seed: int


# ---------------------------------------------------------------------------
# Stage state machine


class Stage(str, Enum):
    CREATED = "Created"
    PROVISIONED = "Provisioned"
    CONFIGURED = "Configured"
    EXECUTING = "Executing"
    COLLECTING = "Collecting"
    REDUCED = "Reduced"
    TRANSFERRING = "Transferring"
    COMPLETE = "Complete"
    FAILED = "Failed"


TERMINAL_STAGES = frozenset({Stage.COMPLETE, Stage.FAILED})


@dataclass(frozen=True)
class StageState:
    stage: Stage = Stage.CREATED
    iteration: int = 0


@dataclass(frozen=True)
class ProvisionOk:
    pass


@dataclass(frozen=True)
class ProvisionQuorumFail:
    pass


@dataclass(frozen=True)
class ConfigOk:
    pass


@dataclass(frozen=True)
class BurstDone:
    pass


@dataclass(frozen=True)
class ReduceDone:
    converged: bool


@dataclass(frozen=True)
class TransferOk:
    pass


@dataclass(frozen=True)
class FatalError:
    pass


SchedulerEvent = Union[
    ProvisionOk,
    ProvisionQuorumFail,
    ConfigOk,
    BurstDone,
    ReduceDone,
    TransferOk,
    FatalError,
]


def stage_transition(state: StageState, event: SchedulerEvent) -> StageState:
    """Advance the lifecycle by one event; reject undefined pairs.

    ConfigOk is consumed twice (configuration recorded, then execution
    opened) and so is ReduceDone (reduction recorded, then the
    converged/loop branch taken): the event set is smaller than the edge
    set, and these are the two stages with an unnamed outgoing edge.
    The iteration counter increments only on the Reduced -> Executing loop
    edge. Complete and Failed are terminal: no outgoing edges, not even
    FatalError.
    """
    s = state.stage
    if s not in TERMINAL_STAGES and isinstance(event, FatalError):
        return StageState(Stage.FAILED, state.iteration)

    match (s, event):
        case (Stage.CREATED, ProvisionOk()):
            return StageState(Stage.PROVISIONED, state.iteration)
        case (Stage.CREATED, ProvisionQuorumFail()):
            return StageState(Stage.FAILED, state.iteration)
        case (Stage.PROVISIONED, ConfigOk()):
            return StageState(Stage.CONFIGURED, state.iteration)
        case (Stage.CONFIGURED, ConfigOk()):
            return StageState(Stage.EXECUTING, state.iteration)
        case (Stage.EXECUTING, BurstDone()):
            return StageState(Stage.COLLECTING, state.iteration)
        case (Stage.COLLECTING, ReduceDone()):
            return StageState(Stage.REDUCED, state.iteration)
        case (Stage.REDUCED, ReduceDone(converged=False)):
            return StageState(Stage.EXECUTING, state.iteration + 1)
        case (Stage.REDUCED, ReduceDone(converged=True)):
            return StageState(Stage.TRANSFERRING, state.iteration)
        case (Stage.TRANSFERRING, TransferOk()):
            return StageState(Stage.COMPLETE, state.iteration)
    raise ContractViolationError(
        f"no transition from stage {s.value} on event {event!r}"
    )


# ---------------------------------------------------------------------------
# Task records


class TaskStatus(str, Enum):
    PENDING = "Pending"
    RUNNING = "Running"
    SUCCEEDED = "Succeeded"
    FAILED = "Failed"


@dataclass(frozen=True)
class AttemptRecord:
    vm: int
    outcome: str  # "success" or a fault tag: "crash", "vm_lost", "transfer_timeout"
    ticks: int


@dataclass(frozen=True)
class TaskRecord:
    task_index: int
    iteration: int
    seed: int
    params: PayloadParams
    assigned_vm: int | None = None
    attempts: tuple[AttemptRecord, ...] = ()
    status: TaskStatus = TaskStatus.PENDING

    def attempts_on_assigned_vm(self) -> int:
        return sum(1 for a in self.attempts if a.vm == self.assigned_vm)

    def was_rescheduled(self) -> bool:
        return len({a.vm for a in self.attempts}) > 1 or (
            self.attempts != () and self.attempts[0].vm != self.assigned_vm
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_index": self.task_index,
            "iteration": self.iteration,
            "seed": self.seed,
            "params": payload_params_to_dict(self.params),
            "assigned_vm": self.assigned_vm,
            "attempts": [
                {"vm": a.vm, "outcome": a.outcome, "ticks": a.ticks}
                for a in self.attempts
            ],
            "status": self.status.value,
        }


# ---------------------------------------------------------------------------
# Run-spec validation (strict: unknown fields rejected, all errors reported)

_NAME_RE = re.compile(r"^[A-Za-z0-9_-]+$")

_PAYLOAD_INT_FIELDS = {"n_points", "steps", "bins", "max_iterations", "instance_seed"}


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v: Any) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool))


def _check_output_location(path: str, issues: list[ValidationIssue]) -> None:
    """The directory must be writable, or be creatable under a writable one."""
    probe = os.path.abspath(path)
    if os.path.exists(probe):
        if not os.path.isdir(probe):
            issues.append(ValidationIssue("output_location", "exists but is not a directory"))
        elif not os.access(probe, os.W_OK):
            issues.append(ValidationIssue("output_location", "directory is not writable"))
        return
    parent = os.path.dirname(probe)
    while parent and not os.path.exists(parent):
        nxt = os.path.dirname(parent)
        if nxt == parent:
            break
        parent = nxt
    if not (os.path.isdir(parent) and os.access(parent, os.W_OK)):
        issues.append(
            ValidationIssue("output_location", "not creatable: no writable ancestor directory")
        )


def validate_run_spec(raw: Mapping[str, Any]) -> RunSpec:
    """Type-check a parsed run-spec document against the full schema.

    Collects every violated constraint before failing, so a hand-edited
    spec file gets all of its problems reported in one pass. Raises
    SpecValidationError carrying the issue list; returns a fully-typed
    RunSpec only if everything holds.
    """
    issues: list[ValidationIssue] = []
    if not isinstance(raw, Mapping):
        raise SpecValidationError([ValidationIssue("$", "document must be a JSON object")])

    known_top = {
        "name", "platform", "compute", "reliability", "payload",
        "output_location", "curate", "master_seed",
    }
    for key in raw:
        if key not in known_top:
            issues.append(ValidationIssue(key, "unknown field"))
    for key in sorted(known_top - set(raw)):
        issues.append(ValidationIssue(key, "missing field"))

    name = raw.get("name")
    if "name" in raw:
        if not isinstance(name, str):
            issues.append(ValidationIssue("name", "must be a string"))
        elif not _NAME_RE.match(name):
            issues.append(
                ValidationIssue("name", "must be non-empty and match [A-Za-z0-9_-]+")
            )

    platform: PlatformKind | None = None
    if "platform" in raw:
        try:
            platform = PlatformKind(raw["platform"])
        except (ValueError, TypeError):
            allowed = ", ".join(k.value for k in PlatformKind)
            issues.append(ValidationIssue("platform", f"must be one of: {allowed}"))

    compute = _validate_compute(raw.get("compute"), issues) if "compute" in raw else None
    reliability = (
        _validate_reliability(raw.get("reliability"), issues) if "reliability" in raw else None
    )
    payload = _validate_payload(raw.get("payload"), issues) if "payload" in raw else None

    if "output_location" in raw:
        loc = raw["output_location"]
        if not isinstance(loc, str) or not loc:
            issues.append(ValidationIssue("output_location", "must be a non-empty string"))
        else:
            _check_output_location(loc, issues)

    if "curate" in raw and not isinstance(raw["curate"], bool):
        issues.append(ValidationIssue("curate", "must be a boolean"))

    if "master_seed" in raw:
        seed = raw["master_seed"]
        if not _is_int(seed) or not (0 <= seed <= MASK64):
            issues.append(
                ValidationIssue("master_seed", "must be an unsigned 64-bit integer")
            )

    if issues:
        raise SpecValidationError(issues)
    assert platform is not None and compute is not None
    assert reliability is not None and payload is not None
    return RunSpec(
        name=name,
        platform=platform,
        compute=compute,
        reliability=reliability,
        payload=payload,
        output_location=raw["output_location"],
        curate=raw["curate"],
        master_seed=raw["master_seed"],
    )


def _validate_compute(raw: Any, issues: list[ValidationIssue]) -> ComputeSpec | None:
    if not isinstance(raw, Mapping):
        issues.append(ValidationIssue("compute", "must be an object"))
        return None
    known = {"desired_vms", "minimal_vms", "tasks_per_burst"}
    ok = True
    for key in raw:
        if key not in known:
            issues.append(ValidationIssue(f"compute.{key}", "unknown field"))
            ok = False
    for key in sorted(known):
        if key not in raw:
            issues.append(ValidationIssue(f"compute.{key}", "missing field"))
            ok = False
        elif not _is_int(raw[key]) or raw[key] < 1:
            issues.append(ValidationIssue(f"compute.{key}", "must be a positive integer"))
            ok = False
    if ok and raw["minimal_vms"] > raw["desired_vms"]:
        issues.append(ValidationIssue("compute.minimal_vms", "minimal_vms > desired_vms"))
        ok = False
    if not ok:
        return None
    return ComputeSpec(
        desired_vms=raw["desired_vms"],
        minimal_vms=raw["minimal_vms"],
        tasks_per_burst=raw["tasks_per_burst"],
    )


def _validate_reliability(raw: Any, issues: list[ValidationIssue]) -> ReliabilitySpec | None:
    if not isinstance(raw, Mapping):
        issues.append(ValidationIssue("reliability", "must be an object"))
        return None
    ok = True
    for key in raw:
        if key not in {"max_retries", "reschedule_failed"}:
            issues.append(ValidationIssue(f"reliability.{key}", "unknown field"))
            ok = False
    if "max_retries" not in raw:
        issues.append(ValidationIssue("reliability.max_retries", "missing field"))
        ok = False
    elif not _is_int(raw["max_retries"]) or raw["max_retries"] < 0:
        issues.append(ValidationIssue("reliability.max_retries", "max_retries must be >= 0"))
        ok = False
    elif raw["max_retries"] > 100:
        issues.append(ValidationIssue("reliability.max_retries", "max_retries must be <= 100"))
        ok = False
    if "reschedule_failed" not in raw:
        issues.append(ValidationIssue("reliability.reschedule_failed", "missing field"))
        ok = False
    elif not isinstance(raw["reschedule_failed"], bool):
        issues.append(
            ValidationIssue("reliability.reschedule_failed", "must be a boolean")
        )
        ok = False
    if not ok:
        return None
    return ReliabilitySpec(
        max_retries=raw["max_retries"],
        reschedule_failed=raw["reschedule_failed"],
    )


def _validate_payload(raw: Any, issues: list[ValidationIssue]) -> PayloadParams | None:
    if not isinstance(raw, Mapping):
        issues.append(ValidationIssue("payload", "must be an object"))
        return None
    defaults = PayloadParams()
    known = {f.name for f in fields(PayloadParams)}
    ok = True
    values: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in known:
            issues.append(ValidationIssue(f"payload.{key}", "unknown field"))
            ok = False
            continue
        if key == "temperature":
            if value is not None and not _is_number(value):
                issues.append(ValidationIssue("payload.temperature", "must be a number or null"))
                ok = False
                continue
            values[key] = None if value is None else float(value)
        elif key in _PAYLOAD_INT_FIELDS:
            if not _is_int(value):
                issues.append(ValidationIssue(f"payload.{key}", "must be an integer"))
                ok = False
                continue
            values[key] = value
        else:
            if not _is_number(value):
                issues.append(ValidationIssue(f"payload.{key}", "must be a number"))
                ok = False
                continue
            values[key] = float(value)
    if not ok:
        return None

    params = PayloadParams(**{**{f.name: getattr(defaults, f.name) for f in fields(PayloadParams)}, **values})
    checks = [
        (params.n_points >= 1, "payload.n_points", "must be >= 1"),
        (params.steps >= 1, "payload.steps", "must be >= 1"),
        (params.bins >= 1, "payload.bins", "must be >= 1"),
        (params.r_max > 0, "payload.r_max", "must be > 0"),
        (params.energy_weight >= 0, "payload.energy_weight", "must be >= 0"),
        (params.r0 > 0, "payload.r0", "must be > 0"),
        (params.r_floor > 0, "payload.r_floor", "must be > 0"),
        (params.sigma > 0, "payload.sigma", "must be > 0"),
        (params.t_initial > 0, "payload.t_initial", "must be > 0"),
        (
            0 < params.t_final <= params.t_initial,
            "payload.t_final",
            "must satisfy 0 < t_final <= t_initial",
        ),
        (params.spread_factor >= 1, "payload.spread_factor", "must be >= 1"),
        (params.cost_threshold > 0, "payload.cost_threshold", "must be > 0"),
        (params.max_iterations >= 1, "payload.max_iterations", "must be >= 1"),
        (
            0 <= params.instance_seed <= MASK64,
            "payload.instance_seed",
            "must be an unsigned 64-bit integer",
        ),
        (
            params.temperature is None or params.temperature > 0,
            "payload.temperature",
            "must be > 0 when set",
        ),
    ]
    bad = False
    for passed, path, message in checks:
        if not passed:
            issues.append(ValidationIssue(path, message))
            bad = True
    return None if bad else params


# ---------------------------------------------------------------------------
# Serialization (snake_case, field order fixed by the schema)


def payload_params_to_dict(params: PayloadParams) -> dict[str, Any]:
    return {f.name: getattr(params, f.name) for f in fields(PayloadParams)}


def run_spec_to_dict(spec: RunSpec) -> dict[str, Any]:
    return {
        "name": spec.name,
        "platform": spec.platform.value,
        "compute": {
            "desired_vms": spec.compute.desired_vms,
            "minimal_vms": spec.compute.minimal_vms,
            "tasks_per_burst": spec.compute.tasks_per_burst,
        },
        "reliability": {
            "max_retries": spec.reliability.max_retries,
            "reschedule_failed": spec.reliability.reschedule_failed,
        },
        "payload": payload_params_to_dict(spec.payload),
        "output_location": spec.output_location,
        "curate": spec.curate,
        "master_seed": spec.master_seed,
    }
