"""Parameter sweeps: expand value ranges into a cross-product of runs.

A sweep file is an ordinary run-spec document with one extra ``sweep``
object mapping parameter paths (``payload.energy_weight``,
``compute.tasks_per_burst``, ...) to lists of values. Expansion is a
plain cross-product: the first declared parameter varies slowest.
Combinations are fully isolated from each other: own name suffix, own
output subdirectory, own decorrelated master seed, own platform backend.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

from .model import (
    ComputeSpec,
    PayloadParams,
    ReliabilitySpec,
    RunSpec,
    SpecValidationError,
    ValidationIssue,
    validate_run_spec,
)
from .rng import SWEEP_SEED_TAG, derive_task_seed
from .scheduler import RunReport, run
from .model import Stage, StageState

log = logging.getLogger(__name__)

_SECTIONS = {
    "compute": ComputeSpec,
    "reliability": ReliabilitySpec,
    "payload": PayloadParams,
}

# name and output_location are owned by the expansion machinery itself
_TOP_LEVEL_SWEEPABLE = {"curate", "master_seed"}


@dataclass(frozen=True)
class SweepSpec:
    base: RunSpec
    ranges: tuple[tuple[str, tuple[Any, ...]], ...]


def parse_sweep_document(raw: Mapping[str, Any]) -> SweepSpec:
    """Validate a sweep document: base spec strictly, then the ranges.

    Collects issues across both parts so one pass reports everything.
    """
    doc = dict(raw)
    sweep_obj = doc.pop("sweep", {})
    issues: list[ValidationIssue] = []
    base = None
    try:
        base = validate_run_spec(doc)
    except SpecValidationError as exc:
        issues.extend(exc.issues)

    ranges: list[tuple[str, tuple[Any, ...]]] = []
    if not isinstance(sweep_obj, Mapping):
        issues.append(ValidationIssue("sweep", "must be an object"))
    else:
        for path, values in sweep_obj.items():
            field_type = _resolve_path(path)
            if field_type is None:
                issues.append(ValidationIssue(f"sweep.{path}", "does not resolve to a spec field"))
                continue
            if not isinstance(values, list) or not values:
                issues.append(ValidationIssue(f"sweep.{path}", "must be a non-empty list"))
                continue
            if len(set(values)) != len(values):
                issues.append(ValidationIssue(f"sweep.{path}", "values must be distinct"))
                continue
            bad = [v for v in values if not _value_fits(v, field_type)]
            if bad:
                issues.append(
                    ValidationIssue(
                        f"sweep.{path}", f"value {bad[0]!r} does not match field type"
                    )
                )
                continue
            ranges.append((path, tuple(values)))
    if issues:
        raise SpecValidationError(issues)
    return SweepSpec(base=base, ranges=tuple(ranges))


def _resolve_path(path: str):
    parts = path.split(".")
    if len(parts) == 1:
        if parts[0] in _TOP_LEVEL_SWEEPABLE:
            return {f.name: f.type for f in fields(RunSpec)}[parts[0]]
        return None
    if len(parts) == 2 and parts[0] in _SECTIONS:
        section = _SECTIONS[parts[0]]
        for f in fields(section):
            if f.name == parts[1]:
                return f.type
    return None


def _value_fits(value: Any, field_type) -> bool:
    type_name = str(field_type)
    if isinstance(value, bool):
        return "bool" in type_name
    if isinstance(value, int):
        return "int" in type_name or "float" in type_name
    if isinstance(value, float):
        return "float" in type_name
    if isinstance(value, str):
        return "str" in type_name
    return False


def _apply(spec: RunSpec, path: str, value: Any) -> RunSpec:
    parts = path.split(".")
    if len(parts) == 1:
        return replace(spec, **{parts[0]: value})
    section = getattr(spec, parts[0])
    return replace(spec, **{parts[0]: replace(section, **{parts[1]: value})})


def expand_with_values(sweep: SweepSpec) -> list[tuple[RunSpec, dict[str, Any]]]:
    """Cross-product expansion; first declared parameter varies slowest.

    Combination k gets name suffix _k, output subdirectory run_k, and a
    master seed derived under the reserved sweep stream tag so runs are
    decorrelated from each other and from every per-task stream.
    """
    paths = [p for p, _ in sweep.ranges]
    value_lists = [vs for _, vs in sweep.ranges]
    out = []
    for k, combo in enumerate(itertools.product(*value_lists)):
        spec = sweep.base
        chosen = {}
        for path, value in zip(paths, combo):
            spec = _apply(spec, path, value)
            chosen[path] = value
        spec = replace(
            spec,
            name=f"{sweep.base.name}_{k}",
            output_location=str(Path(sweep.base.output_location) / f"run_{k}"),
            master_seed=derive_task_seed(sweep.base.master_seed, SWEEP_SEED_TAG, k),
        )
        out.append((spec, chosen))
    return out


def expand(sweep: SweepSpec) -> list[RunSpec]:
    return [spec for spec, _ in expand_with_values(sweep)]


def run_sweep(
    sweep: SweepSpec,
    platform_factory: Callable[[RunSpec, int], Any],
    connector_factory: Callable[[RunSpec], Any],
    catalog=None,
    filters=None,
) -> list[RunReport]:
    """Execute every combination; one failure never stops the rest.

    Writes sweep_summary.json (combination index, swept values, final
    stage, best cost) into the base output location and returns the
    reports in combination order.
    """
    combos = expand_with_values(sweep)
    reports: list[RunReport] = []
    summary = []
    for k, (spec, values) in enumerate(combos):
        try:
            report = run(
                spec,
                platform_factory(spec, k),
                connector_factory(spec),
                catalog=catalog,
                filters=filters,
            )
        except Exception:
            log.exception("combination %d (%s) raised; recording as Failed", k, spec.name)
            report = RunReport(
                spec_name=spec.name,
                final_stage=StageState(Stage.FAILED, 0),
                iterations_executed=0,
                tasks=(),
                vm_events=(),
                converged=False,
                best_metric=None,
                output_manifest=(),
            )
        reports.append(report)
        summary.append(
            {
                "combination": k,
                "values": values,
                "final_stage": report.final_stage.stage.value,
                "best_cost": report.best_metric,
            }
        )
    base_dir = Path(sweep.base.output_location)
    base_dir.mkdir(parents=True, exist_ok=True)
    (base_dir / "sweep_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    return reports
