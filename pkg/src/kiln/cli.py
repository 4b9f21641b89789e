"""The kiln command line: validate, submit, sweep, datasets.

stdout carries only the machine-parseable results (ids, stages, metrics);
everything diagnostic goes to stderr. Exit codes are part of the
contract: 0 success, 1 run failed, 2 validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import replace
from pathlib import Path

from .connector import MonteCarloConnector
from .curation import Catalog, UnknownOperatorError
from .model import PlatformKind, Stage, SpecValidationError, ValidationIssue, validate_run_spec
from .platforms import FaultModel, make_platform
from .scheduler import run
from .sweep import parse_sweep_document, run_sweep

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_VALIDATION = 2
EXIT_IO = 3

_PREDICATE_RE = re.compile(r"^([A-Za-z0-9_.\-]+)(=|<|>)(.*)$")


class _IoFailure(Exception):
    pass


def _load_json(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise _IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecValidationError(
            [ValidationIssue(path, f"not valid JSON: {exc}")]
        ) from exc


def cmd_validate(args) -> int:
    try:
        raw = _load_json(args.spec)
        validate_run_spec(raw)
    except _IoFailure as exc:
        print(exc, file=sys.stderr)
        return EXIT_IO
    except SpecValidationError as exc:
        for issue in exc.issues:
            print(issue)
        return EXIT_VALIDATION
    print("OK")
    return EXIT_OK


def cmd_submit(args) -> int:
    try:
        raw = _load_json(args.spec)
        spec = validate_run_spec(raw)
    except _IoFailure as exc:
        print(exc, file=sys.stderr)
        return EXIT_IO
    except SpecValidationError as exc:
        for issue in exc.issues:
            print(issue, file=sys.stderr)
        return EXIT_VALIDATION
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed)

    try:
        fault_model = _fault_model_from_args(args)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    if fault_model is not None and spec.platform is PlatformKind.LOCAL_PROCESS:
        print("fault injection flags need the simulated-cloud platform", file=sys.stderr)
        return EXIT_VALIDATION

    catalog = Catalog(args.catalog) if spec.curate else None
    try:
        report = run(
            spec,
            make_platform(spec.platform, fault_model),
            MonteCarloConnector(spec),
            catalog=catalog,
        )
        if catalog is not None and report.iterations_executed > 0:
            catalog.emit_plots(spec.name)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    best = "none" if report.best_metric is None else repr(report.best_metric)
    print(f"{report.final_stage.stage.value} {best}")
    return EXIT_OK if report.final_stage.stage is Stage.COMPLETE else EXIT_RUN_FAILED


def cmd_sweep(args) -> int:
    try:
        raw = _load_json(args.sweepfile)
        sweep = parse_sweep_document(raw)
    except _IoFailure as exc:
        print(exc, file=sys.stderr)
        return EXIT_IO
    except SpecValidationError as exc:
        for issue in exc.issues:
            print(issue, file=sys.stderr)
        return EXIT_VALIDATION
    if args.seed is not None:
        sweep = replace(sweep, base=replace(sweep.base, master_seed=args.seed))

    catalog = Catalog(args.catalog) if sweep.base.curate else None
    try:
        reports = run_sweep(
            sweep,
            platform_factory=lambda spec, k: make_platform(spec.platform),
            connector_factory=MonteCarloConnector,
            catalog=catalog,
        )
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    all_complete = True
    for k, report in enumerate(reports):
        best = "none" if report.best_metric is None else repr(report.best_metric)
        print(f"{k} {report.final_stage.stage.value} {best}")
        if report.final_stage.stage is not Stage.COMPLETE:
            all_complete = False
    return EXIT_OK if all_complete else EXIT_RUN_FAILED


def _fault_model_from_args(args) -> FaultModel | None:
    """Build the injected-fault model from submit flags; None when unset."""
    values = (
        args.fault_provision,
        args.fault_crash,
        args.fault_vm_loss,
        args.fault_transfer,
    )
    if all(v is None for v in values) and args.fault_seed is None:
        return None
    return FaultModel(
        p_provision_fail=args.fault_provision or 0.0,
        p_task_crash=args.fault_crash or 0.0,
        p_vm_loss_per_burst=args.fault_vm_loss or 0.0,
        p_transfer_timeout=args.fault_transfer or 0.0,
        fault_seed=args.fault_seed or 0,
    )


def _parse_predicate(text: str):
    m = _PREDICATE_RE.match(text)
    if not m or not m.group(3):
        raise ValueError(f"bad predicate {text!r}; expected key=value, key<value or key>value")
    key, op, raw_value = m.groups()
    value: object = raw_value
    try:
        value = int(raw_value)
    except ValueError:
        try:
            value = float(raw_value)
        except ValueError:
            pass
    return key, op, value


def cmd_datasets(args) -> int:
    catalog = Catalog(args.catalog)
    if args.datasets_cmd == "list":
        for dataset_id in catalog.dataset_ids():
            print(dataset_id)
        return EXIT_OK
    try:
        query = [_parse_predicate(p) for p in args.predicates]
        matches = catalog.search(query)
    except (ValueError, UnknownOperatorError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    for dataset_id in matches:
        print(dataset_id)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kiln",
        description="Run, sweep, and catalog fault-tolerant Monte Carlo bursts.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_validate = sub.add_parser("validate", help="check a run spec file")
    p_validate.add_argument("spec")
    p_validate.set_defaults(fn=cmd_validate)

    p_submit = sub.add_parser("submit", help="execute a run spec end to end")
    p_submit.add_argument("spec")
    p_submit.add_argument("--catalog", default="./catalog")
    p_submit.add_argument("--seed", type=int, default=None, help="override master_seed")
    fault = p_submit.add_argument_group(
        "fault injection (simulated-cloud platform only)"
    )
    fault.add_argument("--fault-provision", type=float, default=None, metavar="P")
    fault.add_argument("--fault-crash", type=float, default=None, metavar="P")
    fault.add_argument("--fault-vm-loss", type=float, default=None, metavar="P")
    fault.add_argument("--fault-transfer", type=float, default=None, metavar="P")
    fault.add_argument("--fault-seed", type=int, default=None, metavar="U64")
    p_submit.set_defaults(fn=cmd_submit)

    p_sweep = sub.add_parser("sweep", help="expand and run a parameter sweep")
    p_sweep.add_argument("sweepfile")
    p_sweep.add_argument("--catalog", default="./catalog")
    p_sweep.add_argument("--seed", type=int, default=None, help="override base master_seed")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_data = sub.add_parser("datasets", help="query the curation catalog")
    p_data.add_argument("--catalog", default="./catalog")
    data_sub = p_data.add_subparsers(dest="datasets_cmd", required=True)
    p_list = data_sub.add_parser("list", help="print every dataset id")
    p_list.set_defaults(fn=cmd_datasets)
    p_search = data_sub.add_parser("search", help="filter datasets by metadata")
    p_search.add_argument("predicates", nargs="+", metavar="KEY(=|<|>)VALUE")
    p_search.set_defaults(fn=cmd_datasets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
