"""kiln: fault-tolerant orchestration of iterative Monte Carlo bursts.

Runs declarative connector specs over pluggable compute backends (a
deterministic fault-injecting simulated cloud, or a plain local-process
executor), expands parameter sweeps, and curates run outputs into a
checksummed, searchable catalog with automatic plot emission.
"""

from .connector import (
    AnnealingSchedule,
    BurstInput,
    ConvergenceCriterion,
    MonteCarloConnector,
    ReducedResult,
)
from .curation import Catalog, DatasetManifest, MetadataFilter, register_filter
from .hrmc import Configuration, CostBreakdown, PairHistogram
from .model import (
    ComputeSpec,
    PayloadParams,
    PlatformKind,
    ReliabilitySpec,
    RunSpec,
    SpecValidationError,
    Stage,
    StageState,
    TaskRecord,
    stage_transition,
    validate_run_spec,
)
from .platforms import FaultModel, LocalProcess, SimulatedCloud, VmHandle
from .rng import derive_task_seed, splitmix64
from .scheduler import RunReport, run
from .sweep import SweepSpec, expand, parse_sweep_document, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AnnealingSchedule",
    "BurstInput",
    "Catalog",
    "ComputeSpec",
    "Configuration",
    "ConvergenceCriterion",
    "CostBreakdown",
    "DatasetManifest",
    "FaultModel",
    "LocalProcess",
    "MetadataFilter",
    "MonteCarloConnector",
    "PairHistogram",
    "PayloadParams",
    "PlatformKind",
    "ReducedResult",
    "ReliabilitySpec",
    "RunReport",
    "RunSpec",
    "SimulatedCloud",
    "SpecValidationError",
    "Stage",
    "StageState",
    "SweepSpec",
    "TaskRecord",
    "VmHandle",
    "derive_task_seed",
    "expand",
    "parse_sweep_document",
    "register_filter",
    "run",
    "run_sweep",
    "splitmix64",
    "stage_transition",
    "validate_run_spec",
]
