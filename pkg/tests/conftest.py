import json
from pathlib import Path

import pytest

from kiln.model import (
    ComputeSpec,
    PayloadParams,
    PlatformKind,
    ReliabilitySpec,
    RunSpec,
)

REPO_ROOT = Path(__file__).resolve().parent.parent


def make_spec(out_dir, **overrides) -> RunSpec:
    """A small, fast run spec for engine-level tests."""
    base = dict(
        name="t",
        platform=PlatformKind.SIMULATED_CLOUD,
        compute=ComputeSpec(desired_vms=2, minimal_vms=1, tasks_per_burst=2),
        reliability=ReliabilitySpec(max_retries=1, reschedule_failed=True),
        payload=PayloadParams(n_points=6, steps=10, bins=8, max_iterations=2),
        output_location=str(out_dir),
        curate=False,
        master_seed=42,
    )
    base.update(overrides)
    return RunSpec(**base)


def make_raw_spec(out_dir, **overrides) -> dict:
    """A valid raw spec document, as parsed from a file."""
    raw = {
        "name": "t",
        "platform": "simulated-cloud",
        "compute": {"desired_vms": 2, "minimal_vms": 1, "tasks_per_burst": 2},
        "reliability": {"max_retries": 1, "reschedule_failed": True},
        "payload": {"n_points": 6, "steps": 10, "bins": 8, "max_iterations": 2},
        "output_location": str(out_dir),
        "curate": False,
        "master_seed": 42,
    }
    raw.update(overrides)
    return raw


@pytest.fixture
def demo_spec_doc():
    return json.loads((REPO_ROOT / "demo" / "run_demo.json").read_text())
