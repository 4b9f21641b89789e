"""Desk-scale structure-fitting payload: match a target pair-distance
histogram while penalizing crowded arrangements.

This is an analogue of hybrid reverse Monte Carlo structure refinement,
not the real materials-science method: 2-D points in a unit box stand in
for atomic coordinates, the target histogram stands in for experimental
diffraction/porosity data, and a soft-core inverse-power term stands in
for the bonding energy. The compute shape (chi-square fit plus energy
penalty, Metropolis acceptance, per-task annealing temperatures) is what
matters here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ContractViolationError
from .rng import INITIAL_CONFIG_TAG, Stream, derive_task_seed


@dataclass(frozen=True)
class Configuration:
    """A fixed-size set of 2-D points, each coordinate in [0, 1]."""

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for x, y in self.points:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ValueError(f"point ({x}, {y}) outside the unit box")


@dataclass(frozen=True)
class PairHistogram:
    bins: tuple[int, ...]
    r_max: float

    @property
    def bin_width(self) -> float:
        return self.r_max / len(self.bins)


@dataclass(frozen=True)
class CostBreakdown:
    chi2: float
    energy: float
    weight: float

    @property
    def total(self) -> float:
        return self.chi2 + self.weight * self.energy


_TRIU_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    cached = _TRIU_CACHE.get(n)
    if cached is None:
        cached = _TRIU_CACHE[n] = np.triu_indices(n, k=1)
    return cached


def _pair_distances(config: Configuration) -> np.ndarray:
    """All unordered pair distances, ordered (0,1), (0,2), ..., (n-2,n-1)."""
    pts = np.asarray(config.points, dtype=np.float64)
    n = len(config.points)
    if n < 2:
        return np.empty(0, dtype=np.float64)
    i, j = _pair_indices(n)
    diff = pts[i] - pts[j]
    return np.sqrt((diff * diff).sum(axis=1))


def _bin_counts(r: np.ndarray, bins: int, r_max: float) -> np.ndarray:
    bin_width = r_max / bins
    kept = r[r < r_max]
    idx = (kept / bin_width).astype(np.int64)
    # exact-boundary float rounding guard; a kept distance always bins < bins
    idx = np.minimum(idx, bins - 1)
    return np.bincount(idx, minlength=bins)


def pair_histogram(config: Configuration, bins: int, r_max: float) -> PairHistogram:
    """Histogram of unordered pair distances with half-open bins [lo, hi).

    Bin index is floor(r / bin_width); distances at or beyond r_max are
    dropped. With r_max >= sqrt(2) no unit-box pair can be dropped, so the
    counts sum to n(n-1)/2.
    """
    counts = _bin_counts(_pair_distances(config), bins, r_max)
    return PairHistogram(bins=tuple(int(c) for c in counts), r_max=r_max)


def energy(config: Configuration, r0: float, r_floor: float) -> float:
    """Soft-core repulsion: sum over pairs of (r0 / max(r, r_floor))^12."""
    r = _pair_distances(config)
    if r.size == 0:
        return 0.0
    return float(((r0 / np.maximum(r, r_floor)) ** 12).sum())


def cost(
    config: Configuration,
    target: PairHistogram,
    bins: int,
    r_max: float,
    weight: float,
    r0: float,
    r_floor: float,
) -> CostBreakdown:
    """Chi-square misfit against the target histogram plus weighted energy.

    chi2 = sum_b (h_b - t_b)^2 / max(t_b, 1); the max keeps empty target
    bins from dividing by zero.
    """
    if len(target.bins) != bins or target.r_max != r_max:
        raise ContractViolationError(
            f"target histogram built with ({len(target.bins)}, {target.r_max}), "
            f"cost called with ({bins}, {r_max})"
        )
    r = _pair_distances(config)
    counts = _bin_counts(r, bins, r_max)
    t = np.asarray(target.bins, dtype=np.float64)
    chi2 = float(((counts - t) ** 2 / np.maximum(t, 1.0)).sum())
    if r.size == 0:
        e = 0.0
    else:
        e = float(((r0 / np.maximum(r, r_floor)) ** 12).sum())
    return CostBreakdown(chi2=chi2, energy=e, weight=weight)


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


def _metropolis_move(
    config: Configuration,
    cost_fn: Callable[[Configuration], float],
    temperature: float,
    sigma: float,
    stream: Stream,
    current_cost: float,
) -> tuple[Configuration, bool, float]:
    n = len(config.points)
    i = stream.next_index(n)
    gx, gy = stream.next_gaussian_pair()
    x, y = config.points[i]
    moved = (_clamp01(x + gx * sigma), _clamp01(y + gy * sigma))
    candidate = Configuration(config.points[:i] + (moved,) + config.points[i + 1 :])
    candidate_cost = cost_fn(candidate)
    delta = candidate_cost - current_cost
    if delta <= 0.0:
        return candidate, True, candidate_cost
    if stream.next_float() < math.exp(-delta / temperature):
        return candidate, True, candidate_cost
    return config, False, current_cost


def metropolis_step(
    config: Configuration,
    cost_fn: Callable[[Configuration], float],
    temperature: float,
    sigma: float,
    stream: Stream,
    current_cost: float | None = None,
) -> tuple[Configuration, bool]:
    """One Metropolis move: displace one point, accept or roll back.

    Draw order is fixed: point index, then one Gaussian pair (both
    coordinates move), then the acceptance uniform, which is consumed only
    when the cost increased. Moves are clamped to the unit box. Pass
    current_cost to skip re-evaluating the incumbent.
    """
    old = cost_fn(config) if current_cost is None else current_cost
    moved, accepted, _ = _metropolis_move(
        config, cost_fn, temperature, sigma, stream, old
    )
    return moved, accepted


def run_chain(
    initial: Configuration,
    temperature: float,
    steps: int,
    seed: int,
    cost_fn: Callable[[Configuration], float],
    sigma: float,
) -> tuple[Configuration, float, list[tuple[int, float]]]:
    """Run a Metropolis chain and keep the best-ever configuration.

    The chain draws from a fresh stream seeded by ``seed``. Returns the
    best configuration seen (not the last), its cost, and the trace of the
    chain's current cost after each step.
    """
    if steps < 1:
        raise ContractViolationError("run_chain needs steps >= 1")
    stream = Stream(seed)
    current = initial
    current_cost = cost_fn(initial)
    best, best_cost = current, current_cost
    trace: list[tuple[int, float]] = []
    for step in range(steps):
        current, _, current_cost = _metropolis_move(
            current, cost_fn, temperature, sigma, stream, current_cost
        )
        if current_cost < best_cost:
            best, best_cost = current, current_cost
        trace.append((step, current_cost))
    return best, best_cost, trace


# ---------------------------------------------------------------------------
# Problem instances and the per-task payload


def random_configuration(n_points: int, stream: Stream) -> Configuration:
    """n_points uniform points; draw order x0, y0, x1, y1, ..."""
    pts = []
    for _ in range(n_points):
        x = stream.next_float()
        y = stream.next_float()
        pts.append((x, y))
    return Configuration(tuple(pts))


def make_instance(
    n_points: int, bins: int, r_max: float, instance_seed: int, master_seed: int
) -> tuple[PairHistogram, Configuration]:
    """Build a hidden-target problem instance.

    The target histogram is taken from a reference configuration sampled
    from the instance_seed stream, so a zero-misfit solution is known to
    exist. Chains start from an independent random configuration derived
    from the run's master seed under a reserved stream tag; the reference
    itself is never handed to the solver.
    """
    reference = random_configuration(n_points, Stream(instance_seed))
    target = pair_histogram(reference, bins, r_max)
    init_seed = derive_task_seed(master_seed, INITIAL_CONFIG_TAG, 0)
    initial = random_configuration(n_points, Stream(init_seed))
    return target, initial


def run_payload_task(
    task_index: int,
    seed: int,
    temperature: float,
    steps: int,
    incumbent: Configuration,
    target: PairHistogram,
    bins: int,
    r_max: float,
    weight: float,
    r0: float,
    r_floor: float,
    sigma: float,
) -> dict:
    """Run one task chain and assemble its output document.

    The document schema is the task wire format consumed by the reducer,
    the curation filter, and the plot emitters.
    """
    def total_cost(c: Configuration) -> float:
        return cost(c, target, bins, r_max, weight, r0, r_floor).total

    best, best_cost, trace = run_chain(
        incumbent, temperature, steps, seed, total_cost, sigma
    )
    breakdown = cost(best, target, bins, r_max, weight, r0, r_floor)
    return {
        "task_index": task_index,
        "seed": seed,
        "temperature": temperature,
        "best_cost": breakdown.total,
        "chi2": breakdown.chi2,
        "energy": breakdown.energy,
        "best_points": [[x, y] for x, y in best.points],
        "trace": [[step, c] for step, c in trace],
    }
