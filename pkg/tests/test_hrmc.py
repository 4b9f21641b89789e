"""Payload physics checks against brute-force oracles.

The oracles are deliberately plain double loops over pairs, independent of
the vectorized implementation path they verify.
"""

import math

import pytest

from kiln.hrmc import (
    Configuration,
    PairHistogram,
    cost,
    energy,
    make_instance,
    metropolis_step,
    pair_histogram,
    random_configuration,
    run_chain,
)
from kiln.model import ContractViolationError
from kiln.rng import Stream


def brute_force_histogram(points, bins, r_max):
    counts = [0] * bins
    bw = r_max / bins
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dx = points[i][0] - points[j][0]
            dy = points[i][1] - points[j][1]
            r = math.sqrt(dx * dx + dy * dy)
            if r < r_max:
                counts[min(int(r // bw), bins - 1)] += 1
    return counts


def brute_force_energy(points, r0, r_floor):
    total = 0.0
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            dx = points[i][0] - points[j][0]
            dy = points[i][1] - points[j][1]
            r = math.sqrt(dx * dx + dy * dy)
            total += (r0 / max(r, r_floor)) ** 12
    return total


class TestPairHistogram:
    def test_two_points_known_bin(self):
        config = Configuration(((0.0, 0.0), (0.5, 0.0)))
        hist = pair_histogram(config, bins=8, r_max=1.0)
        assert hist.bins == (0, 0, 0, 0, 1, 0, 0, 0)  # 0.5 / 0.125 = bin 4

    def test_single_point_all_zero(self):
        hist = pair_histogram(Configuration(((0.3, 0.3),)), bins=8, r_max=1.0)
        assert hist.bins == (0,) * 8
        assert sum(hist.bins) == 0

    def test_matches_brute_force_on_random_configs(self):
        stream = Stream(123)
        for _ in range(100):
            config = random_configuration(16, stream)
            hist = pair_histogram(config, bins=16, r_max=1.5)
            assert list(hist.bins) == brute_force_histogram(config.points, 16, 1.5)

    def test_count_conservation_when_r_max_covers_box(self):
        stream = Stream(7)
        for r_max in (1.5, math.sqrt(2)):
            for _ in range(20):
                config = random_configuration(16, stream)
                hist = pair_histogram(config, bins=12, r_max=r_max)
                assert sum(hist.bins) == 16 * 15 // 2

    def test_pairs_at_or_beyond_r_max_dropped(self):
        config = Configuration(((0.0, 0.0), (1.0, 0.0)))
        hist = pair_histogram(config, bins=4, r_max=1.0)
        assert sum(hist.bins) == 0  # r == r_max falls outside the last bin


class TestEnergy:
    def test_single_point_zero(self):
        assert energy(Configuration(((0.1, 0.9),)), r0=0.1, r_floor=1e-3) == 0.0

    def test_pair_at_r0_is_one(self):
        config = Configuration(((0.0, 0.0), (0.1, 0.0)))
        assert energy(config, r0=0.1, r_floor=1e-3) == pytest.approx(1.0)

    def test_coincident_points_clamped_finite(self):
        config = Configuration(((0.5, 0.5), (0.5, 0.5)))
        e = energy(config, r0=0.1, r_floor=1e-3)
        assert e == pytest.approx((0.1 / 1e-3) ** 12)
        assert math.isfinite(e)

    def test_matches_brute_force(self):
        stream = Stream(55)
        for _ in range(50):
            config = random_configuration(10, stream)
            assert energy(config, 0.1, 1e-3) == pytest.approx(
                brute_force_energy(config.points, 0.1, 1e-3), rel=1e-12
            )

    def test_permutation_invariant(self):
        stream = Stream(8)
        config = random_configuration(8, stream)
        shuffled = Configuration(tuple(reversed(config.points)))
        assert energy(config, 0.1, 1e-3) == pytest.approx(
            energy(shuffled, 0.1, 1e-3), rel=1e-12
        )


class TestCost:
    def test_self_consistency_zero(self):
        stream = Stream(2)
        for _ in range(20):
            config = random_configuration(12, stream)
            target = pair_histogram(config, 16, 1.5)
            bd = cost(config, target, 16, 1.5, weight=0.0, r0=0.1, r_floor=1e-3)
            assert bd.total == 0.0 and bd.chi2 == 0.0

    def test_weight_zero_is_chi2(self):
        stream = Stream(3)
        config = random_configuration(12, stream)
        target = pair_histogram(random_configuration(12, stream), 16, 1.5)
        bd = cost(config, target, 16, 1.5, weight=0.0, r0=0.1, r_floor=1e-3)
        assert bd.total == bd.chi2

    def test_matches_independent_recomputation(self):
        stream = Stream(4)
        target_config = random_configuration(16, stream)
        target = pair_histogram(target_config, 16, 1.5)
        for _ in range(25):
            config = random_configuration(16, stream)
            bd = cost(config, target, 16, 1.5, weight=0.37, r0=0.1, r_floor=1e-3)
            hist = brute_force_histogram(config.points, 16, 1.5)
            chi2 = sum(
                (h - t) ** 2 / max(t, 1) for h, t in zip(hist, target.bins)
            )
            e = brute_force_energy(config.points, 0.1, 1e-3)
            assert bd.chi2 == pytest.approx(chi2, rel=1e-12)
            assert bd.energy == pytest.approx(e, rel=1e-12)
            assert bd.total == pytest.approx(chi2 + 0.37 * e, rel=1e-12)

    def test_bin_mismatch_rejected(self):
        config = Configuration(((0.1, 0.1), (0.9, 0.9)))
        target = PairHistogram(bins=(0,) * 8, r_max=1.0)
        with pytest.raises(ContractViolationError):
            cost(config, target, 16, 1.0, 0.0, 0.1, 1e-3)


class TestMetropolisStep:
    def test_downhill_always_accepted(self):
        stream = Stream(10)
        config = random_configuration(4, stream)
        new, accepted = metropolis_step(
            config, lambda c: 0.0, temperature=1e-12, sigma=0.01, stream=stream
        )
        assert accepted  # delta == 0 <= 0

    def test_uphill_tiny_temperature_rejected(self):
        stream = Stream(11)
        initial = random_configuration(4, stream)
        cost_fn = lambda c: 0.0 if c is initial else 1.0
        new, accepted = metropolis_step(
            initial, cost_fn, temperature=1e-300, sigma=0.01, stream=stream
        )
        assert not accepted
        assert new is initial

    def test_acceptance_frequency_matches_closed_form(self):
        # delta/T = 1 constantly: long-run acceptance must sit at e^-1
        stream = Stream(20_24)
        initial = random_configuration(4, stream)
        cost_fn = lambda c: 0.0 if c is initial else 1.0
        trials = 100_000
        accepted = 0
        for _ in range(trials):
            _, ok = metropolis_step(
                initial, cost_fn, temperature=1.0, sigma=0.05, stream=stream,
                current_cost=0.0,
            )
            accepted += ok
        assert abs(accepted / trials - math.exp(-1)) < 0.02

    def test_huge_temperature_accepts_nearly_everything(self):
        stream = Stream(2025)
        initial = random_configuration(4, stream)
        cost_fn = lambda c: 0.0 if c is initial else 1.0
        accepted = sum(
            metropolis_step(
                initial, cost_fn, temperature=1e9, sigma=0.05, stream=stream,
                current_cost=0.0,
            )[1]
            for _ in range(10_000)
        )
        assert accepted >= 9_900

    def test_draw_order_and_conditional_acceptance_draw(self):
        # constant cost: delta = 0, no acceptance draw -> 3 draws per step
        stream = Stream(1)
        config = random_configuration(4, stream)
        base = stream.draws
        metropolis_step(config, lambda c: 1.0, 1.0, 0.05, stream)
        assert stream.draws - base == 3

        # strictly uphill: acceptance draw consumed -> 4 draws
        stream2 = Stream(1)
        config2 = random_configuration(4, stream2)
        base2 = stream2.draws
        cost_fn = lambda c: 0.0 if c is config2 else 5.0
        metropolis_step(config2, cost_fn, 1.0, 0.05, stream2, current_cost=0.0)
        assert stream2.draws - base2 == 4

    def test_moves_stay_in_unit_box(self):
        stream = Stream(44)
        config = Configuration(((0.0, 0.0), (1.0, 1.0)))
        for _ in range(500):
            config, _ = metropolis_step(config, lambda c: 0.0, 1.0, 0.5, stream)
            for x, y in config.points:
                assert 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0


class TestRunChain:
    def _cost_fn(self, seed=5):
        stream = Stream(seed)
        target = pair_histogram(random_configuration(8, stream), 8, 1.5)
        return lambda c: cost(c, target, 8, 1.5, 0.1, 0.1, 1e-3).total

    def test_same_seed_identical_results(self):
        stream = Stream(6)
        initial = random_configuration(8, stream)
        cost_fn = self._cost_fn()
        a = run_chain(initial, 0.5, 200, seed=42, cost_fn=cost_fn, sigma=0.05)
        b = run_chain(initial, 0.5, 200, seed=42, cost_fn=cost_fn, sigma=0.05)
        assert a == b

    def test_best_never_worse_than_initial(self):
        stream = Stream(17)
        cost_fn = self._cost_fn()
        for seed in range(25):
            initial = random_configuration(8, stream)
            _, best_cost, _ = run_chain(initial, 1.0, 50, seed, cost_fn, 0.08)
            assert best_cost <= cost_fn(initial)

    def test_single_step_forced_rejection_keeps_initial(self):
        stream = Stream(9)
        initial = random_configuration(4, stream)
        cost_fn = lambda c: 0.0 if c is initial else 100.0
        best, best_cost, trace = run_chain(
            initial, 1e-300, 1, seed=3, cost_fn=cost_fn, sigma=0.01
        )
        assert best is initial
        assert best_cost == 0.0
        assert trace == [(0, 0.0)]

    def test_best_cost_trace_non_increasing(self):
        stream = Stream(23)
        initial = random_configuration(8, stream)
        cost_fn = self._cost_fn()
        _, _, trace = run_chain(initial, 0.8, 300, seed=11, cost_fn=cost_fn, sigma=0.05)
        running_best = float("inf")
        bests = []
        for _, c in trace:
            running_best = min(running_best, c)
            bests.append(running_best)
        assert bests == sorted(bests, reverse=True)


class TestInstance:
    def test_hidden_target_admits_zero_misfit(self):
        target, initial = make_instance(16, 16, 1.5, instance_seed=7, master_seed=42)
        reference = random_configuration(16, Stream(7))
        bd = cost(reference, target, 16, 1.5, weight=0.0, r0=0.1, r_floor=1e-3)
        assert bd.total == 0.0

    def test_initial_config_independent_of_instance(self):
        target, initial = make_instance(16, 16, 1.5, instance_seed=7, master_seed=42)
        reference = random_configuration(16, Stream(7))
        assert initial.points != reference.points
        # different master seeds move the start, not the target
        target2, initial2 = make_instance(16, 16, 1.5, instance_seed=7, master_seed=43)
        assert target2 == target
        assert initial2.points != initial.points
